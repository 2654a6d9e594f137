#!/usr/bin/env python3
# Copyright 2026 The ConVis Authors.
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Serves a CLIP checkpoint for the remote-service backend.

  POST /embed/text   {"texts": [...]}        -> {"vectors": [[...], ...]}
  POST /embed/image  {"images_b64": [...]}   -> {"vectors": [[...], ...]}
  GET  /health                               -> {"model": ..., "dimension": n}

Images arrive as base64 PNG/JPEG. Vectors are L2-normalised.
"""

import argparse
import base64
import io
import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import torch
from PIL import Image
from transformers import CLIPModel, CLIPProcessor

log = logging.getLogger("clip_server")


class Encoder:
    def __init__(self, name, device):
        self.name = name
        self.device = device
        self.model = CLIPModel.from_pretrained(name).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(name)
        self.dimension = self.model.config.projection_dim
        self.lock = threading.Lock()  # one forward pass at a time on the device

    @torch.no_grad()
    def text(self, texts):
        inputs = self.processor(text=texts, return_tensors="pt", padding=True, truncation=True)
        with self.lock:
            out = self.model.get_text_features(**{k: v.to(self.device) for k, v in inputs.items()})
        return self._rows(out)

    @torch.no_grad()
    def images(self, blobs):
        imgs = [Image.open(io.BytesIO(base64.b64decode(b))).convert("RGB") for b in blobs]
        inputs = self.processor(images=imgs, return_tensors="pt")
        with self.lock:
            out = self.model.get_image_features(pixel_values=inputs["pixel_values"].to(self.device))
        return self._rows(out)

    @staticmethod
    def _rows(t):
        t = torch.nn.functional.normalize(t.float(), dim=-1)
        return t.cpu().tolist()


def make_handler(encoder):
    class Handler(BaseHTTPRequestHandler):
        def _send(self, status, doc):
            body = json.dumps(doc).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/health":
                self._send(200, {"model": encoder.name, "dimension": encoder.dimension})
            else:
                self._send(404, {"error": "not found"})

        def do_POST(self):
            try:
                n = int(self.headers.get("Content-Length", "0"))
                doc = json.loads(self.rfile.read(n))
                if self.path == "/embed/text":
                    texts = doc["texts"]
                    if not all(isinstance(t, str) and t for t in texts):
                        raise ValueError("texts must be non-empty strings")
                    vectors = encoder.text(texts) if texts else []
                elif self.path == "/embed/image":
                    blobs = doc["images_b64"]
                    vectors = encoder.images(blobs) if blobs else []
                else:
                    self._send(404, {"error": "not found"})
                    return
            except (KeyError, ValueError, TypeError, OSError) as e:
                self._send(400, {"error": str(e)})
                return
            except Exception as e:  # model failure
                log.exception("embedding failed")
                self._send(500, {"error": str(e)})
                return
            self._send(200, {"vectors": vectors})

        def log_message(self, fmt, *args):
            log.debug(fmt, *args)

    return Handler


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--model", default="openai/clip-vit-base-patch32",
                    help="hub name or local checkpoint directory")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8700)
    ap.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")

    encoder = Encoder(args.model, args.device)
    server = ThreadingHTTPServer((args.host, args.port), make_handler(encoder))
    log.info("serving %s (d=%d) on http://%s:%d", args.model, encoder.dimension, args.host, args.port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
