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
"""Exports the WordNet noun hierarchy as a convis lexicon (JSON lines).

One object per synset: {"id", "lemmas", "definition", "hypernyms"}.
Needs nltk and its wordnet corpus (python -m nltk.downloader wordnet).
"""

import argparse
import json
import sys

from nltk.corpus import wordnet as wn


def parents(s, instances):
    out = s.hypernyms()
    if instances:
        out = out + s.instance_hypernyms()
    return sorted({p.name() for p in out})


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-o", "--out", default="-", help="output file (default stdout)")
    ap.add_argument("--pos", default="n", help="part of speech (default n)")
    ap.add_argument("--instances", action="store_true",
                    help="keep instance synsets, linked by their instance hypernyms")
    args = ap.parse_args()

    out = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8")
    n = 0
    for s in wn.all_synsets(pos=args.pos):
        if not args.instances and s.instance_hypernyms() and not s.hypernyms():
            continue
        definition = s.definition().strip()
        if not definition:
            continue
        doc = {
            "id": s.name(),
            "lemmas": [l.name() for l in s.lemmas()],
            "definition": definition,
            "hypernyms": parents(s, args.instances),
        }
        out.write(json.dumps(doc, ensure_ascii=False) + "\n")
        n += 1
    if out is not sys.stdout:
        out.close()
    print(f"wrote {n} synsets", file=sys.stderr)


if __name__ == "__main__":
    main()
