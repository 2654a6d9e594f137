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
"""Concept saliency maps over a lexical hierarchy (C++ core via pybind11)."""

from ._convis import (
    BackendError,
    ConflictError,
    ConvisError,
    InvalidArgumentError,
    NotFoundError,
    ParseError,
    Pipeline,
    ValidationError,
    auroc,
    image_sha256,
    iou,
    load_image,
    max_box_acc,
    openness,
    patch_grid,
    read_cvis,
    render_overlay,
    save_png,
    write_cvis,
)

__all__ = [
    "BackendError",
    "ConflictError",
    "ConvisError",
    "InvalidArgumentError",
    "NotFoundError",
    "ParseError",
    "Pipeline",
    "ValidationError",
    "auroc",
    "image_sha256",
    "iou",
    "load_image",
    "max_box_acc",
    "openness",
    "patch_grid",
    "read_cvis",
    "render_overlay",
    "save_png",
    "write_cvis",
]

__version__ = "0.1.0"
