#!/usr/bin/env python3
# Copyright 2026 The dishwx Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Convert torchvision ResNet50 weights into a dishwx tensor store (.dwt).

    python3 tools/export_resnet50_weights.py resnet50.dwt
    python3 tools/export_resnet50_weights.py resnet50.dwt --state-dict resnet50-11ad3fa6.pth

Without --state-dict the ImageNet weights are fetched through torchvision's
cache. Point DISHWX_WEIGHTS_CACHE at the output directory (file name
resnet50.dwt) or pass train.weights=<path>.
"""

import argparse
import struct

import numpy as np
import torch
import torchvision

MAGIC = b"DSHWXT01"


def load_state_dict(path):
    if path:
        return torch.load(path, map_location="cpu")
    weights = torchvision.models.ResNet50_Weights.IMAGENET1K_V1
    return torchvision.models.resnet50(weights=weights).state_dict()


def write_store(tensors, path):
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            encoded = name.encode()
            out.write(struct.pack("<I", len(encoded)))
            out.write(encoded)
            out.write(struct.pack("<I", arr.ndim))
            out.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            out.write(arr.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", help="output .dwt path")
    ap.add_argument("--state-dict", help="local torchvision resnet50 .pth file")
    args = ap.parse_args()
    state = load_state_dict(args.state_dict)
    # The classifier brings its own head; batch counters are not weights.
    tensors = {k: v.detach().float().numpy() for k, v in state.items()
               if not k.startswith("fc.") and not k.endswith("num_batches_tracked")}
    write_store(tensors, args.out)
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
