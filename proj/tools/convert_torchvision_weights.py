#!/usr/bin/env python3
#
# Copyright 2026 The Habitat Classifier Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Converts torchvision DeepLabV3 weights into the .hwt container read by
build_classifier. The 21-class projection (classifier.4) and the auxiliary
head are dropped; the classifier attaches its own head.

    python3 tools/convert_torchvision_weights.py --out ~/.cache/habitat/weights
"""

import argparse
import json
import pathlib
import struct
import sys
import zlib

import numpy as np

MAGIC = b"HABWGT01"

BUILDERS = {
    "deeplabv3_resnet101": ("deeplabv3_resnet101", "DeepLabV3_ResNet101_Weights"),
    "deeplabv3_resnet50": ("deeplabv3_resnet50", "DeepLabV3_ResNet50_Weights"),
}


def keep(name):
    return not (name.startswith("aux_classifier.") or name.startswith("classifier.4."))


def write_hwt(path, tensors, meta):
    index, chunks, offset = [], [], 0
    for name, value in tensors:
        arr = np.ascontiguousarray(value, dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    payload = b"".join(chunks)
    header = json.dumps(
        {
            "format": 1,
            "meta": meta,
            "tensors": index,
            "payload_bytes": len(payload),
            "payload_crc32": zlib.crc32(payload),
        },
        separators=(",", ":"),
    ).encode()
    tmp = path.with_suffix(".hwt.tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(struct.pack("<I", zlib.crc32(header)))
        f.write(payload)
    tmp.replace(path)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--backbone", choices=sorted(BUILDERS), default="deeplabv3_resnet101")
    p.add_argument("--out", type=pathlib.Path, required=True, help="weights directory")
    p.add_argument("--random-init", action="store_true", help="skip the download (for format tests)")
    args = p.parse_args(argv)

    import torchvision.models.segmentation as seg

    fn_name, weights_name = BUILDERS[args.backbone]
    weights = None if args.random_init else getattr(seg, weights_name).DEFAULT
    model = getattr(seg, fn_name)(weights=weights, weights_backbone=None, aux_loss=None if weights else False)
    state = [(k, v.detach().cpu().numpy()) for k, v in model.state_dict().items() if keep(k)]

    args.out.mkdir(parents=True, exist_ok=True)
    dest = args.out / (args.backbone + ".hwt")
    meta = {"source": "torchvision", "weights": str(weights) if weights else "random"}
    write_hwt(dest, state, meta)
    print(f"wrote {dest} ({len(state)} tensors, {sum(v.size for _, v in state)} values)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
