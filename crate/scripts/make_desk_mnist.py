#!/usr/bin/env python3
"""Build a small MNIST-format dataset from the digits bundled in the npm `mnist` package.

The npm package (https://www.npmjs.com/package/mnist, v1.1.0) ships 10,000 MNIST
digits as per-class JSON arrays of pixel/255 values rounded to three decimals.
This script recovers the 8-bit pixels, holds out the last 125 digits of every
class as the test partition and writes gzipped IDX files:

    train-images-idx3-ubyte.gz  train-labels-idx1-ubyte.gz
    t10k-images-idx3-ubyte.gz   t10k-labels-idx1-ubyte.gz

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/make_desk_mnist.py package/src/digits data/mnist-desk
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

HELD_OUT_PER_CLASS = 125
SIDE = 28


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    # mtime=0 keeps the archive bytes reproducible
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
        f.write(header + bytes(payload))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        pixels = [min(255, max(0, round(v * 255))) for v in flat]
        images = [pixels[i:i + SIDE * SIDE] for i in range(0, len(pixels), SIDE * SIDE)]
        train += [(img, digit) for img in images[:-HELD_OUT_PER_CLASS]]
        test += [(img, digit) for img in images[-HELD_OUT_PER_CLASS:]]
    rng = random.Random(0)
    rng.shuffle(train)
    rng.shuffle(test)
    for prefix, records in (("train", train), ("t10k", test)):
        images = [p for img, _ in records for p in img]
        labels = [label for _, label in records]
        write_idx(dst / f"{prefix}-images-idx3-ubyte.gz", 0x803, (len(records), SIDE, SIDE), images)
        write_idx(dst / f"{prefix}-labels-idx1-ubyte.gz", 0x801, (len(records),), labels)
        print(f"{prefix}: {len(records)} images")


if __name__ == "__main__":
    main(*sys.argv[1:3])
