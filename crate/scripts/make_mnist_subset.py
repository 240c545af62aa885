#!/usr/bin/env python3
"""Build IDX files from the 10,000 MNIST digits bundled in the `mnist` npm package.

Usage: npm pack mnist && tar xzf mnist-*.tgz && python3 make_mnist_subset.py package/src/digits data/mnist

Writes a stratified split (100 test per class, the rest train, shuffled with a fixed
seed) as gzip-compressed IDX files with the standard MNIST file names.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + bytes(payload))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20231015)
    train, test = [], []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(raw) // 784
        images = [
            [min(255, max(0, round(v * 255))) for v in raw[i * 784:(i + 1) * 784]]
            for i in range(n)
        ]
        rng.shuffle(images)
        test += [(img, digit) for img in images[:100]]
        train += [(img, digit) for img in images[100:]]
    rng.shuffle(train)
    rng.shuffle(test)
    for name, split in (("train", train), ("t10k", test)):
        pixels = [p for img, _ in split for p in img]
        labels = [lbl for _, lbl in split]
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 2051, [len(split), 28, 28], pixels)
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 2049, [len(split)], labels)
        print(name, len(split))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
