#!/usr/bin/env python3
"""Convert the digit bundle shipped with the `mnist` npm package into IDX files.

The npm package (https://www.npmjs.com/package/mnist) carries 10,000 MNIST
digits as JSON arrays of normalized pixels.  This script splits them per class
(first 80% to train, remainder to test), shuffles each split with a fixed seed
and writes gzip-compressed IDX files with the standard MNIST names.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(raw) // (SIDE * SIDE)
        samples = []
        for i in range(n):
            px = raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            samples.append((bytes(min(255, max(0, round(v * 255))) for v in px), digit))
        cut = (n * 4) // 5
        train += samples[:cut]
        test += samples[cut:]
    rng = random.Random(20170707)
    rng.shuffle(train)
    rng.shuffle(test)
    for name, split in (("train", train), ("t10k", test)):
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 0x803, (len(split), SIDE, SIDE),
                  b"".join(p for p, _ in split))
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 0x801, (len(split),),
                  bytes(lbl for _, lbl in split))
        print(f"{name}: {len(split)} samples")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
