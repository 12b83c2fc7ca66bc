#!/usr/bin/env python3
"""Convert the 10k-digit MNIST subset shipped in the `mnist` npm package
(v1.1.0, src/digits/<d>.json) into gzipped IDX files.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_subset_to_idx.py package/src/digits data/mnist-10k

Pixels in the JSON are value/255 rounded to three decimals, so
round(v * 255) recovers the original byte. The 10000 digits are shuffled
with a fixed seed and split 8000 train / 2000 test.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    # mtime=0 keeps the archives byte-reproducible
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as f:
        f.write(header + payload)


def main(src, dst):
    src, dst = Path(src), Path(dst)
    samples = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        for i in range(len(flat) // 784):
            pix = bytes(min(255, max(0, round(v * 255))) for v in flat[i * 784 : (i + 1) * 784])
            samples.append((pix, digit))
    random.Random(20170414).shuffle(samples)
    dst.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", samples[:8000]), ("t10k", samples[8000:])):
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 0x803, (len(part), 28, 28), b"".join(p for p, _ in part))
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 0x801, (len(part),), bytes(l for _, l in part))
        counts = [sum(1 for _, l in part if l == d) for d in range(10)]
        print(name, len(part), counts)


if __name__ == "__main__":
    main(*sys.argv[1:3])
