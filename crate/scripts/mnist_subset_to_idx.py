#!/usr/bin/env python3
"""Convert the 10,000-digit MNIST subset shipped in the npm `mnist` package
into gzipped idx files (the format of the original MNIST distribution).

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_subset_to_idx.py package/src/digits data/mnist-subset

The package stores each pixel as byte/255 rounded to three decimals, which is
fine enough to recover the original byte exactly with round(v * 255).
"""
import gzip
import json
import os
import struct
import sys


def main(src, dst):
    images = bytearray()
    labels = bytearray()
    count = 0
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as fh:
            samples = json.load(fh)["data"]
        if len(samples) % 784 != 0:
            raise SystemExit(f"{digit}.json: length {len(samples)} is not a multiple of 784")
        for i in range(0, len(samples), 784):
            for v in samples[i:i + 784]:
                b = round(v * 255)
                if not 0 <= b <= 255:
                    raise SystemExit(f"pixel out of range: {v}")
                images.append(b)
            labels.append(digit)
            count += 1
    os.makedirs(dst, exist_ok=True)
    with gzip.GzipFile(os.path.join(dst, "images-idx3-ubyte.gz"), "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x803, count, 28, 28))
        fh.write(images)
    with gzip.GzipFile(os.path.join(dst, "labels-idx1-ubyte.gz"), "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x801, count))
        fh.write(labels)
    print(f"wrote {count} samples to {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
