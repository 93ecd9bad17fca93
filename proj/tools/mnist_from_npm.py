#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Convert the digit JSON files shipped in the `mnist` npm package into IDX files.

The package stores 10,000 MNIST digits as flat arrays of pixel/255 rounded to
three decimals, one file per class. Rounding is invertible for 8-bit pixels, so
the original bytes are recovered exactly. Output mirrors the upstream MNIST
layout: a train and a test pair of idx3/idx1 files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_from_npm.py package/src/digits data/mnist10k
"""
import argparse
import json
import random
import struct
from pathlib import Path


def load_digits(digit_dir):
    samples = []
    for label in range(10):
        flat = json.loads((Path(digit_dir) / f"{label}.json").read_text())["data"]
        if len(flat) % 784:
            raise SystemExit(f"{label}.json: {len(flat)} values is not a multiple of 784")
        for i in range(0, len(flat), 784):
            pixels = bytes(int(round(v * 255)) for v in flat[i:i + 784])
            samples.append((pixels, label))
    return samples


def write_idx(prefix, samples):
    with open(f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("digit_dir")
    parser.add_argument("out_dir")
    parser.add_argument("--test-count", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    samples = load_digits(args.digit_dir)
    random.Random(args.seed).shuffle(samples)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train", samples[:-args.test_count])
    write_idx(out / "t2k", samples[-args.test_count:])
    print(f"wrote {len(samples) - args.test_count} train / {args.test_count} test samples to {out}")


if __name__ == "__main__":
    main()
