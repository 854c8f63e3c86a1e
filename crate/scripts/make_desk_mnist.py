#!/usr/bin/env python3
"""Build the desk-scale MNIST subset used by the experiments.

The `mnist` npm package bundles 10,000 MNIST digits as JSON arrays of
pixel intensities rounded to three decimals. This script recovers the
original bytes, shuffles with a fixed seed, and writes standard IDX files:

    data/mnist-desk/train-images-idx3-ubyte   (8000 images)
    data/mnist-desk/train-labels-idx1-ubyte
    data/mnist-desk/t10k-images-idx3-ubyte    (2000 images)
    data/mnist-desk/t10k-labels-idx1-ubyte

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/make_desk_mnist.py package/src/digits data/mnist-desk
"""

import json
import os
import random
import struct
import sys

SIDE = 28
TRAIN_COUNT = 8000
SEED = 20160101


def load_digits(digits_dir):
    samples = []
    for label in range(10):
        with open(os.path.join(digits_dir, f"{label}.json")) as fh:
            flat = json.load(fh)["data"]
        n = len(flat) // (SIDE * SIDE)
        for k in range(n):
            chunk = flat[k * SIDE * SIDE:(k + 1) * SIDE * SIDE]
            pixels = bytes(min(255, max(0, round(v * 255))) for v in chunk)
            samples.append((pixels, label))
    return samples


def write_idx(out_dir, prefix, samples):
    with open(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for pixels, _ in samples:
            fh.write(pixels)
    with open(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(samples)))
        fh.write(bytes(label for _, label in samples))


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    digits_dir, out_dir = sys.argv[1], sys.argv[2]
    samples = load_digits(digits_dir)
    random.Random(SEED).shuffle(samples)
    os.makedirs(out_dir, exist_ok=True)
    write_idx(out_dir, "train", samples[:TRAIN_COUNT])
    write_idx(out_dir, "t10k", samples[TRAIN_COUNT:])
    print(f"wrote {TRAIN_COUNT} train / {len(samples) - TRAIN_COUNT} test images to {out_dir}")


if __name__ == "__main__":
    main()
