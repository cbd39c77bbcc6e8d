#!/usr/bin/env python3
"""Convert the 10,000 digits bundled with the npm `mnist` package to IDX files.

The package ships one JSON file per digit (`src/digits/<d>.json`) holding
784 floats per image in [0, 1], rounded to three decimals; multiplying by 255
and rounding recovers the original bytes.

Images are interleaved by class and split per class: the last `--test-per-class`
images of every digit form the test files, the rest the training files.

usage: mnist_from_npm.py DIGITS_DIR OUT_DIR [--test-per-class 150]
"""
import argparse
import gzip
import json
import os
import struct

import numpy as np


def write_idx(path, array, magic):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for dim in array.shape:
            f.write(struct.pack(">I", dim))
        f.write(array.astype(np.uint8).tobytes())


def interleave(per_class):
    images, labels = [], []
    longest = max(len(v) for v in per_class)
    for i in range(longest):
        for digit, rows in enumerate(per_class):
            if i < len(rows):
                images.append(rows[i])
                labels.append(digit)
    return np.array(images, dtype=np.uint8).reshape(-1, 28, 28), np.array(labels, dtype=np.uint8)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test-per-class", type=int, default=150)
    args = ap.parse_args()

    train, test = [], []
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as f:
            flat = np.array(json.load(f)["data"], dtype=np.float64)
        rows = np.rint(flat.reshape(-1, 784) * 255.0).clip(0, 255).astype(np.uint8)
        k = args.test_per_class
        train.append(rows[:-k])
        test.append(rows[-k:])

    os.makedirs(args.out_dir, exist_ok=True)
    for name, part in (("train", train), ("t10k", test)):
        images, labels = interleave(part)
        write_idx(os.path.join(args.out_dir, f"{name}-images-idx3-ubyte.gz"), images, 2051)
        write_idx(os.path.join(args.out_dir, f"{name}-labels-idx1-ubyte.gz"), labels, 2049)
        print(name, images.shape[0], np.bincount(labels).tolist())


if __name__ == "__main__":
    main()
