#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package into gzipped IDX files.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist

Each class is split 85/15 (in file order) into a train and a test pair:
    train-images-idx3-ubyte.gz, train-labels-idx1-ubyte.gz,
    t10k-images-idx3-ubyte.gz, t10k-labels-idx1-ubyte.gz
Pixels are stored as round(v * 255) bytes.
"""
import gzip
import json
import os
import struct
import sys


def write_gz(path, payload):
    with open(path, "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
            gz.write(payload)


def idx_images(images):
    header = struct.pack(">IIII", 0x00000803, len(images), 28, 28)
    return header + b"".join(images)


def idx_labels(labels):
    return struct.pack(">II", 0x00000801, len(labels)) + bytes(labels)


def main(src, dst):
    os.makedirs(dst, exist_ok=True)
    splits = {"train": ([], []), "t10k": ([], [])}
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            data = json.load(f)["data"]
        count = len(data) // 784
        n_train = int(count * 0.85)
        for i in range(count):
            px = bytes(
                max(0, min(255, round(v * 255))) for v in data[i * 784 : (i + 1) * 784]
            )
            images, labels = splits["train" if i < n_train else "t10k"]
            images.append(px)
            labels.append(digit)
    for name, (images, labels) in splits.items():
        write_gz(os.path.join(dst, f"{name}-images-idx3-ubyte.gz"), idx_images(images))
        write_gz(os.path.join(dst, f"{name}-labels-idx1-ubyte.gz"), idx_labels(labels))
        print(f"{name}: {len(labels)} samples")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
