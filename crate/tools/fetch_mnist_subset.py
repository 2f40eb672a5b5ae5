#!/usr/bin/env python3
"""Build IDX-format MNIST files from the 10,000-digit subset shipped in the
npm `mnist` package, for environments without access to the official files.

Usage: fetch_mnist_subset.py OUT_DIR [--test-fraction 0.2]

Writes train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte
and t10k-labels-idx1-ubyte into OUT_DIR. The split is per class and the
resulting order is a fixed-seed shuffle, so the output is deterministic.
"""
import argparse
import json
import os
import random
import struct
import subprocess
import tarfile
import tempfile


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--test-fraction", type=float, default=0.2)
    args = ap.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
            tar.extractall(tmp)
        train, test = [], []
        for digit in range(10):
            with open(os.path.join(tmp, "package", "src", "digits", f"{digit}.json")) as f:
                data = json.load(f)["data"]
            images = [data[i:i + 784] for i in range(0, len(data), 784)]
            n_test = int(len(images) * args.test_fraction)
            test += [(img, digit) for img in images[:n_test]]
            train += [(img, digit) for img in images[n_test:]]

    rng = random.Random(1234)
    rng.shuffle(train)
    rng.shuffle(test)
    for prefix, rows in (("train", train), ("t10k", test)):
        write_images(os.path.join(args.out_dir, f"{prefix}-images-idx3-ubyte"), [r[0] for r in rows])
        write_labels(os.path.join(args.out_dir, f"{prefix}-labels-idx1-ubyte"), [r[1] for r in rows])
        print(f"{prefix}: {len(rows)} examples")


if __name__ == "__main__":
    main()
