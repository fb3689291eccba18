#!/usr/bin/env python3
"""Extract the 5000-image MNIST subset shipped inside the mlxtend wheel and
write it as IDX files (the original MNIST container format).

Usage: make_mnist_subset.py [--wheel PATH] [--out DIR]

Without --wheel the wheel is fetched with `pip download mlxtend`.
"""
import argparse
import glob
import gzip
import io
import os
import struct
import subprocess
import tempfile
import zipfile

import numpy as np


def fetch_wheel(tmp):
    subprocess.check_call(
        ["pip", "download", "--no-deps", "-q", "-d", tmp, "mlxtend==0.24.0"])
    return glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]


def write_idx(path, magic, arr):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        for dim in arr.shape:
            f.write(struct.pack(">I", dim))
        f.write(arr.astype(np.uint8).tobytes(order="C"))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel")
    ap.add_argument("--out", default=os.path.join(
        os.path.dirname(os.path.abspath(__file__)), "..", "data"))
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        with zipfile.ZipFile(wheel) as z:
            raw = z.read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",",
                       dtype=np.int64)
    labels = table[:, 0]
    images = table[:, 1:].reshape(-1, 28, 28)
    assert images.min() >= 0 and images.max() <= 255

    os.makedirs(args.out, exist_ok=True)
    write_idx(os.path.join(args.out, "mnist5k-images-idx3-ubyte"), 0x803, images)
    write_idx(os.path.join(args.out, "mnist5k-labels-idx1-ubyte"), 0x801, labels)
    print(f"wrote {images.shape[0]} images to {args.out}")


if __name__ == "__main__":
    main()
