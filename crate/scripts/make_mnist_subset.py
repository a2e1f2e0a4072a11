#!/usr/bin/env python3
"""Write the 5k-sample MNIST subset shipped with mlxtend as IDX files.

The sandbox cannot reach the official MNIST mirrors, so the repository ships
this subset (500 digits per class) under data/mnist-5k. Per class, the first
400 digits become the training file and the remaining 100 the test file.

Usage: pip download --no-deps mlxtend && python3 -m zipfile -e mlxtend-*.whl mlx
       python3 scripts/make_mnist_subset.py mlx/mlxtend/data/data/mnist_5k.csv.gz data/mnist-5k
"""
import gzip
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 400


def write_idx(out: Path, stem: str, rows):
    images = bytearray(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
    labels = bytearray(struct.pack(">II", 0x00000801, len(rows)))
    for pixels, label in rows:
        images.extend(bytes(pixels))
        labels.append(label)
    (out / f"{stem}-images-idx3-ubyte").write_bytes(images)
    (out / f"{stem}-labels-idx1-ubyte").write_bytes(labels)


def main(src: str, dst: str):
    out = Path(dst)
    out.mkdir(parents=True, exist_ok=True)
    seen = [0] * 10
    train, test = [], []
    with gzip.open(src, "rt") as f:
        for line in f:
            values = [int(float(v)) for v in line.strip().split(",")]
            pixels, label = values[:784], values[784]
            (train if seen[label] < TRAIN_PER_CLASS else test).append((pixels, label))
            seen[label] += 1
    write_idx(out, "train", train)
    write_idx(out, "t10k", test)
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
