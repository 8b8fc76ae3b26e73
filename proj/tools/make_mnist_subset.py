#!/usr/bin/env python3
"""Convert the 5000-image MNIST subset shipped with mlxtend into IDX files.

Usage: make_mnist_subset.py <mlxtend wheel or mnist_5k.csv.gz> <out_dir>

Writes mnist5k-images-idx3-ubyte and mnist5k-labels-idx1-ubyte. Each CSV row
holds 784 pixel values followed by the label.
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path


def read_rows(src: Path):
    if src.suffix == ".whl":
        raw = zipfile.ZipFile(src).read("mlxtend/data/data/mnist_5k.csv.gz")
    else:
        raw = src.read_bytes()
    text = gzip.decompress(raw).decode()
    for line in io.StringIO(text):
        line = line.strip()
        if line:
            vals = [int(float(v)) for v in line.split(",")]
            yield vals[:-1], vals[-1]


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    rows = list(read_rows(src))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "mnist5k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(rows), 28, 28))
        for pixels, _ in rows:
            f.write(bytes(pixels))
    with open(out / "mnist5k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(rows)))
        f.write(bytes(label for _, label in rows))


if __name__ == "__main__":
    main()
