#!/usr/bin/env python3
"""Convert the 5,000-digit MNIST subset shipped with mlxtend into gzipped IDX files.

Usage: mnist_subset_to_idx.py <mlxtend wheel or mnist_5k.csv.gz> <out dir>
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path


def read_csv_gz(src: Path) -> bytes:
    if src.suffix == ".whl":
        with zipfile.ZipFile(src) as z:
            return gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    return gzip.decompress(src.read_bytes())


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    rows = read_csv_gz(Path(sys.argv[1])).decode().splitlines()
    images = bytearray()
    labels = bytearray()
    for row in rows:
        values = [int(float(v)) for v in row.split(",")]
        images.extend(values[:784])
        labels.append(values[784])
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    n = len(rows)
    with gzip.GzipFile(out / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28) + bytes(images))
    with gzip.GzipFile(out / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n) + bytes(labels))
    print(f"wrote {n} images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
