#!/usr/bin/env python3
"""Write a small real-MNIST subset as gzipped IDX files.

The 5000-digit sample bundled with the ``mlxtend`` wheel (500 digits per
class, drawn from the official MNIST training set) is split per class into
400 training and 100 test digits, shuffled with a fixed seed, and written with the official MNIST file
names, so ``stnlab --data-dir`` treats it exactly like the full dataset.

Usage:
    python3 tools/make_mnist_subset.py [--wheel PATH] [--out data/mnist-subset]

Without ``--wheel`` the wheel is fetched with ``pip download``.
"""

import argparse
import gzip
import io
import pathlib
import random
import struct
import subprocess
import sys
import tempfile
import zipfile

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
TRAIN_PER_CLASS = 400


def fetch_wheel(tmp: pathlib.Path) -> pathlib.Path:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
         "-d", str(tmp), "mlxtend==0.24.0"],
        check=True,
    )
    return next(tmp.glob("mlxtend-*.whl"))


def read_rows(wheel: pathlib.Path):
    with zipfile.ZipFile(wheel) as z:
        text = gzip.decompress(z.read(CSV_MEMBER)).decode()
    rows = []
    for line in text.strip().splitlines():
        vals = [int(float(v)) for v in line.split(",")]
        rows.append((bytes(vals[:784]), vals[784]))
    return rows


def write_idx(path: pathlib.Path, images, labels):
    img = io.BytesIO()
    img.write(struct.pack(">IIII", 2051, len(images), 28, 28))
    for pixels in images:
        img.write(pixels)
    lab = io.BytesIO()
    lab.write(struct.pack(">II", 2049, len(labels)))
    lab.write(bytes(labels))
    # mtime=0 keeps the archives byte-reproducible.
    for name, buf in ((path[0], img), (path[1], lab)):
        with open(name, "wb") as raw:
            with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
                gz.write(buf.getvalue())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path,
                    default=pathlib.Path("data/mnist-subset"))
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(pathlib.Path(tmp))
        rows = read_rows(wheel)

    seen = [0] * 10
    train, test = [], []
    for pixels, label in rows:
        (train if seen[label] < TRAIN_PER_CLASS else test).append((pixels, label))
        seen[label] += 1

    # The source is sorted by class; interleave so any prefix is balanced-ish.
    random.Random(20200101).shuffle(train)
    random.Random(20200102).shuffle(test)

    args.out.mkdir(parents=True, exist_ok=True)
    for prefix, split in (("train", train), ("t10k", test)):
        write_idx(
            (args.out / f"{prefix}-images-idx3-ubyte.gz",
             args.out / f"{prefix}-labels-idx1-ubyte.gz"),
            [p for p, _ in split],
            [l for _, l in split],
        )
        print(f"{prefix}: {len(split)} digits")


if __name__ == "__main__":
    main()
