#!/usr/bin/env python3
"""Build small IDX-format MNIST / Fashion-MNIST pools from the npm `mnist`
and `fashion-mnist` packages.

The npm packages ship per-class JSON arrays. This script takes the first
`--per-class` images of every class, interleaves them round-robin by class
and writes gzip-compressed IDX files (magic 0x803 / 0x801) that the Rust
loader reads directly.

    npm pack mnist fashion-mnist
    python3 scripts/prepare_datasets.py --per-class 200 --out data
"""
import argparse
import gzip
import json
import struct
import tarfile
from pathlib import Path


def load_classes(tarball, subdir, scaled):
    classes = []
    with tarfile.open(tarball) as tar:
        for c in range(10):
            member = tar.getmember(f"package/src/{subdir}/{c}.json")
            raw = json.load(tar.extractfile(member))["data"]
            if scaled:
                # mnist package: flat list of floats in [0,1], 3 decimals
                flat = [min(255, max(0, round(v * 255))) for v in raw]
                images = [flat[i:i + 784] for i in range(0, len(flat), 784)]
            else:
                images = [[int(v) for v in img] for img in raw]
            classes.append(images)
    return classes


def write_idx(out_dir, stem, classes, per_class):
    images, labels = [], []
    for i in range(per_class):
        for c, imgs in enumerate(classes):
            images.append(bytes(imgs[i]))
            labels.append(c)
    n = len(labels)
    with gzip.GzipFile(out_dir / f"{stem}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for img in images:
            assert len(img) == 784
            f.write(img)
    with gzip.GzipFile(out_dir / f"{stem}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))
    print(f"{stem}: {n} samples")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist", default="mnist-1.1.0.tgz")
    ap.add_argument("--fashion", default="fashion-mnist-1.1.0.tgz")
    ap.add_argument("--per-class", type=int, default=200)
    ap.add_argument("--out", default="data")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out, "mnist", load_classes(args.mnist, "digits", True), args.per_class)
    write_idx(out, "fashion", load_classes(args.fashion, "clothes", False), args.per_class)


if __name__ == "__main__":
    main()
