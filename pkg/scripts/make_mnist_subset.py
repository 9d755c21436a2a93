"""Build MNIST IDX files from locally available digit subsets (offline substitute for data-fetch).

Sources:
  * the npm ``mnist`` package tarball (about 10k digits as JSON, values x/255 rounded to 3 decimals)
  * mlxtend's bundled ``mnist_5k.csv.gz`` (label first, then 784 raw pixel bytes)

Both are decoded back to uint8 pixels, pooled, exact duplicates dropped, shuffled with a
fixed seed and split into train / test. Output is gzipped IDX with the standard file names,
so ``load_mnist`` treats it like the full dataset.
"""

from __future__ import annotations

import argparse
import gzip
import hashlib
import json
import tarfile
from pathlib import Path

import numpy as np

from asymnets.data import MNIST_FILES, write_idx_images, write_idx_labels


def from_npm(tgz: Path) -> tuple[np.ndarray, np.ndarray]:
    images, labels = [], []
    with tarfile.open(tgz) as tar:
        for digit in range(10):
            raw = json.load(tar.extractfile(f"package/src/digits/{digit}.json"))["data"]
            px = np.rint(np.asarray(raw, dtype=np.float64) * 255.0)
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("pixel out of range")
            px = px.astype(np.uint8).reshape(-1, 28, 28)
            images.append(px)
            labels.append(np.full(len(px), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def from_mlxtend(csv_gz: Path) -> tuple[np.ndarray, np.ndarray]:
    arr = np.loadtxt(gzip.open(csv_gz, "rt"), delimiter=",", dtype=np.int64)
    # columns: 784 pixels then the label
    return arr[:, :784].astype(np.uint8).reshape(-1, 28, 28), arr[:, 784].astype(np.uint8)


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--npm-tgz", type=Path, required=True)
    p.add_argument("--mlxtend-csv", type=Path)
    p.add_argument("--out", type=Path, default=Path("data/mnist"))
    p.add_argument("--test-size", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    parts = [from_npm(args.npm_tgz)]
    if args.mlxtend_csv:
        parts.append(from_mlxtend(args.mlxtend_csv))
    images = np.concatenate([im for im, _ in parts])
    labels = np.concatenate([lb for _, lb in parts])
    _, keep = np.unique(images.reshape(len(images), -1), axis=0, return_index=True)
    keep = np.sort(keep)
    print(f"pooled {len(images)} digits, {len(images) - len(keep)} exact duplicates dropped")
    images, labels = images[keep], labels[keep]
    order = np.random.default_rng(args.seed).permutation(len(images))
    images, labels = images[order], labels[order]
    test, train = slice(0, args.test_size), slice(args.test_size, None)

    args.out.mkdir(parents=True, exist_ok=True)
    blobs = {
        MNIST_FILES["train_images"]: write_idx_images(images[train]),
        MNIST_FILES["train_labels"]: write_idx_labels(labels[train]),
        MNIST_FILES["test_images"]: write_idx_images(images[test]),
        MNIST_FILES["test_labels"]: write_idx_labels(labels[test]),
    }
    sums = []
    for name, raw in blobs.items():
        gz = gzip.compress(raw, mtime=0)
        (args.out / f"{name}.gz").write_bytes(gz)
        sums.append(f"{hashlib.sha256(gz).hexdigest()}  {name}.gz\n")
    (args.out / "SHA256SUMS").write_text("".join(sorted(sums, key=lambda s: s.split()[1])))
    print(f"train {len(images) - args.test_size}, test {args.test_size} -> {args.out}")


if __name__ == "__main__":
    main()
