"""IDX (MNIST) parsing/writing and small synthetic datasets."""

from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "ASYMNETS_DATA"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # N x d, float64
    labels: np.ndarray  # N, int64
    num_classes: int

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or labels.shape != (inputs.shape[0],):
            raise ValueError("inputs must be N x d with one label per row")
        if inputs.shape[0] == 0:
            raise ValueError("empty dataset")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError("labels out of range")
        if not np.all(np.isfinite(inputs)):
            raise ValueError("non-finite inputs")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes)


def _maybe_gunzip(raw: bytes) -> bytes:
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def parse_idx_images(raw: bytes) -> np.ndarray:
    """``N x rows x cols`` float64 array in [0, 1]."""
    raw = _maybe_gunzip(raw)
    if len(raw) < 16:
        raise IdxFormatError("truncated image header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(f"bad magic 0x{magic:08x} for images")
    if n == 0:
        raise IdxFormatError("empty image file")
    want = n * rows * cols
    if len(raw) - 16 < want:
        raise IdxFormatError(f"truncated payload: need {want} bytes, have {len(raw) - 16}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=want, offset=16)
    return pixels.reshape(n, rows, cols).astype(np.float64) / 255.0


def parse_idx_labels(raw: bytes, num_classes: int | None = 10) -> np.ndarray:
    raw = _maybe_gunzip(raw)
    if len(raw) < 8:
        raise IdxFormatError("truncated label header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise IdxFormatError(f"bad magic 0x{magic:08x} for labels")
    if n == 0:
        raise IdxFormatError("empty label file")
    if len(raw) - 8 < n:
        raise IdxFormatError(f"truncated payload: need {n} labels, have {len(raw) - 8}")
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    if num_classes is not None and labels.max() >= num_classes:
        raise IdxFormatError(f"label {labels.max()} >= {num_classes}")
    return labels


def write_idx_images(images: np.ndarray) -> bytes:
    """Inverse of :func:`parse_idx_images` for images already on the 1/255 grid."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise ValueError("expected N x rows x cols")
    if images.dtype != np.uint8:
        images = np.rint(images * 255.0).astype(np.uint8)
    n, r, c = images.shape
    return struct.pack(">IIII", IMAGES_MAGIC, n, r, c) + images.tobytes()


def write_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels).astype(np.uint8)
    return struct.pack(">II", LABELS_MAGIC, labels.size) + labels.tobytes()


def data_dir(path: str | os.PathLike | None = None) -> Path:
    if path is not None:
        return Path(path)
    return Path(os.environ.get(DATA_DIR_ENV, "data/mnist"))


def _read(directory: Path, stem: str) -> bytes:
    for name in (stem, stem + ".gz"):
        p = directory / name
        if p.exists():
            return p.read_bytes()
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_mnist(directory=None, split: str = "train") -> Dataset:
    """Load a split from IDX files; ``split`` is train, val (last 10% of train) or test."""
    d = data_dir(directory)
    if split == "test":
        images = parse_idx_images(_read(d, MNIST_FILES["test_images"]))
        labels = parse_idx_labels(_read(d, MNIST_FILES["test_labels"]))
        return Dataset(images.reshape(len(images), -1), labels, 10)
    images = parse_idx_images(_read(d, MNIST_FILES["train_images"]))
    labels = parse_idx_labels(_read(d, MNIST_FILES["train_labels"]))
    full = Dataset(images.reshape(len(images), -1), labels, 10)
    train, val = train_val_split(full)
    if split == "train":
        return train
    if split == "val":
        return val
    raise ValueError(f"unknown split {split!r}")


def train_val_split(ds: Dataset, val_fraction: float = 0.1) -> tuple[Dataset, Dataset]:
    # fixed, unshuffled: the last rows are the validation split
    n_val = max(1, int(round(len(ds) * val_fraction)))
    cut = len(ds) - n_val
    return ds.subset(slice(0, cut)), ds.subset(slice(cut, None))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def gaussian_blobs(num_classes: int, n_per_class: int, d: int, separation: float,
                   seed: int) -> Dataset:
    """Class ``c`` ~ N(separation * u_c, I).

    ``u_c`` is the basis vector e_c when there are at most ``d`` classes, otherwise
    the c-th of ``num_classes`` evenly spaced directions in the first two coordinates.
    """
    if separation <= 0:
        raise ValueError("separation must be positive")
    rng = np.random.default_rng(seed)
    directions = np.zeros((num_classes, d))
    if num_classes <= d:
        directions[np.arange(num_classes), np.arange(num_classes)] = 1.0
    else:
        if d < 2:
            raise ValueError("need d >= 2 for more classes than dimensions")
        angle = 2 * np.pi * np.arange(num_classes) / num_classes
        directions[:, 0], directions[:, 1] = np.cos(angle), np.sin(angle)
    xs = [separation * directions[c] + rng.normal(size=(n_per_class, d)) for c in range(num_classes)]
    labels = np.repeat(np.arange(num_classes), n_per_class)
    return Dataset(np.concatenate(xs), labels, num_classes)


def batch_order(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    """Sample order for one epoch; a pure function of its arguments."""
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def iter_batches(ds: Dataset, batch_size: int, shuffle_seed: int, epoch: int):
    order = batch_order(len(ds), shuffle_seed, epoch)
    for start in range(0, len(ds), batch_size):
        idx = order[start:start + batch_size]
        yield ds.inputs[idx], ds.labels[idx]
