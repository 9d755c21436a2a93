import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asymnets import data as D

from .conftest import MNIST_DIR


@given(arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 6), st.integers(1, 6))))
def test_idx_image_round_trip(images):
    raw = D.write_idx_images(images)
    back = D.parse_idx_images(raw)
    assert np.array_equal(np.rint(back * 255).astype(np.uint8), images)
    assert np.array_equal(D.parse_idx_images(gzip.compress(raw)), back)


@given(arrays(np.uint8, st.integers(1, 50), elements=st.integers(0, 9)))
def test_idx_label_round_trip(labels):
    assert np.array_equal(D.parse_idx_labels(D.write_idx_labels(labels)), labels)


def test_header_fields():
    raw = D.write_idx_images(np.zeros((2, 3, 4), dtype=np.uint8))
    assert struct.unpack(">IIII", raw[:16]) == (0x803, 2, 3, 4)


def test_bad_magic_rejected():
    raw = bytearray(D.write_idx_images(np.zeros((1, 2, 2), dtype=np.uint8)))
    raw[3] = 0x01
    with pytest.raises(D.IdxFormatError, match="magic"):
        D.parse_idx_images(bytes(raw))
    with pytest.raises(D.IdxFormatError, match="magic"):
        D.parse_idx_labels(D.write_idx_images(np.zeros((1, 2, 2), dtype=np.uint8)))


def test_truncated_and_empty_rejected():
    raw = D.write_idx_images(np.zeros((3, 2, 2), dtype=np.uint8))
    with pytest.raises(D.IdxFormatError, match="truncated"):
        D.parse_idx_images(raw[:-1])
    with pytest.raises(D.IdxFormatError, match="truncated"):
        D.parse_idx_images(raw[:10])
    with pytest.raises(D.IdxFormatError, match="empty"):
        D.parse_idx_images(struct.pack(">IIII", 0x803, 0, 28, 28))
    with pytest.raises(D.IdxFormatError):
        D.parse_idx_labels(struct.pack(">II", 0x801, 5) + b"\x00")


def test_label_range_checked():
    with pytest.raises(D.IdxFormatError):
        D.parse_idx_labels(D.write_idx_labels([3, 10]))


def test_dataset_is_read_only(blobs):
    with pytest.raises(ValueError):
        blobs.inputs[0, 0] = 1.0


def test_blobs_deterministic_and_balanced():
    a = D.gaussian_blobs(4, 10, 3, 2.0, seed=7)
    b = D.gaussian_blobs(4, 10, 3, 2.0, seed=7)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(np.bincount(a.labels), [10, 10, 10, 10])  # K > d uses the circle layout


def test_batch_order_is_pure():
    assert np.array_equal(D.batch_order(20, 3, 1), D.batch_order(20, 3, 1))
    assert not np.array_equal(D.batch_order(20, 3, 1), D.batch_order(20, 3, 2))
    assert sorted(D.batch_order(20, 3, 1)) == list(range(20))


def test_iter_batches_covers_dataset(blobs):
    seen = np.concatenate([y for _, y in D.iter_batches(blobs, 16, 0, 0)])
    assert len(seen) == len(blobs)
    assert np.array_equal(np.sort(seen), np.sort(blobs.labels))


def test_val_split_is_tail():
    ds = D.gaussian_blobs(2, 10, 2, 1.0, seed=0)
    tr, va = D.train_val_split(ds)
    assert len(va) == 2 and np.array_equal(va.inputs, ds.inputs[-2:])


def test_load_from_directory(tmp_path):
    imgs = np.arange(5 * 4, dtype=np.uint8).reshape(5, 2, 2)
    (tmp_path / D.MNIST_FILES["test_images"]).write_bytes(D.write_idx_images(imgs))
    (tmp_path / (D.MNIST_FILES["test_labels"] + ".gz")).write_bytes(
        gzip.compress(D.write_idx_labels([0, 1, 2, 3, 4])))
    ds = D.load_mnist(tmp_path, "test")
    assert ds.inputs.shape == (5, 4) and ds.num_classes == 10


def test_env_var_sets_data_dir(monkeypatch, tmp_path):
    monkeypatch.setenv(D.DATA_DIR_ENV, str(tmp_path))
    assert D.data_dir() == tmp_path


@pytest.mark.skipif(not (MNIST_DIR / "SHA256SUMS").exists(), reason="bundled digits not built")
def test_bundled_digits_match_checksums():
    for line in (MNIST_DIR / "SHA256SUMS").read_text().splitlines():
        digest, name = line.split()
        assert D.sha256_file(MNIST_DIR / name) == digest
    train = D.load_mnist(MNIST_DIR, "train")
    assert train.dim == 784 and 0.0 <= train.inputs.min() and train.inputs.max() <= 1.0
