"""IDX parsing, the MNIST directory layout, and the synthetic corpus."""
import gzip

import numpy as np
import pytest

from softshare.data import (
    MNIST_FILES,
    load_mnist,
    read_idx,
    synthetic_digits,
    write_idx,
)
from softshare.errors import DataFormatError


def test_idx_round_trip_rank_1_and_3(tmp_path):
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 10, 50).astype(np.uint8)
    images = rng.integers(0, 256, (50, 7, 9)).astype(np.uint8)
    write_idx(tmp_path / "labels.idx", labels)
    write_idx(tmp_path / "images.idx", images)
    np.testing.assert_array_equal(read_idx(tmp_path / "labels.idx"), labels)
    got = read_idx(tmp_path / "images.idx")
    assert got.shape == (50, 7, 9)
    np.testing.assert_array_equal(got, images)


def test_idx_gzip_round_trip_and_fallback(tmp_path):
    data = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    write_idx(tmp_path / "a.idx.gz", data)
    np.testing.assert_array_equal(read_idx(tmp_path / "a.idx.gz"), data)
    # asking for the plain name finds the .gz sibling
    np.testing.assert_array_equal(read_idx(tmp_path / "a.idx"), data)
    # gz output is deterministic (no timestamp)
    write_idx(tmp_path / "b.idx.gz", data)
    assert (tmp_path / "a.idx.gz").read_bytes() == (tmp_path / "b.idx.gz").read_bytes()


def test_read_idx_detects_gzip_by_header(tmp_path):
    data = np.arange(6, dtype=np.uint8)
    write_idx(tmp_path / "x.idx", data)
    gz = gzip.compress((tmp_path / "x.idx").read_bytes())
    (tmp_path / "nosuffix").write_bytes(gz)
    np.testing.assert_array_equal(read_idx(tmp_path / "nosuffix"), data)


def test_read_idx_error_cases(tmp_path):
    with pytest.raises(DataFormatError, match="not found"):
        read_idx(tmp_path / "missing.idx")

    short = tmp_path / "short.idx"
    short.write_bytes(b"\x00\x00")
    with pytest.raises(DataFormatError, match="shorter than"):
        read_idx(short)

    bad_magic = tmp_path / "magic.idx"
    bad_magic.write_bytes(b"\x00\x01\x08\x01" + b"\x00" * 8)
    with pytest.raises(DataFormatError, match="bad magic"):
        read_idx(bad_magic)

    bad_dtype = tmp_path / "dtype.idx"
    bad_dtype.write_bytes(b"\x00\x00\x0d\x01" + b"\x00" * 8)
    with pytest.raises(DataFormatError, match="bad magic"):
        read_idx(bad_dtype)

    truncated_dims = tmp_path / "dims.idx"
    truncated_dims.write_bytes(b"\x00\x00\x08\x03" + b"\x00\x00\x00\x01")
    with pytest.raises(DataFormatError, match="dimension table"):
        read_idx(truncated_dims)

    wrong_body = tmp_path / "body.idx"
    wrong_body.write_bytes(b"\x00\x00\x08\x01" + (5).to_bytes(4, "big") + b"abc")
    with pytest.raises(DataFormatError, match="expected 5 data bytes"):
        read_idx(wrong_body)

    bad_gz = tmp_path / "broken.idx.gz"
    bad_gz.write_bytes(b"\x1f\x8b" + b"\x00" * 20)
    with pytest.raises(DataFormatError, match="bad gzip"):
        read_idx(bad_gz)


def _write_fake_mnist(d, n_train=30, n_test=10, side=5, bad_label=False):
    rng = np.random.default_rng(1)
    sets = [("train", n_train), ("test", n_test)]
    for name, n in sets:
        images = rng.integers(0, 256, (n, side, side)).astype(np.uint8)
        labels = rng.integers(0, 10, n).astype(np.uint8)
        if bad_label:
            labels[0] = 11
        write_idx(d / MNIST_FILES[f"{name}_images"], images)
        write_idx(d / MNIST_FILES[f"{name}_labels"], labels)


def test_load_mnist_layout(tmp_path):
    _write_fake_mnist(tmp_path)
    ds = load_mnist(tmp_path, expected_counts=None)
    assert ds.train.inputs.shape == (30, 25)
    assert ds.test.inputs.shape == (10, 25)
    assert ds.train.inputs.dtype == np.float64
    assert ds.train.labels.dtype == np.int64
    assert 0.0 <= ds.train.inputs.min() and ds.train.inputs.max() <= 1.0
    # pixel scaling is exactly value/255
    raw = read_idx(tmp_path / MNIST_FILES["train_images"])
    np.testing.assert_array_equal(ds.train.inputs,
                                  raw.reshape(30, -1) / 255.0)


def test_load_mnist_enforces_official_counts(tmp_path):
    _write_fake_mnist(tmp_path)
    with pytest.raises(DataFormatError, match="expected 60000/10000"):
        load_mnist(tmp_path)


def test_load_mnist_rejects_bad_labels(tmp_path):
    _write_fake_mnist(tmp_path, bad_label=True)
    with pytest.raises(DataFormatError, match="label outside"):
        load_mnist(tmp_path, expected_counts=None)


def test_synthetic_corpus_shapes_and_ranges():
    ds = synthetic_digits(n_train=64, n_test=16, seed=3)
    assert ds.train.inputs.shape == (64, 784)
    assert ds.test.inputs.shape == (16, 784)
    assert ds.train.labels.min() >= 0 and ds.train.labels.max() <= 9
    assert ds.train.inputs.min() >= 0.0 and ds.train.inputs.max() <= 1.0
    # the dead border stays exactly zero, like centered digit data
    images = ds.train.inputs.reshape(64, 28, 28)
    assert np.all(images[:, :2, :] == 0.0)
    assert np.all(images[:, -2:, :] == 0.0)
    assert np.all(images[:, :, :2] == 0.0)
    assert np.all(images[:, :, -2:] == 0.0)
    # all ten classes appear in a reasonable draw
    assert len(np.unique(ds.train.labels)) == 10


def test_synthetic_corpus_is_deterministic():
    a = synthetic_digits(n_train=32, n_test=8, seed=7)
    b = synthetic_digits(n_train=32, n_test=8, seed=7)
    np.testing.assert_array_equal(a.train.inputs, b.train.inputs)
    np.testing.assert_array_equal(a.train.labels, b.train.labels)
    np.testing.assert_array_equal(a.test.inputs, b.test.inputs)
    c = synthetic_digits(n_train=32, n_test=8, seed=8)
    assert not np.array_equal(a.train.inputs, c.train.inputs)


def test_synthetic_train_and_test_are_distinct_draws():
    ds = synthetic_digits(n_train=16, n_test=16, seed=0)
    assert not np.array_equal(ds.train.inputs, ds.test.inputs)
