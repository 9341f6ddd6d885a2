import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sbnn.data import (
    CIFAR_RECORD,
    IDX_IMAGES_MAGIC,
    codes_to_float,
    float_to_codes,
    load_dataset,
    make_blobs,
    pad_crop_flip,
    read_cifar10_binary,
    read_idx_images,
    read_idx_labels,
)
from sbnn.errors import FormatError


def write_idx(dirpath, n=5, rows=28, cols=28, prefix="train", seed=0, gz=False):
    r = np.random.default_rng(seed)
    imgs = r.integers(0, 256, (n, rows, cols), dtype=np.uint8)
    labels = r.integers(0, 10, n, dtype=np.uint8)
    ib = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + imgs.tobytes()
    lb = struct.pack(">II", 0x00000801, n) + labels.tobytes()
    suffix = ".gz" if gz else ""
    wrap = gzip.compress if gz else bytes
    (dirpath / f"{prefix}-images-idx3-ubyte{suffix}").write_bytes(wrap(ib))
    (dirpath / f"{prefix}-labels-idx1-ubyte{suffix}").write_bytes(wrap(lb))
    return imgs, labels


def test_idx_magic_and_shape(tmp_path):
    imgs, labels = write_idx(tmp_path)
    got = read_idx_images(tmp_path / "train-images-idx3-ubyte")
    assert IDX_IMAGES_MAGIC == 0x00000803
    assert got.shape == (5, 1, 28, 28) and got.dtype == np.uint8
    np.testing.assert_array_equal(got[:, 0], imgs)
    np.testing.assert_array_equal(read_idx_labels(tmp_path / "train-labels-idx1-ubyte"), labels)


def test_idx_gzip(tmp_path):
    imgs, _ = write_idx(tmp_path, gz=True)
    np.testing.assert_array_equal(read_idx_images(tmp_path / "train-images-idx3-ubyte.gz")[:, 0], imgs)


def test_idx_bad_magic_reports_offset(tmp_path):
    write_idx(tmp_path)
    p = tmp_path / "train-images-idx3-ubyte"
    raw = bytearray(p.read_bytes())
    raw[3] = 0x01
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as exc:
        read_idx_images(p)
    assert exc.value.offset == 0


def test_idx_truncated_reports_offset(tmp_path):
    write_idx(tmp_path)
    p = tmp_path / "train-images-idx3-ubyte"
    p.write_bytes(p.read_bytes()[:-7])
    with pytest.raises(FormatError) as exc:
        read_idx_images(p)
    assert exc.value.offset == 16 + 5 * 784 - 7


def test_mnist_dataset(tmp_path):
    write_idx(tmp_path, n=20)
    write_idx(tmp_path, n=4, prefix="t10k", seed=1)
    ds = load_dataset(tmp_path, "mnist-idx", val_fraction=0.25)
    assert ds.input_shape == (1, 28, 28) and ds.n_classes == 10
    assert len(ds.train) == 15 and len(ds.val) == 5 and len(ds.test) == 4


def test_cifar_record_layout(tmp_path):
    assert CIFAR_RECORD == 3073
    r = np.random.default_rng(0)
    recs = r.integers(0, 256, (3, 3073), dtype=np.uint8)
    recs[:, 0] = [3, 0, 9]
    p = tmp_path / "data_batch_1.bin"
    p.write_bytes(recs.tobytes())
    imgs, labels = read_cifar10_binary(p)
    assert imgs.shape == (3, 3, 32, 32)
    assert labels.tolist() == [3, 0, 9]
    np.testing.assert_array_equal(imgs[1].reshape(-1), recs[1, 1:])
    ds = load_dataset(tmp_path, "cifar10-binary", val_fraction=0.0)
    assert ds.input_shape == (3, 32, 32) and len(ds.train) == 3 and ds.val is None


def test_cifar_errors(tmp_path):
    p = tmp_path / "b.bin"
    p.write_bytes(bytes(3073 * 2 + 10))
    with pytest.raises(FormatError) as exc:
        read_cifar10_binary(p)
    assert exc.value.offset == 3073 * 2
    bad = np.zeros((2, 3073), np.uint8)
    bad[1, 0] = 11
    p.write_bytes(bad.tobytes())
    with pytest.raises(FormatError) as exc:
        read_cifar10_binary(p)
    assert exc.value.offset == 3073


def test_unknown_format_and_missing_files(tmp_path):
    with pytest.raises(FormatError):
        load_dataset(tmp_path, "imagenet")
    with pytest.raises(FormatError):
        load_dataset(tmp_path, "mnist-idx")
    with pytest.raises(FormatError):
        load_dataset(tmp_path, "cifar10-binary")


def test_blobs_bit_exact():
    a = load_dataset(fmt="synthetic-blobs", seed=7, n=1000)
    b = load_dataset(fmt="synthetic-blobs", seed=7, n=1000)
    assert a.train.codes.tobytes() == b.train.codes.tobytes()
    assert a.val.labels.tobytes() == b.val.labels.tobytes()
    assert len(a.train) == 800 and len(a.val) == 200
    c = load_dataset(fmt="synthetic-blobs", seed=8, n=1000)
    assert a.train.codes.tobytes() != c.train.codes.tobytes()


def test_blobs_are_separable_by_class():
    codes, labels = make_blobs(2000, seed=0)
    x = codes_to_float(codes)
    for k, sgn in ((0, -1), (1, 1)):
        np.testing.assert_allclose(x[labels == k].mean(0), [sgn * 0.4] * 2, atol=0.03)


def test_codes_map_into_unit_interval():
    x = codes_to_float(np.arange(256, dtype=np.uint8))
    assert x[0] == -1.0 and x[128] == 0.0 and x[255] == 127 / 128
    assert np.all(np.diff(x) > 0)
    np.testing.assert_array_equal(float_to_codes(x), np.arange(256))


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=20))
def test_float_to_codes_clips(vals):
    c = float_to_codes(np.array(vals))
    x = codes_to_float(c)
    assert np.all(np.abs(x - np.clip(vals, -1, 127 / 128)) <= 1 / 256 + 1e-7)


def test_pad_crop_flip_keeps_shape_and_content():
    r = np.random.default_rng(0)
    codes = r.integers(0, 256, (16, 3, 8, 8), dtype=np.uint8)
    out = pad_crop_flip(codes, np.random.default_rng(1))
    assert out.shape == codes.shape and out.dtype == np.uint8
    # pixels come either from the image or from the zero-valued padding code
    for i in range(16):
        vals = set(np.unique(out[i])) - {128}
        assert vals <= set(np.unique(codes[i]))
    again = pad_crop_flip(codes, np.random.default_rng(1))
    np.testing.assert_array_equal(out, again)


def test_pad_zero_is_pure_flip_or_identity():
    codes = np.arange(2 * 1 * 4 * 4, dtype=np.uint8).reshape(2, 1, 4, 4)
    out = pad_crop_flip(codes, np.random.default_rng(3), pad=0)
    for i in range(2):
        assert np.array_equal(out[i], codes[i]) or np.array_equal(out[i], codes[i, :, :, ::-1])


def test_batches_deterministic_and_label_range():
    ds = load_dataset(fmt="synthetic-blobs", seed=3, n=300)
    a = [y for _, y in ds.train.batches(64, np.random.default_rng(5))]
    b = [y for _, y in ds.train.batches(64, np.random.default_rng(5))]
    assert all(np.array_equal(p, q) for p, q in zip(a, b))
    allc = np.concatenate(a)
    assert sorted(allc.tolist()) == sorted(ds.train.labels.tolist())
    assert allc.min() >= 0 and allc.max() < ds.n_classes
