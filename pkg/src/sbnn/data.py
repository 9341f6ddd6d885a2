"""Dataset ingestion: MNIST IDX, CIFAR-10 binary, and seeded synthetic blobs.

Every dataset is held as unsigned 8-bit codes. The float view used for
training is ``(code - 128) / 128``, which lands in [-1, 1) and maps
one-to-one onto the signed 8-bit values the binary runtime consumes.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3072
FORMATS = ("mnist-idx", "cifar10-binary", "synthetic-blobs")


@dataclass
class Split:
    codes: np.ndarray  # uint8, (N, *sample_shape)
    labels: np.ndarray  # int64, (N,)

    def __len__(self):
        return len(self.labels)

    def tensor(self) -> np.ndarray:
        return codes_to_float(self.codes)

    def batches(self, batch_size: int, rng: np.random.Generator | None = None, augment: bool = False):
        """Yield ``(x, y)`` minibatches; shuffled when ``rng`` is given."""
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for i in range(0, len(order), batch_size):
            idx = order[i : i + batch_size]
            codes = self.codes[idx]
            if augment and codes.ndim == 4:
                codes = pad_crop_flip(codes, rng)
            yield codes_to_float(codes), self.labels[idx]


@dataclass
class Dataset:
    train: Split
    val: Split | None
    test: Split | None
    input_shape: tuple
    n_classes: int

    def split(self, name: str) -> Split:
        s = {"train": self.train, "val": self.val, "test": self.test}.get(name)
        if s is None:
            raise FormatError(f"dataset has no {name!r} split")
        return s

    def channel_medians(self) -> np.ndarray:
        """Per-channel median code of the training set (thresholds for median input mode)."""
        c = self.train.codes
        flat = np.moveaxis(c, 1, 0).reshape(c.shape[1], -1) if c.ndim > 2 else c.T
        return np.median(flat, axis=1).astype(np.uint8)


def codes_to_float(codes: np.ndarray) -> np.ndarray:
    return ((codes.astype(np.float32) - 128.0) / 128.0).astype(np.float32)


def float_to_codes(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(x) * 128.0 + 0.5) + 128, 0, 255).astype(np.uint8)


def pad_crop_flip(codes: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Pad by ``pad`` with zero-valued codes, crop back to size at a random offset, flip half."""
    n, c, h, w = codes.shape
    padded = np.pad(codes, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=128)
    out = np.empty_like(codes)
    dy = rng.integers(0, 2 * pad + 1, n)
    dx = rng.integers(0, 2 * pad + 1, n)
    flip = rng.random(n) < 0.5
    for i in range(n):
        patch = padded[i, :, dy[i] : dy[i] + h, dx[i] : dx[i] + w]
        out[i] = patch[:, :, ::-1] if flip[i] else patch
    return out


# ---------------------------------------------------------------------------
# readers


def _open(path: Path) -> bytes:
    raw = path.read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def read_idx_images(path) -> np.ndarray:
    buf = _open(Path(path))
    if len(buf) < 16:
        raise FormatError("truncated IDX image header", len(buf))
    magic, n, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad IDX image magic {magic:#010x}", 0)
    want = 16 + n * rows * cols
    if len(buf) != want:
        raise FormatError(f"IDX image payload is {len(buf)} bytes, expected {want}", min(len(buf), want))
    return np.frombuffer(buf, np.uint8, offset=16).reshape(n, 1, rows, cols).copy()


def read_idx_labels(path) -> np.ndarray:
    buf = _open(Path(path))
    if len(buf) < 8:
        raise FormatError("truncated IDX label header", len(buf))
    magic, n = struct.unpack(">II", buf[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad IDX label magic {magic:#010x}", 0)
    if len(buf) != 8 + n:
        raise FormatError(f"IDX label payload is {len(buf)} bytes, expected {8 + n}", min(len(buf), 8 + n))
    return np.frombuffer(buf, np.uint8, offset=8).astype(np.int64)


def read_cifar10_binary(path) -> tuple[np.ndarray, np.ndarray]:
    buf = _open(Path(path))
    if len(buf) % CIFAR_RECORD:
        raise FormatError(f"CIFAR-10 file is not a whole number of {CIFAR_RECORD}-byte records",
                          len(buf) - len(buf) % CIFAR_RECORD)
    rec = np.frombuffer(buf, np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"label {labels[bad]} out of range", bad * CIFAR_RECORD)
    return rec[:, 1:].reshape(-1, 3, 32, 32).copy(), labels


def _find(root: Path, stem: str) -> Path:
    for cand in (root / stem, root / (stem + ".gz")):
        if cand.exists():
            return cand
    alt = stem.replace("-idx", ".idx")
    for cand in (root / alt, root / (alt + ".gz")):
        if cand.exists():
            return cand
    raise FormatError(f"missing {stem} under {root}")


def make_blobs(n: int = 1000, seed: int = 7, std: float = 0.3, sep: float = 0.4):
    """Two Gaussian blobs centred at (-sep, -sep) and (sep, sep), as u8 codes of shape (n, 2)."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    centers = np.where(labels[:, None] == 1, sep, -sep)
    pts = centers + std * rng.standard_normal((n, 2))
    return float_to_codes(pts), labels.astype(np.int64)


def _carve(codes, labels, val_fraction, seed):
    n_val = int(round(len(labels) * val_fraction))
    order = np.random.default_rng(seed).permutation(len(labels))
    val, tr = order[:n_val], order[n_val:]
    return Split(codes[tr], labels[tr]), (Split(codes[val], labels[val]) if n_val else None)


def load_dataset(
    path=None,
    fmt: str = "synthetic-blobs",
    seed: int = 7,
    n: int = 1000,
    val_fraction: float = 0.2,
    blob_std: float = 0.3,
    blob_sep: float = 0.4,
    limit: int | None = None,
) -> Dataset:
    """Load a dataset and carve a seeded validation split out of its training part.

    ``path`` is a directory (MNIST: ``train-images-idx3-ubyte`` etc., CIFAR-10:
    ``data_batch_*.bin`` / ``test_batch.bin``) or a single CIFAR batch file;
    it is ignored for synthetic blobs. ``limit`` truncates the training part.
    """
    fmt = fmt.lower()
    test = None
    if fmt == "synthetic-blobs":
        codes, labels = make_blobs(n, seed, blob_std, blob_sep)
        n_classes = 2
    elif fmt == "mnist-idx":
        root = Path(path)
        codes = read_idx_images(_find(root, "train-images-idx3-ubyte"))
        labels = read_idx_labels(_find(root, "train-labels-idx1-ubyte"))
        if len(codes) != len(labels):
            raise FormatError("image/label count mismatch")
        try:
            test = Split(read_idx_images(_find(root, "t10k-images-idx3-ubyte")),
                         read_idx_labels(_find(root, "t10k-labels-idx1-ubyte")))
        except FormatError:
            test = None
        n_classes = 10
    elif fmt == "cifar10-binary":
        root = Path(path)
        if root.is_file():
            codes, labels = read_cifar10_binary(root)
        else:
            files = sorted(root.glob("data_batch_*.bin"))
            if not files:
                raise FormatError(f"no data_batch_*.bin under {root}")
            parts = [read_cifar10_binary(f) for f in files]
            codes = np.concatenate([p[0] for p in parts])
            labels = np.concatenate([p[1] for p in parts])
            if (root / "test_batch.bin").exists():
                test = Split(*read_cifar10_binary(root / "test_batch.bin"))
        n_classes = 10
    else:
        raise FormatError(f"unknown dataset format {fmt!r}; expected one of {FORMATS}")
    if limit is not None:
        codes, labels = codes[:limit], labels[:limit]
    train, val = _carve(codes, labels, val_fraction, seed)
    return Dataset(train, val, test, tuple(codes.shape[1:]), n_classes)
