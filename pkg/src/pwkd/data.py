"""MNIST (IDX) and CIFAR-10 (binary) loading, normalization and batching."""

from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Tuple

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 3073
CIFAR_SIDE = 32

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TRAIN = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST = ("test_batch.bin",)


@dataclass
class Dataset:
    """Normalized NCHW float32 images with integer labels for both splits."""

    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    mean: np.ndarray = field(default_factory=lambda: np.zeros(1, np.float32))
    std: np.ndarray = field(default_factory=lambda: np.ones(1, np.float32))
    augment: bool = False

    @property
    def num_classes(self) -> int:
        return int(max(self.y_train.max(), self.y_test.max() if self.y_test.size else 0)) + 1

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.x_train.shape[1:])

    def split(self, which: str) -> Tuple[np.ndarray, np.ndarray]:
        if which == "train":
            return self.x_train, self.y_train
        if which == "test":
            return self.x_test, self.y_test
        raise ValueError(f"unknown split {which!r}")


# -- raw readers -------------------------------------------------------------
def _read_bytes(path: Path) -> bytes:
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except OSError as exc:
        raise DataError(path, f"cannot read: {exc.strerror or exc}") from exc


def _find(directory: Path, stem: str) -> Path:
    for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        p = directory / cand
        if p.exists():
            return p
    raise DataError(directory / stem, "file not found")


def read_idx_images(path) -> np.ndarray:
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise DataError(path, "truncated IDX header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataError(path, f"bad magic {magic}, expected {IDX_IMAGES_MAGIC}")
    expected = 16 + n * rows * cols
    if len(raw) != expected:
        raise DataError(path, f"length {len(raw)} != 16 + {n}*{rows}*{cols} = {expected}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise DataError(path, "truncated IDX header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataError(path, f"bad magic {magic}, expected {IDX_LABELS_MAGIC}")
    if len(raw) != 8 + n:
        raise DataError(path, f"length {len(raw)} != 8 + {n}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def read_cifar_batch(path) -> Tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    raw = _read_bytes(path)
    if not raw or len(raw) % CIFAR_RECORD:
        raise DataError(path, f"length {len(raw)} is not a positive multiple of the {CIFAR_RECORD}-byte record")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataError(path, f"label byte {labels.max()} out of range for CIFAR-10")
    return rec[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE), labels


def write_cifar_batch(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    Path(path).write_bytes(rec.tobytes())


# -- subsetting & normalization ---------------------------------------------
def subset_indices(total: int, n: int, seed: int) -> np.ndarray:
    """Sorted seeded sample of ``n`` distinct indices out of ``total``."""
    if n >= total:
        return np.arange(total)
    return np.sort(np.random.default_rng(seed).choice(total, size=n, replace=False))


def _finish(name, x_tr, y_tr, x_te, y_te, subset, seed, augment=False) -> Dataset:
    if subset:
        idx = subset_indices(len(y_tr), int(subset), seed)
        x_tr, y_tr = x_tr[idx], y_tr[idx]
    x_tr = x_tr.astype(np.float32) / 255.0
    x_te = x_te.astype(np.float32) / 255.0
    mean = x_tr.mean(axis=(0, 2, 3)).astype(np.float32)
    std = x_tr.std(axis=(0, 2, 3)).astype(np.float32)
    shape = (1, -1, 1, 1)
    return Dataset(
        name,
        ((x_tr - mean.reshape(shape)) / std.reshape(shape)).astype(np.float32),
        y_tr,
        ((x_te - mean.reshape(shape)) / std.reshape(shape)).astype(np.float32),
        y_te,
        mean,
        std,
        augment,
    )


def load_mnist(directory, subset: Optional[int] = None, seed: int = 0) -> Dataset:
    d = Path(directory)
    splits = {}
    for split, (img, lab) in MNIST_FILES.items():
        ip, lp = _find(d, img), _find(d, lab)
        x, y = read_idx_images(ip), read_idx_labels(lp)
        if len(x) != len(y):
            raise DataError(lp, f"{len(y)} labels for {len(x)} images in {ip.name}")
        splits[split] = (x[:, None, :, :], y)
    return _finish("mnist", *splits["train"], *splits["test"], subset, seed)


def load_cifar10(directory, subset: Optional[int] = None, seed: int = 0, augment: bool = False) -> Dataset:
    d = Path(directory)
    parts = {}
    for split, names in (("train", CIFAR_TRAIN), ("test", CIFAR_TEST)):
        found = [d / n for n in names if (d / n).exists()]
        if not found:
            raise DataError(d / names[0], "file not found")
        xs, ys = zip(*(read_cifar_batch(p) for p in found))
        parts[split] = (np.concatenate(xs), np.concatenate(ys))
    return _finish("cifar10", *parts["train"], *parts["test"], subset, seed, augment)


def load_dataset(name: str, directory, subset=None, seed=0, augment=False) -> Dataset:
    if name == "mnist":
        return load_mnist(directory, subset, seed)
    if name in ("cifar10", "cifar-10"):
        return load_cifar10(directory, subset, seed, augment)
    raise ConfigError(f"unknown dataset {name!r}; choose mnist or cifar10", key="dataset.name")


# -- batching -------------------------------------------------------------
def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffle for one epoch, reseeded from ``(seed, epoch)``."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def train_batches(ds: Dataset, batch_size: int, seed: int, epoch: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Shuffled training batches; the last partial batch is dropped."""
    order = epoch_order(len(ds.y_train), seed, epoch)
    rng = np.random.default_rng([seed, epoch, 1]) if ds.augment else None
    for start in range(0, len(order) - batch_size + 1, batch_size):
        idx = order[start:start + batch_size]
        x = ds.x_train[idx]
        if rng is not None:
            x = augment_batch(x, rng)
        yield x, ds.y_train[idx]


def eval_batches(x: np.ndarray, y: np.ndarray, batch_size: int = 500):
    for start in range(0, len(y), batch_size):
        yield x[start:start + batch_size], y[start:start + batch_size]


def augment_batch(x: np.ndarray, rng, pad: int = 4) -> np.ndarray:
    """Random horizontal flip plus ``pad``-pixel pad-and-crop."""
    n, _, h, w = x.shape
    flip = rng.random(n) < 0.5
    x = np.where(flip[:, None, None, None], x[..., ::-1], x)
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, size=n)
    dx = rng.integers(0, 2 * pad + 1, size=n)
    out = np.empty_like(x)
    for i in range(n):
        out[i] = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
    return out


def steps_per_epoch(ds: Dataset, batch_size: int) -> int:
    return len(ds.y_train) // batch_size


# -- the bundled MNIST sample -------------------------------------------------
def write_mnist5k(directory, n_test: int = 1000, seed: int = 0) -> Path:
    """Write mlxtend's 5000-image MNIST sample as IDX files (train/test split).

    Requires the optional ``mlxtend`` package, which ships the sample.
    """
    try:
        import importlib.resources as resources

        src = resources.files("mlxtend.data") / "data" / "mnist_5k.csv.gz"
        with resources.as_file(src) as p:
            raw = np.loadtxt(p, delimiter=",", dtype=np.float64)
    except (ImportError, ModuleNotFoundError, FileNotFoundError) as exc:
        raise DataError("mlxtend:mnist_5k.csv.gz", f"MNIST sample unavailable ({exc}); pip install mlxtend") from exc
    images = raw[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = raw[:, -1].astype(np.uint8)
    order = np.random.default_rng(seed).permutation(len(labels))
    test, train = order[:n_test], order[n_test:]
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / MNIST_FILES["train"][0], images[train])
    write_idx_labels(out / MNIST_FILES["train"][1], labels[train])
    write_idx_images(out / MNIST_FILES["test"][0], images[test])
    write_idx_labels(out / MNIST_FILES["test"][1], labels[test])
    log.info("wrote %d train / %d test MNIST images to %s", len(train), len(test), out)
    return out
