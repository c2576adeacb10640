"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import math

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length, column_or_1d

from .errors import ShapeError


def check_images(X, channels=None, image_size=None) -> np.ndarray:
    """Coerce ``X`` to float32 NCHW.

    Accepts ``(N, C, H, W)``, ``(N, H, W)`` (one channel) and flattened
    ``(N, C*H*W)`` rows of square images. ``channels`` / ``image_size``
    pin the expected geometry once an estimator has been fitted.
    """
    X = np.asarray(X)
    if X.ndim == 2:
        X = check_array(X, dtype=np.float32)
        c = channels or 1
        side = math.isqrt(X.shape[1] // c) if X.shape[1] % c == 0 else 0
        if side * side * c != X.shape[1]:
            raise ShapeError("check_images", X.shape, detail=f"rows are not {c}-channel square images")
        X = X.reshape(len(X), c, side, side)
    elif X.ndim == 3:
        X = X[:, None, :, :]
    elif X.ndim != 4:
        raise ShapeError("check_images", X.shape, detail="expected 2, 3 or 4 dimensions")
    X = check_array(X, dtype=np.float32, allow_nd=True)
    if X.shape[2] != X.shape[3]:
        raise ShapeError("check_images", X.shape, detail="images must be square")
    if channels is not None and X.shape[1] != channels:
        raise ShapeError("check_images", X.shape, detail=f"expected {channels} channels")
    if image_size is not None and X.shape[2] != image_size:
        raise ShapeError("check_images", X.shape, detail=f"expected {image_size}x{image_size} images")
    return np.ascontiguousarray(X)


def check_xy(X, y):
    X = check_images(X)
    y = column_or_1d(y)
    check_consistent_length(X, y)
    return X, y


def channel_stats(X: np.ndarray):
    mean = X.mean(axis=(0, 2, 3)).astype(np.float32)
    std = X.std(axis=(0, 2, 3)).astype(np.float32)
    return mean, np.where(std > 0, std, 1.0).astype(np.float32)


def normalize(X: np.ndarray, mean, std) -> np.ndarray:
    shape = (1, -1, 1, 1)
    return ((X - np.asarray(mean).reshape(shape)) / np.asarray(std).reshape(shape)).astype(np.float32)
