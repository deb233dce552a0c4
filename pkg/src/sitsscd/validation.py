"""Input checks for the estimator interface."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.utils.validation import check_array

from .data.sample import SitsSample, month_days
from .errors import DimensionError, InputError


def check_images(x, allow_batch: bool = True) -> np.ndarray:
    """Finite float32 array of shape ``(T, C, H, W)`` or ``(N, T, C, H, W)``."""
    arr = check_array(x, allow_nd=True, dtype=np.float32, ensure_all_finite=True, ensure_2d=False)
    if arr.ndim == 4 or (allow_batch and arr.ndim == 5):
        return arr
    raise DimensionError(f"expected T,C,H,W{' or N,T,C,H,W' if allow_batch else ''} images, got {arr.shape}")


def check_labels(y, shape: tuple, n_classes: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(y)
    if arr.shape != tuple(shape):
        raise DimensionError(f"labels {arr.shape} do not match {tuple(shape)}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise InputError("labels must be integer class indices")
        arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise InputError("labels must be nonnegative")
    if n_classes is not None and arr.size and arr.max() >= n_classes:
        raise InputError(f"label {arr.max()} outside 0..{n_classes - 1}")
    return arr


def check_days(days, n_dates: int, n_series: Optional[int] = None) -> np.ndarray:
    """Day offsets per series; ``None`` means consecutive months from the epoch."""
    if days is None:
        d = month_days(n_dates)
        return d if n_series is None else np.tile(d, (n_series, 1))
    d = np.asarray(days, dtype=np.int64)
    if n_series is not None and d.ndim == 1:
        d = np.tile(d, (n_series, 1))
    if d.shape[-1] != n_dates or (n_series is not None and d.shape != (n_series, n_dates)):
        raise DimensionError(f"days {d.shape} do not match {n_dates} dates")
    if np.any(np.diff(d, axis=-1) <= 0):
        raise InputError("days must be strictly increasing")
    return d


def as_samples(x, y=None, days=None, ignore=None) -> list[SitsSample]:
    """Normalize estimator inputs into a list of samples."""
    if isinstance(x, SitsSample):
        return [x]
    if isinstance(x, Sequence) and x and all(isinstance(s, SitsSample) for s in x):
        return list(x)
    images = check_images(x)
    if images.ndim == 4:
        images = images[None]
    n, t, _, h, w = images.shape
    if y is None:
        raise InputError("labels are required for array inputs")
    labels = check_labels(y, (n, t, h, w) if np.ndim(y) == 4 else (t, h, w))
    labels = labels.reshape(n, t, h, w)
    d = check_days(days, t, n)
    ign = None if ignore is None else np.asarray(ignore, dtype=bool).reshape(n, t, h, w)
    return [SitsSample(f"series_{i}", images[i], labels[i], d[i], None if ign is None else ign[i])
            for i in range(n)]
