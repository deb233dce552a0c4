"""Random crops, dihedral transforms and monthly subsampling for training."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import InputError
from .sample import SitsSample


def dihedral(array: np.ndarray, k: int, flip: bool) -> np.ndarray:
    """Rotate the last two axes by ``k`` quarter turns, after an optional horizontal flip."""
    if flip:
        array = array[..., ::-1]
    return np.ascontiguousarray(np.rot90(array, k, axes=(-2, -1)))


def augment(sample: SitsSample, rng: np.random.Generator, crop: Optional[int] = None,
            flips: bool = True, rotations: bool = True) -> SitsSample:
    """One random crop shared by all dates, then one of the 8 dihedral transforms.

    Images, labels and the ignore mask move together.
    """
    h, w = sample.spatial_shape
    if crop is not None:
        if crop > h or crop > w:
            raise InputError(f"crop {crop} larger than tile {h}x{w}")
        top = int(rng.integers(0, h - crop + 1))
        left = int(rng.integers(0, w - crop + 1))
        sample = sample.crop(top, left, crop, crop)
    flip = bool(rng.integers(0, 2)) if flips else False
    k = int(rng.integers(0, 4)) if rotations else 0
    if sample.spatial_shape[0] != sample.spatial_shape[1] and k % 2:
        k = 0  # quarter turns would change the shape of a non-square tile
    if not flip and k == 0:
        return sample
    return SitsSample(sample.aoi_id, dihedral(sample.images, k, flip), dihedral(sample.labels, k, flip),
                      sample.days, dihedral(sample.ignore, k, flip), sample.quarter, dict(sample.meta))


def subsample_months(sample: SitsSample, n: int, rng: np.random.Generator) -> SitsSample:
    """``n`` dates drawn without replacement, kept in chronological order."""
    t = sample.n_dates
    if n > t or n < 1:
        raise InputError(f"cannot draw {n} dates from {t}")
    if n == t:
        return sample
    idx = np.sort(rng.choice(t, size=n, replace=False))
    return sample.select_dates(idx)
