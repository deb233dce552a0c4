"""Area-of-interest time series and their on-disk directory layout."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import DimensionError, FormatError, InputError
from ..metrics import LabelSeries
from .raster import load_raster, save_raster

EPOCH = dt.date(2018, 1, 1)


def month_days(n_months: int, start_year: int = 2018) -> np.ndarray:
    """Offsets from 2018-01-01 of the first day of ``n_months`` consecutive months."""
    out = []
    for m in range(n_months):
        year, month = start_year + m // 12, m % 12 + 1
        out.append((dt.date(year, month, 1) - EPOCH).days)
    return np.asarray(out, dtype=np.int64)


@dataclass
class SitsSample:
    """One area of interest: ``images (T, C, H, W)``, ``labels (T, H, W)``, ``days (T,)``."""

    aoi_id: str
    images: np.ndarray
    labels: np.ndarray
    days: np.ndarray
    ignore: Optional[np.ndarray] = None
    quarter: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels)
        self.days = np.asarray(self.days, dtype=np.int64)
        if self.images.ndim != 4:
            raise DimensionError(f"images must be T,C,H,W, got {self.images.shape}")
        t, _, h, w = self.images.shape
        if self.labels.shape != (t, h, w):
            raise DimensionError(f"labels {self.labels.shape} do not match images T,H,W {(t, h, w)}")
        if self.days.shape != (t,):
            raise DimensionError(f"{self.days.size} days for {t} dates")
        if np.any(np.diff(self.days) <= 0):
            raise InputError("days must be strictly increasing")
        if self.ignore is None:
            self.ignore = np.zeros((t, h, w), dtype=bool)
        else:
            self.ignore = np.asarray(self.ignore, dtype=bool)
            if self.ignore.shape != (t, h, w):
                raise DimensionError(f"ignore {self.ignore.shape} does not match labels {(t, h, w)}")

    @property
    def n_dates(self) -> int:
        return self.images.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.images.shape[2:]

    @property
    def series(self) -> LabelSeries:
        return LabelSeries(self.labels, self.ignore)

    def select_dates(self, index) -> "SitsSample":
        index = np.asarray(index)
        return SitsSample(self.aoi_id, self.images[index], self.labels[index], self.days[index],
                          self.ignore[index], self.quarter, dict(self.meta))

    def crop(self, top: int, left: int, height: int, width: int) -> "SitsSample":
        h, w = self.spatial_shape
        if height > h or width > w or top < 0 or left < 0 or top + height > h or left + width > w:
            raise InputError(f"crop {height}x{width} at ({top}, {left}) exceeds tile {h}x{w}")
        sl = (slice(None), slice(top, top + height), slice(left, left + width))
        return SitsSample(self.aoi_id, self.images[:, :, sl[1], sl[2]], self.labels[sl],
                          self.days, self.ignore[sl], self.quarter, dict(self.meta))

    def quarter_view(self, quarter: int) -> "SitsSample":
        """Quarter 1..4 in row-major order: 1 top-left, 2 top-right, 3 bottom-left, 4 bottom-right."""
        if quarter not in (1, 2, 3, 4):
            raise InputError(f"quarter must be 1..4, got {quarter}")
        h, w = self.spatial_shape
        hh, hw = h // 2, w // 2
        r, c = divmod(quarter - 1, 2)
        out = self.crop(r * hh, c * hw, hh, hw)
        out.quarter = quarter
        return out

    def date_range_view(self, start_day: Optional[int], stop_day: Optional[int]) -> "SitsSample":
        """Dates with ``start_day <= day < stop_day`` (open ends allowed)."""
        lo = -np.inf if start_day is None else start_day
        hi = np.inf if stop_day is None else stop_day
        idx = np.nonzero((self.days >= lo) & (self.days < hi))[0]
        if idx.size == 0:
            raise InputError(f"no dates in [{start_day}, {stop_day})")
        return self.select_dates(idx)


# ------------------------------------------------------------------ directory layout

def save_sample(root, sample: SitsSample) -> Path:
    d = Path(root) / sample.aoi_id
    d.mkdir(parents=True, exist_ok=True)
    save_raster(d / "images.sits", sample.images.astype(np.float32))
    save_raster(d / "labels.sits", sample.labels.astype(np.uint8))
    save_raster(d / "ignore.sits", sample.ignore.astype(np.uint8))
    (d / "days.json").write_text(json.dumps([int(x) for x in sample.days]))
    meta = {"aoi_id": sample.aoi_id, **sample.meta}
    (d / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2))
    return d


def load_sample(path) -> SitsSample:
    d = Path(path)
    try:
        meta = json.loads((d / "meta.json").read_text())
        days = json.loads((d / "days.json").read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{d}: {exc}") from exc
    aoi = meta.pop("aoi_id", d.name)
    return SitsSample(
        aoi_id=aoi,
        images=load_raster(d / "images.sits"),
        labels=load_raster(d / "labels.sits").astype(np.int64),
        days=np.asarray(days),
        ignore=load_raster(d / "ignore.sits").astype(bool),
        meta=meta,
    )


def load_dataset(root) -> list[SitsSample]:
    """All samples listed in ``manifest.json`` (or every subdirectory, sorted)."""
    root = Path(root)
    manifest = root / "manifest.json"
    if manifest.exists():
        ids = json.loads(manifest.read_text())["aoi_ids"]
    else:
        ids = sorted(p.name for p in root.iterdir() if (p / "meta.json").exists())
    return [load_sample(root / i) for i in ids]


def dataset_hash(samples: Sequence[SitsSample]) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(s.aoi_id.encode())
        for arr in (s.images, s.labels.astype(np.uint8), s.ignore, s.days):
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
