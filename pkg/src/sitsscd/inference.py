"""Sub-sequence inference schemes, prediction assembly and change maps."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data.raster import save_raster
from .data.sample import SitsSample
from .errors import ConfigError, DimensionError, SchemeError
from .metrics import ChangeSeries, LabelSeries, MetricsReport, ScdConfusion, argmax_labels, derive_change

KINDS = ("contiguous", "strided", "custom")


@dataclass(frozen=True)
class SplitScheme:
    """Group id per date; dates sharing an id are forwarded together, in date order."""

    assignment: tuple
    kind: str = "custom"
    group_len: Optional[int] = None

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or a.size == 0:
            raise SchemeError("assignment must be a nonempty vector")
        if not np.issubdtype(a.dtype, np.integer):
            raise SchemeError("group ids must be integers")
        if self.kind not in KINDS:
            raise SchemeError(f"unknown scheme kind {self.kind!r}")
        object.__setattr__(self, "assignment", tuple(int(v) for v in a))

    @property
    def n_dates(self) -> int:
        return len(self.assignment)

    def groups(self) -> list[np.ndarray]:
        """Date indices per group, groups ordered by first date."""
        a = np.asarray(self.assignment)
        ids = list(dict.fromkeys(a.tolist()))
        return [np.nonzero(a == g)[0] for g in ids]

    def to_json(self) -> str:
        return json.dumps({"assignment": list(self.assignment), "kind": self.kind, "group_len": self.group_len})

    @classmethod
    def from_json(cls, text: str) -> "SplitScheme":
        d = json.loads(text)
        if isinstance(d, list):
            return cls(tuple(d))
        return cls(tuple(d["assignment"]), d.get("kind", "custom"), d.get("group_len"))


def make_scheme(n_dates: int, group_len: int, kind: str = "contiguous") -> SplitScheme:
    """Consecutive blocks (``contiguous``) or round-robin ``t mod (T / len)`` (``strided``)."""
    if kind not in ("contiguous", "strided"):
        raise ConfigError(f"make_scheme builds contiguous or strided schemes, not {kind!r}")
    if group_len < 1 or n_dates < 1 or n_dates % group_len:
        raise ConfigError(f"group length {group_len} does not divide {n_dates} dates")
    t = np.arange(n_dates)
    if kind == "contiguous":
        a = t // group_len
    else:
        a = t % (n_dates // group_len)
    return SplitScheme(tuple(a), kind, group_len)


def block_scheme(n_dates: int, block: int, n_groups: int) -> SplitScheme:
    """Runs of ``block`` dates dealt cyclically into ``n_groups`` groups."""
    if block < 1 or n_groups < 1:
        raise ConfigError("block and n_groups must be positive")
    a = (np.arange(n_dates) // block) % n_groups
    if len(set(a.tolist())) != n_groups:
        raise ConfigError(f"{n_dates} dates cannot fill {n_groups} groups with blocks of {block}")
    sizes = np.bincount(a)
    kind = "contiguous" if block * n_groups == n_dates else "strided" if block == 1 else "custom"
    return SplitScheme(tuple(a), kind, int(sizes[0]) if (sizes == sizes[0]).all() else None)


# (sequence length, block size) rows for a 24-date series; blocks scale with T
_TABLE2_ROWS = (
    (6, 6), (6, 1),
    (8, 8), (8, 1),
    (12, 12), (12, 6), (12, 4), (12, 3), (12, 2), (12, 1),
    (24, 24),
)


def table2_schemes(n_dates: int = 24) -> list[tuple[str, SplitScheme]]:
    """The sub-sequence patterns of the sequence-length study, rescaled to ``n_dates``.

    Rows whose lengths or blocks do not scale to an integer are skipped.
    """
    out = []
    for seq_len, block in _TABLE2_ROWS:
        if (seq_len * n_dates) % 24 or (block * n_dates) % 24:
            continue
        length, blk = seq_len * n_dates // 24, block * n_dates // 24
        if length < 1 or blk < 1:
            continue
        scheme = block_scheme(n_dates, blk, n_dates // length)
        out.append((f"len{length}_block{blk}", scheme))
    return out


def _pad_to(x: np.ndarray, multiple: int, axes=(-2, -1)) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = x.shape[axes[0]], x.shape[axes[1]]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    pad = [(0, 0)] * x.ndim
    pad[axes[0] % x.ndim] = (0, ph)
    pad[axes[1] % x.ndim] = (0, pw)
    mode = "reflect" if ph < h and pw < w else "symmetric"
    return np.pad(x, pad, mode=mode), (h, w)


def _forward_group(model, images: np.ndarray, days: np.ndarray, tile: Optional[int]) -> np.ndarray:
    """Logits ``(t, K, H, W)`` for one group, tiled spatially when ``tile`` is set."""
    multiple = model.config.spatial_multiple
    if tile is None:
        padded, (h, w) = _pad_to(images, multiple)
        out = model.predict_series(padded, days).data
        return out[..., :h, :w]
    if tile % multiple:
        raise ConfigError(f"tile {tile} must be a multiple of {multiple}")
    padded, (h, w) = _pad_to(images, tile)
    t, _, hp, wp = padded.shape
    out = None
    for top in range(0, hp, tile):
        for left in range(0, wp, tile):
            piece = model.predict_series(padded[:, :, top:top + tile, left:left + tile], days).data
            if out is None:
                out = np.empty((t, piece.shape[1], hp, wp), dtype=piece.dtype)
            out[:, :, top:top + tile, left:left + tile] = piece
    return out[..., :h, :w]


def infer(model, sample, scheme: Optional[SplitScheme] = None, tile: Optional[int] = None,
          days: Optional[Sequence[int]] = None) -> np.ndarray:
    """Per-date logits ``S (T, K, H, W)`` with each scheme group forwarded independently.

    ``sample`` is a :class:`SitsSample` or a ``(T, C, H, W)`` array (then
    ``days`` is required).
    """
    if isinstance(sample, SitsSample):
        images, days = sample.images, sample.days
    else:
        images = np.asarray(sample, dtype=np.float32)
        if days is None:
            raise ConfigError("days are required for raw image arrays")
        days = np.asarray(days)
    if images.ndim != 4:
        raise DimensionError(f"images must be T,C,H,W, got {images.shape}")
    t = images.shape[0]
    if scheme is None:
        scheme = SplitScheme(tuple([0] * t), "contiguous", t)
    if scheme.n_dates != t:
        raise SchemeError(f"scheme covers {scheme.n_dates} dates, series has {t}")
    out = None
    written = np.zeros(t, dtype=int)
    for idx in scheme.groups():
        if len(idx) > model.config.t_max and not model.config.collapses_time:
            raise SchemeError(f"group of {len(idx)} dates exceeds t_max={model.config.t_max}")
        logits = _forward_group(model, images[idx], days[idx], tile)
        if out is None:
            out = np.empty((t,) + logits.shape[1:], dtype=logits.dtype)
        out[idx] = logits
        written[idx] += 1
    if not (written == 1).all():
        raise SchemeError(f"dates {np.nonzero(written != 1)[0].tolist()} were not written exactly once")
    return out


def predict_labels(logits: np.ndarray, ignore: Optional[np.ndarray] = None) -> LabelSeries:
    return LabelSeries(argmax_labels(logits, axis=1), ignore)


def predict_change(logits: np.ndarray) -> ChangeSeries:
    """Change between successive argmax maps of ``(T, K, H, W)`` logits."""
    logits = np.asarray(getattr(logits, "data", logits))
    if logits.ndim != 4:
        raise DimensionError(f"logits must be T,K,H,W, got {logits.shape}")
    return derive_change(predict_labels(logits))


def evaluate_samples(model, samples: Sequence[SitsSample], scheme: Optional[SplitScheme] = None,
                     tile: Optional[int] = None, anchor: str = "later",
                     aggregation: str = "global") -> MetricsReport:
    """Pooled scores of ``model`` over ``samples``."""
    total = ScdConfusion(model.config.n_classes)
    for s in samples:
        logits = infer(model, s, scheme, tile)
        pred = predict_labels(logits, s.ignore)
        total = total + ScdConfusion.from_series(pred, s.series, model.config.n_classes, anchor)
    return total.report(aggregation)


def export_labels(path, logits: np.ndarray) -> Path:
    """Write argmax labels of ``(T, K, H, W)`` logits as a u8 raster."""
    labels = argmax_labels(logits, axis=1)
    if labels.max(initial=0) > 255:
        raise ConfigError("more than 256 classes cannot be stored as u8")
    save_raster(path, labels.astype(np.uint8))
    return Path(path)
