"""Seeded synthetic land-cover time series.

Each AoI gets a value-noise class map, a palette (shared base colours
shifted per AoI by ``geo_drift``), a seasonal cycle per class and
channel, gaussian sensor noise, and disc-shaped change events that
overwrite the class from a random month onward until the monthly
changed-pixel fraction reaches ``change_rate``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..errors import ConfigError, GenerationError
from .sample import SitsSample, month_days

RATE_TOLERANCE = 0.2


@dataclass
class SyntheticWorldConfig:
    n_aoi: int = 16
    height: int = 64
    width: int = 64
    n_dates: int = 12
    n_classes: int = 4
    n_channels: int = 4
    seed: int = 0
    change_rate: float = 0.0128
    season_amp: float = 0.08
    geo_drift: float = 0.0
    noise_sigma: float = 0.05
    # 0 gives equal class shares in every AoI; >0 draws shares from Dirichlet(alpha)
    class_concentration: float = 0.0
    # per-year phase shift of the seasonal cycle; 0 keeps seasons identical across years
    season_drift: float = 0.0
    palette_low: float = 0.2
    palette_high: float = 0.8
    noise_cells: int = 4
    octaves: int = 4
    persistence: float = 0.5
    ignore_rate: float = 0.0

    def __post_init__(self):
        if min(self.n_aoi, self.height, self.width, self.n_dates, self.n_channels) < 1:
            raise ConfigError("all extents must be positive")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if not 0.0 <= self.change_rate <= 0.2:
            raise ConfigError(f"change_rate {self.change_rate} outside [0, 0.2]")
        if self.noise_sigma < 0 or self.season_amp < 0 or self.geo_drift < 0:
            raise ConfigError("noise_sigma, season_amp and geo_drift must be nonnegative")
        if not 0.0 <= self.ignore_rate < 1.0:
            raise ConfigError("ignore_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def value_noise(height: int, width: int, rng: np.random.Generator, cells: int = 4,
                octaves: int = 4, persistence: float = 0.5) -> np.ndarray:
    """Sum of smoothly interpolated random lattices, octave ``o`` at ``cells * 2**o`` cells."""
    out = np.zeros((height, width))
    amp = 1.0
    for o in range(octaves):
        n = cells * 2 ** o
        lattice = rng.random((n + 1, n + 1))
        ys = np.linspace(0, n, height, endpoint=False) + n / height / 2
        xs = np.linspace(0, n, width, endpoint=False) + n / width / 2
        y0 = np.floor(ys).astype(int)
        x0 = np.floor(xs).astype(int)
        fy = ys - y0
        fx = xs - x0
        sy = (fy * fy * (3 - 2 * fy))[:, None]
        sx = (fx * fx * (3 - 2 * fx))[None, :]
        y1 = np.minimum(y0 + 1, n)
        x1 = np.minimum(x0 + 1, n)
        top = lattice[y0][:, x0] * (1 - sx) + lattice[y0][:, x1] * sx
        bottom = lattice[y1][:, x0] * (1 - sx) + lattice[y1][:, x1] * sx
        out += amp * (top * (1 - sy) + bottom * sy)
        amp *= persistence
    return out


def quantize(field: np.ndarray, shares: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Cut a scalar field into classes with the given area shares, class order shuffled."""
    edges = np.quantile(field, np.cumsum(shares)[:-1])
    bands = np.searchsorted(edges, field, side="right")
    return rng.permutation(len(shares))[bands]


def _disc(height, width, cy, cx, radius):
    yy, xx = np.ogrid[:height, :width]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def count_flips(labels: np.ndarray) -> int:
    return int((labels[1:] != labels[:-1]).sum())


def inject_changes(labels: np.ndarray, rate: float, n_classes: int, rng: np.random.Generator,
                   max_radius: Optional[float] = None) -> np.ndarray:
    """Add disc change events until the flip count is within 10% of ``rate * H * W * (T-1)``."""
    t, h, w = labels.shape
    labels = labels.copy()
    if rate == 0:
        return labels
    if t < 2:
        raise GenerationError("changes need at least two dates")
    target = rate * h * w * (t - 1)
    lo, hi = 0.9 * target, 1.1 * target
    if hi < 1:
        raise GenerationError(
            f"change_rate {rate} asks for {target:.3f} changed pixels per tile; at least one is needed"
        )
    max_radius = max_radius or max(1.0, min(h, w) / 6)
    count = 0
    attempts = 0
    while count < lo:
        attempts += 1
        if attempts > 20000:
            raise GenerationError(f"could not reach change_rate {rate}: {count} of {target:.0f} flips")
        remaining = target - count
        radius = min(max_radius, max(0.5, np.sqrt(remaining / np.pi) * rng.uniform(0.4, 1.0)))
        month = int(rng.integers(1, t))
        cy, cx = rng.integers(0, h), rng.integers(0, w)
        new_class = int(rng.integers(0, n_classes))
        trial = labels.copy()
        trial[month:, _disc(h, w, cy, cx, radius)] = new_class
        c = count_flips(trial)
        if count < c <= hi:
            labels, count = trial, c
    return labels


def _ignore_mask(t, h, w, rate, rng):
    mask = np.zeros((t, h, w), dtype=bool)
    if rate == 0:
        return mask
    for k in range(t):
        while mask[k].mean() < rate:
            r = rng.uniform(2, max(3, min(h, w) / 5))
            mask[k] |= _disc(h, w, rng.integers(0, h), rng.integers(0, w), r)
    return mask


def synth_generate(config: SyntheticWorldConfig) -> list[SitsSample]:
    """Deterministic list of ``config.n_aoi`` samples."""
    cfg = config
    root = np.random.SeedSequence(cfg.seed)
    world_seq, *aoi_seqs = root.spawn(cfg.n_aoi + 1)
    world = np.random.default_rng(world_seq)
    k, c = cfg.n_classes, cfg.n_channels
    base_palette = world.uniform(cfg.palette_low, cfg.palette_high, (k, c))
    phase = world.uniform(0, 2 * np.pi, (k, c))
    phase_step = world.standard_normal((k, c))
    days = month_days(cfg.n_dates)
    month_of_year = np.arange(cfg.n_dates) % 12
    year = np.arange(cfg.n_dates) // 12

    samples = []
    width_digits = max(3, len(str(cfg.n_aoi - 1)))
    for i, seq in enumerate(aoi_seqs):
        rng = np.random.default_rng(seq)
        if cfg.class_concentration > 0:
            shares = rng.dirichlet(np.full(k, cfg.class_concentration))
        else:
            shares = np.full(k, 1.0 / k)
        field = value_noise(cfg.height, cfg.width, rng, cfg.noise_cells, cfg.octaves, cfg.persistence)
        base = quantize(field, shares, rng)
        labels = np.repeat(base[None], cfg.n_dates, axis=0)
        labels = inject_changes(labels, cfg.change_rate, k, rng)
        palette = base_palette + cfg.geo_drift * rng.standard_normal((k, c))

        # seasonal term per (date, class, channel)
        angle = (2 * np.pi * month_of_year / 12)[:, None, None] + phase[None] \
            + cfg.season_drift * year[:, None, None] * phase_step[None]
        colour = palette[None] + cfg.season_amp * np.sin(angle)  # T, K, C
        t_idx = np.arange(cfg.n_dates)[:, None, None]
        images = colour[t_idx, labels]  # T, H, W, C
        images = images + cfg.noise_sigma * rng.standard_normal(images.shape)
        images = np.clip(images, 0.0, 1.0).transpose(0, 3, 1, 2).astype(np.float32)
        ignore = _ignore_mask(cfg.n_dates, cfg.height, cfg.width, cfg.ignore_rate, rng)
        samples.append(SitsSample(
            aoi_id=f"aoi_{i:0{width_digits}d}",
            images=images,
            labels=labels.astype(np.int64),
            days=days,
            ignore=ignore,
            meta={"class_shares": [float(s) for s in shares]},
        ))
    return samples


def changed_fraction(samples) -> float:
    """Pooled fraction of pixels whose label differs from the previous month."""
    flips = sum(count_flips(s.labels) for s in samples)
    pairs = sum(s.labels[1:].size for s in samples)
    return flips / pairs if pairs else 0.0
