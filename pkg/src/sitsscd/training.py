"""Focal loss, AdamW, the warmup schedule and the training loop."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data.augment import augment, subsample_months
from .data.sample import SitsSample
from .errors import ConfigError, DimensionError, MetricError, NumericError
from .inference import evaluate_samples
from .metrics import LabelSeries
from .tensor import Tape, Tensor, as_tensor, make_op


@dataclass
class TrainConfig:
    max_iters: int = 5000
    warmup_iters: int = 200
    peak_lr: float = 1e-4
    weight_decay: float = 0.01
    focal_gamma: float = 2.0
    batch_size: int = 4
    seed: int = 0
    months_per_sample: Optional[int] = None  # None: half of the available dates
    val_every: int = 250
    crop: Optional[int] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "constant"
    min_lr_ratio: float = 0.0
    flips: bool = True
    rotations: bool = True

    def __post_init__(self):
        if self.max_iters < 0 or self.warmup_iters < 0:
            raise ConfigError("iteration counts must be nonnegative")
        if self.warmup_iters > self.max_iters:
            raise ConfigError(f"warmup_iters {self.warmup_iters} exceeds max_iters {self.max_iters}")
        if not self.peak_lr > 0:
            raise ConfigError("peak_lr must be positive")
        if self.focal_gamma < 0 or self.weight_decay < 0:
            raise ConfigError("focal_gamma and weight_decay must be nonnegative")
        if self.batch_size < 1 or self.val_every < 1:
            raise ConfigError("batch_size and val_every must be positive")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ loss

def focal_loss(logits, gt, gamma: float = 2.0, ignore: Optional[np.ndarray] = None) -> Tensor:
    """Mean of ``-(1 - p_t)**gamma * log p_t`` over non-ignored pixels.

    ``logits`` is ``(..., K, H, W)``; ``gt`` is a :class:`LabelSeries` or an
    integer array of the same shape without the class axis.
    """
    logits = as_tensor(logits)
    if isinstance(gt, LabelSeries):
        labels, ignore = gt.labels, gt.ignore if ignore is None else ignore
    else:
        labels = np.asarray(gt)
    if gamma < 0:
        raise ConfigError("gamma must be nonnegative")
    z = logits.data
    if z.ndim < 3:
        raise DimensionError(f"logits need a class axis and two spatial axes, got {z.shape}")
    k = z.shape[-3]
    expected = z.shape[:-3] + z.shape[-2:]
    if labels.shape != expected:
        raise DimensionError(f"labels {labels.shape} do not match logits {z.shape} without class axis")
    valid = np.ones(expected, dtype=bool) if ignore is None else ~np.asarray(ignore, dtype=bool)
    if ignore is not None and valid.shape != expected:
        raise DimensionError(f"ignore mask {valid.shape} does not match labels {expected}")
    n = int(valid.sum())
    if n == 0:
        raise MetricError("every pixel is ignored; loss undefined")
    if labels[valid].min(initial=0) < 0 or labels[valid].max(initial=0) >= k:
        raise DimensionError(f"labels outside 0..{k - 1}")

    shifted = z - z.max(axis=-3, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-3, keepdims=True))
    log_p = shifted - lse
    safe = np.where(valid, labels, 0)
    log_pt = np.take_along_axis(log_p, np.expand_dims(safe, -3), axis=-3).squeeze(-3)
    pt = np.exp(log_pt)
    q = 1.0 - pt
    weight = q ** gamma
    per_pixel = np.where(valid, -weight * log_pt, 0.0)
    value = per_pixel.sum() / n

    def vjp(g):
        # d(pixel loss)/d(log p_t), then the softmax Jacobian
        if gamma == 0:
            dlogpt = -np.ones_like(log_pt)
        else:
            dq = np.where(q > 0, gamma * np.power(np.maximum(q, 1e-300), gamma - 1), 0.0)
            dlogpt = -weight + dq * pt * log_pt
        dlogpt = np.where(valid, dlogpt, 0.0) * (g / n)
        onehot = np.zeros_like(z)
        np.put_along_axis(onehot, np.expand_dims(safe, -3), 1.0, axis=-3)
        grad = np.expand_dims(dlogpt, -3) * (onehot - np.exp(log_p))
        return (grad.astype(z.dtype),)

    return make_op("focal_loss", np.asarray(value, dtype=z.dtype), [logits], vjp)


# ------------------------------------------------------------------ optimizer

@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


def adamw_step(params: dict, grads: dict, state: OptimizerState, lr: float) -> tuple[dict, OptimizerState]:
    """One decoupled-weight-decay Adam update; returns new params and the advanced state.

    Parameters without a gradient entry are treated as having zero gradient.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        elif m.shape != p.shape:
            raise DimensionError(f"moment for {name} has shape {m.shape}, parameter {p.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + state.eps) + state.weight_decay * p
        out[name] = (p - lr * update).astype(p.dtype)
    return out, state


def lr_schedule(iteration: int, config: TrainConfig) -> float:
    """Linear warmup from 0 to ``peak_lr``, then constant (or cosine decay if configured)."""
    if iteration < 0:
        raise ConfigError("iteration must be nonnegative")
    if config.warmup_iters and iteration < config.warmup_iters:
        return config.peak_lr * iteration / config.warmup_iters
    if config.schedule == "cosine":
        span = max(1, config.max_iters - config.warmup_iters)
        frac = min(1.0, (iteration - config.warmup_iters) / span)
        low = config.peak_lr * config.min_lr_ratio
        return low + (config.peak_lr - low) * 0.5 * (1 + math.cos(math.pi * frac))
    return config.peak_lr


# ------------------------------------------------------------------ loop

@dataclass
class TrainResult:
    params: dict
    best_iter: int
    best_val_scs: float
    log: list
    final_params: dict

    def log_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.log)


def make_batch(samples: Sequence[SitsSample], rng: np.random.Generator, config: TrainConfig):
    """Draw, augment and subsample ``batch_size`` tiles; returns images, days, labels, ignore."""
    picks = rng.integers(0, len(samples), size=config.batch_size)
    out = []
    for i in picks:
        s = samples[int(i)]
        n = config.months_per_sample or max(1, s.n_dates // 2)
        s = subsample_months(s, min(n, s.n_dates), rng)
        s = augment(s, rng, config.crop, config.flips, config.rotations)
        out.append(s)
    shapes = {(s.n_dates,) + s.images.shape[1:] for s in out}
    if len(shapes) != 1:
        raise DimensionError(f"batch tiles differ in shape: {sorted(shapes)}; set a crop size")
    return (np.stack([s.images for s in out]), np.stack([s.days for s in out]),
            np.stack([s.labels for s in out]), np.stack([s.ignore for s in out]))


def _round(x: float) -> float:
    return float(f"{x:.8g}")


def train_step(model, batch, config: TrainConfig, state: OptimizerState, lr: float):
    """Forward, focal loss, backward and one AdamW update; returns the loss value."""
    images, days, labels, ignore = batch
    leaves = model.leaf_tensors()
    model.bind(leaves)
    try:
        with Tape() as tape:
            logits = model.predict_series(Tensor(images), days)
            loss = focal_loss(logits, labels, config.focal_gamma, ignore)
        value = float(loss.item())
        if not math.isfinite(value):
            return value
        grads = tape.backward(loss)
    finally:
        model.unbind()
    named = {name: grads.get(t) for name, t in leaves.items()}
    model.params, _ = adamw_step(model.params, {k: g for k, g in named.items() if g is not None}, state, lr)
    return value


def train(model, train_samples: Sequence[SitsSample], val_samples: Sequence[SitsSample],
          config: TrainConfig, log_callback: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train ``model`` in place and return the best-validation-SCS parameters.

    Validation runs every ``val_every`` iterations and after the last one.
    A non-finite loss aborts with :class:`NumericError`; its ``state``
    attribute holds the last finite parameters.
    """
    if not train_samples:
        raise ConfigError("no training samples")
    rng = np.random.default_rng(config.seed)
    state = OptimizerState(beta1=config.beta1, beta2=config.beta2, eps=config.eps,
                           weight_decay=config.weight_decay)
    log: list = []
    best = (-math.inf, -1, {k: v.copy() for k, v in model.params.items()})

    def emit(record):
        log.append(record)
        if log_callback is not None:
            log_callback(record)

    for it in range(1, config.max_iters + 1):
        lr = lr_schedule(it, config)
        batch = make_batch(train_samples, rng, config)
        good = {k: v.copy() for k, v in model.params.items()}
        loss = train_step(model, batch, config, state, lr)
        record = {"iter": it, "loss": _round(loss), "lr": _round(lr)}
        if not math.isfinite(loss):
            emit(record)
            err = NumericError(f"loss became {loss} at iteration {it}")
            err.state = good
            err.log = log
            model.params = good
            raise err
        if val_samples and (it % config.val_every == 0 or it == config.max_iters):
            report = evaluate_samples(model, val_samples)
            record["val_scs"] = _round(report.scs)
            record["val_miou"] = _round(report.miou)
            if report.scs > best[0]:
                best = (report.scs, it, {k: v.copy() for k, v in model.params.items()})
        emit(record)

    final = {k: v.copy() for k, v in model.params.items()}
    if not val_samples:
        best = (math.nan, config.max_iters, final)
    return TrainResult(best[2], best[1], float(best[0]), log, final)


def random_baseline(shape, n_classes: int, rng: np.random.Generator) -> LabelSeries:
    """Independent uniform class per pixel and date."""
    if n_classes < 2:
        raise ConfigError("random baseline needs at least two classes")
    return LabelSeries(rng.integers(0, n_classes, size=tuple(shape)))
