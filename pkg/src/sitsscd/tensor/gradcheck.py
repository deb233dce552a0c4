"""Central-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NumericError
from .autodiff import CHECK_DTYPE, Tape, Tensor


def _scalarize(out: Tensor, weights: np.ndarray | None):
    from . import ops

    if out.size == 1:
        return out
    return ops.sum(ops.mul(out, Tensor(weights)))


def grad_check(
    f: Callable[..., Tensor],
    x: Tensor | np.ndarray | Sequence,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Largest relative disagreement between analytic and numeric gradients.

    ``f`` maps one or more tensors to a tensor. Non-scalar outputs are
    contracted with a fixed random weighting so every output entry takes
    part. Inputs are promoted to float64. The error for each entry is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    xs = list(x) if isinstance(x, (list, tuple)) else [x]
    arrays = [np.array(getattr(v, "data", v), dtype=CHECK_DTYPE) for v in xs]

    probe = f(*[Tensor(a) for a in arrays])
    weights = None
    if probe.size != 1:
        weights = np.random.default_rng(seed).standard_normal(probe.shape)

    def value(arrs) -> float:
        out = _scalarize(f(*[Tensor(a) for a in arrs]), weights)
        return float(out.data)

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = _scalarize(f(*leaves), weights)
    grads = tape.backward(loss)

    worst = 0.0
    for k, (leaf, base) in enumerate(zip(leaves, arrays)):
        analytic = grads.get(leaf, np.zeros_like(base))
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value(arrays)
            flat[i] = orig - h
            down = value(arrays)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[i]
            if not (np.isfinite(a) and np.isfinite(numeric)):
                idx = np.unravel_index(i, base.shape)
                raise NumericError(
                    f"grad_check: non-finite gradient for input {k} at {tuple(int(j) for j in idx)}"
                )
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
