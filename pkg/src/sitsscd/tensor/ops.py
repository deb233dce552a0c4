"""Differentiable operations used by the network.

All ops accept and return :class:`Tensor`. They keep the dtype of their
inputs, so the same code runs at float32 for training and float64 for
gradient verification.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigError, DimensionError
from .autodiff import Tensor, as_tensor, make_op


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: tuple, b: tuple, name: str) -> tuple:
    if len(a) != len(b):
        raise DimensionError(f"{name}: rank mismatch {a} vs {b}")
    out = []
    for axis, (m, n) in enumerate(zip(a, b)):
        if m != n and m != 1 and n != 1:
            raise DimensionError(f"{name}: axis {axis} extents {m} and {n} do not broadcast")
        out.append(max(m, n))
    return tuple(out)


# --------------------------------------------------------------------- pointwise

def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_op("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    return make_op(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    return make_op(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    return make_op(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(x: Tensor, factor: float) -> Tensor:
    x = as_tensor(x)
    f = x.dtype.type(factor)
    return make_op("scale", x.data * f, (x,), lambda g: (g * f,))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            m != n for i, (m, n) in enumerate(zip(ref, t.shape)) if i != axis
        ):
            raise DimensionError(f"concat on axis {axis}: incompatible shapes {ref} and {t.shape}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_op(
        "concat",
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def pointwise(op_kind: str, *inputs, axis: int = 1) -> Tensor:
    """Dispatch by name: ``relu``, ``add``, ``mul`` or ``concat_axis``."""
    if op_kind == "relu":
        return relu(*inputs)
    if op_kind == "add":
        return add(*inputs)
    if op_kind == "mul":
        return mul(*inputs)
    if op_kind == "concat_axis":
        return concat(inputs, axis=axis)
    raise ConfigError(f"unknown pointwise op {op_kind!r}")


# --------------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return make_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def take(x: Tensor, index, axis: int) -> Tensor:
    """Select entries along ``axis`` (integer array or slice)."""
    x = as_tensor(x)
    axis = axis % x.ndim
    sel = (slice(None),) * axis + (index,)
    out = x.data[sel]

    def vjp(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        if isinstance(index, slice):
            gx[sel] = g
        else:
            np.add.at(gx, sel, g)
        return (gx,)

    return make_op("take", np.ascontiguousarray(out), (x,), vjp)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return make_op("sum", out, (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# --------------------------------------------------------------------- linear algebra

def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` applied over all leading axes of ``x``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2:
        raise DimensionError(f"fully_connected: weight must be 2-d, got {weight.shape}")
    dout, din = weight.shape
    if x.shape[-1] != din:
        raise DimensionError(
            f"fully_connected: input last axis {x.shape[-1]} != weight input axis {din}"
        )
    parents = [x, weight]
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (dout,):
            raise DimensionError(f"fully_connected: bias shape {bias.shape} != ({dout},)")
        out = out + bias.data
        parents.append(bias)

    def vjp(g):
        g2 = g.reshape(-1, dout)
        gx = g @ weight.data
        gw = g2.T @ x.data.reshape(-1, din)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_op("fully_connected", out, parents, vjp)


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must agree (size-1 broadcasts)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise DimensionError(f"batched_matmul: incompatible ranks {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"batched_matmul: inner extents differ ({a.shape[-1]} vs {b.shape[-2]})"
        )
    _broadcast_shape(a.shape[:-2], b.shape[:-2], "batched_matmul leading axes")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_op("batched_matmul", out, (a, b), vjp)


# --------------------------------------------------------------------- normalisation

def softmax_axis(x: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    x = as_tensor(x)
    if temperature <= 0:
        raise ConfigError("softmax temperature must be positive")
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for shape {x.shape}")
    inv_t = x.dtype.type(1.0 / temperature)
    z = x.data * inv_t
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return ((g - (g * y).sum(axis=axis, keepdims=True)) * y * inv_t,)

    return make_op("softmax", y, (x,), vjp)


def group_norm(
    x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> Tensor:
    """Normalise each (sample, channel group) to zero mean and unit variance."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise DimensionError(f"group_norm expects N,C,H,W input, got {x.shape}")
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ConfigError(f"group_norm: {c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"group_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = ((xg - mu) * inv_std).reshape(x.shape)
    out = xhat * gamma.data[:, None, None] + beta.data[:, None, None]
    m = xg.shape[2]

    def vjp(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = (g * gamma.data[:, None, None]).reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        dx = (
            inv_std
            / m
            * (m * dxhat - dxhat.sum(axis=2, keepdims=True) - xh * (dxhat * xh).sum(axis=2, keepdims=True))
        )
        return dx.reshape(x.shape), dgamma, dbeta

    return make_op("group_norm", out, (x, gamma, beta), vjp)


# --------------------------------------------------------------------- resampling

def bilinear_matrix(n: int, factor: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic ``(factor*n, n)`` interpolation matrix, half-pixel centres."""
    m = np.zeros((n * factor, n), dtype=dtype)
    for o in range(n * factor):
        src = max((o + 0.5) / factor - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n - 1)
        i1 = min(i0 + 1, n - 1)
        w1 = src - i0
        m[o, i0] += 1.0 - w1
        m[o, i1] += w1
    return m


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling of the last two axes by an integer factor."""
    x = as_tensor(x)
    if factor < 1:
        raise ConfigError("upsample factor must be >= 1")
    if factor == 1:
        return make_op("upsample", x.data, (x,), lambda g: (g,))
    h, w = x.shape[-2:]
    mh = bilinear_matrix(h, factor, x.dtype)
    mw = bilinear_matrix(w, factor, x.dtype)
    out = mh @ x.data @ mw.T
    return make_op("upsample", out, (x,), lambda g: (mh.T @ g @ mw,))


# --------------------------------------------------------------------- convolutions

def _pair_windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    for i in range(kh):
        for j in range(kw):
            yield i, j, (
                slice(None),
                slice(None),
                slice(i, i + stride * (ho - 1) + 1, stride),
                slice(j, j + stride * (wo - 1) + 1, stride),
            )


def conv2d(
    x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """2-d cross-correlation, zero padding, N,C,H,W layout."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4:
        raise DimensionError(f"conv2d: input must be N,Ci,H,W, got {x.shape}")
    if kernel.ndim != 4:
        raise DimensionError(f"conv2d: kernel must be Co,Ci,kh,kw, got {kernel.shape}")
    n, ci, h, w = x.shape
    co, kci, kh, kw = kernel.shape
    if kci != ci:
        raise DimensionError(f"conv2d: input channels (axis 1) {ci} != kernel axis 1 {kci}")
    if stride < 1 or padding < 0:
        raise ConfigError("conv2d: stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} exceeds padded extents {hp}x{wp} (axes H, W)"
        )
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = np.empty((n, ci, kh, kw, ho, wo), dtype=x.dtype)
    for i, j, sl in _pair_windows(xp, kh, kw, stride, ho, wo):
        cols[:, :, i, j] = xp[sl]
    cols = cols.reshape(n, ci * kh * kw, ho * wo)
    wmat = kernel.data.reshape(co, -1)
    out = np.matmul(wmat, cols)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (co,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} != ({co},)")
        out += bias.data[:, None]
        parents.append(bias)
    out = out.reshape(n, co, ho, wo)

    def vjp(g):
        g2 = g.reshape(n, co, ho * wo)
        gk = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(kernel.shape)
        gcols = np.matmul(wmat.T, g2).reshape(n, ci, kh, kw, ho, wo)
        gxp = np.zeros((n, ci, hp, wp), dtype=g.dtype)
        for i, j, sl in _pair_windows(gxp, kh, kw, stride, ho, wo):
            gxp[sl] += gcols[:, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=(0, 2))

    return make_op("conv2d", out, parents, vjp)


def conv_transpose2d(
    x: Tensor, kernel: Tensor, stride: int = 1, bias: Tensor | None = None
) -> Tensor:
    """Transposed convolution (adjoint of :func:`conv2d` without padding).

    ``kernel`` has layout Ci,Co,kh,kw and the output extent is
    ``(H - 1) * stride + kh``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4:
        raise DimensionError(f"conv_transpose2d: input must be N,Ci,H,W, got {x.shape}")
    if kernel.ndim != 4:
        raise DimensionError(f"conv_transpose2d: kernel must be Ci,Co,kh,kw, got {kernel.shape}")
    n, ci, h, w = x.shape
    kci, co, kh, kw = kernel.shape
    if kci != ci:
        raise DimensionError(f"conv_transpose2d: input channels (axis 1) {ci} != kernel axis 0 {kci}")
    if stride < 1:
        raise ConfigError("conv_transpose2d: stride must be >= 1")
    ho = (h - 1) * stride + kh
    wo = (w - 1) * stride + kw
    wmat = kernel.data.reshape(ci, -1)  # ci, co*kh*kw
    xf = x.data.reshape(n, ci, h * w)
    cols = np.matmul(wmat.T, xf).reshape(n, co, kh, kw, h, w)
    out = np.zeros((n, co, ho, wo), dtype=x.dtype)
    for i, j, sl in _pair_windows(out, kh, kw, stride, h, w):
        out[sl] += cols[:, :, i, j]
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (co,):
            raise DimensionError(f"conv_transpose2d: bias shape {bias.shape} != ({co},)")
        out += bias.data[:, None, None]
        parents.append(bias)

    def vjp(g):
        gcols = np.empty((n, co, kh, kw, h, w), dtype=g.dtype)
        for i, j, sl in _pair_windows(g, kh, kw, stride, h, w):
            gcols[:, :, i, j] = g[sl]
        gcols = gcols.reshape(n, co * kh * kw, h * w)
        gx = np.matmul(wmat, gcols).reshape(x.shape)
        gk = np.tensordot(xf, gcols, axes=([0, 2], [0, 2])).reshape(kernel.shape)
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return make_op("conv_transpose2d", out, parents, vjp)
