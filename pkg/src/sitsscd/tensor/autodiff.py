"""Dense tensors and a reverse-mode gradient tape.

Operations only record onto a tape while one is active::

    with Tape() as tape:
        y = ops.relu(ops.conv2d(x, w, b))
        loss = ops.sum(y)
    grads = tape.backward(loss)   # {leaf Tensor: ndarray}

Outside a tape every op is a plain numpy computation, which is what
inference uses.
"""

from __future__ import annotations

import itertools
import os
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError, NumericError

WORKING_DTYPE = np.float32
CHECK_DTYPE = np.float64

_state = threading.local()
_tape_ids = itertools.count()
_debug = os.environ.get("SCD_DEBUG", "") not in ("", "0")


def set_debug(enabled: bool) -> None:
    """Toggle the finiteness check run after every forward op."""
    global _debug
    _debug = bool(enabled)


def debug_enabled() -> bool:
    return _debug


class Tensor:
    """Immutable n-d array that may take part in gradient recording.

    The wrapped array is a read-only view: mutating a tensor in place is
    not supported, build a new one instead.
    """

    __slots__ = ("data", "requires_grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(WORKING_DTYPE)
        arr = arr.view()
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # (tape id, node index) for op outputs; None for leaves
        self.node: Optional[tuple[int, int]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]


class _Node:
    __slots__ = ("parents", "vjp", "shape")

    def __init__(self, parents, vjp, shape):
        self.parents = parents
        self.vjp = vjp
        self.shape = shape


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, so every node's parents precede
    it and a reverse sweep is a valid topological traversal.
    """

    def __init__(self):
        self.id = next(_tape_ids)
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise ContractError("tape stack corrupted: exiting a tape that is not on top")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: Sequence[Tensor], vjp: Callable) -> None:
        out.node = (self.id, len(self.nodes))
        out.requires_grad = True
        self.nodes.append(_Node(tuple(parents), vjp, out.shape))

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradients of a scalar ``loss`` with respect to every reachable leaf."""
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node is None:
            if loss.requires_grad:
                return {loss: np.ones_like(loss.data)}
            raise ContractError("loss was not produced on any tape")
        if loss.node[0] != self.id:
            raise ContractError("loss was recorded on a different tape")

        grads: dict[int, np.ndarray] = {loss.node[1]: np.ones(loss.shape, dtype=loss.dtype)}
        leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
        for idx in range(loss.node[1], -1, -1):
            g = grads.pop(idx, None)
            if g is None:
                continue
            node = self.nodes[idx]
            parent_grads = node.vjp(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ContractError(
                        f"vjp produced gradient of shape {pg.shape} for input {parent.shape}"
                    )
                if parent.node is not None and parent.node[0] == self.id:
                    j = parent.node[1]
                    grads[j] = grads[j] + pg if j in grads else pg
                else:
                    key = id(parent)
                    if key in leaves:
                        leaves[key] = (parent, leaves[key][1] + pg)
                    else:
                        leaves[key] = (parent, pg)
        return {t: g for t, g in leaves.values()}


def _stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    return tape.backward(loss)


def make_op(name: str, data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap a forward result and, when recording, attach its vector-Jacobian product.

    ``vjp(g)`` receives the output gradient and must return one array (or
    None) per parent, each shaped like that parent.
    """
    if _debug and not np.all(np.isfinite(data)):
        bad = np.argwhere(~np.isfinite(data))[0]
        raise NumericError(f"{name}: non-finite output at index {tuple(int(i) for i in bad)}")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, parents, vjp)
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        if dtype is not None and x.dtype != dtype:
            return Tensor(x.data.astype(dtype), requires_grad=x.requires_grad)
        return x
    return Tensor(x, dtype=dtype)
