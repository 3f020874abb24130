"""Dense tensors with tape-based reverse-mode differentiation.

Every op takes :class:`Tensor` operands, computes its value eagerly with
numpy and, when a :class:`Tape` is active on the current thread, appends the
result to that tape.  :func:`backward` sweeps the tape in reverse creation
order, which is a fixed topological order, so gradient accumulation is
deterministic.

Shapes must match exactly for binary elementwise ops.  Where a value has to
be repeated, use :func:`broadcast_to` explicitly.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_local = threading.local()

# Inputs to ``log`` at or below zero are clamped here outside debug mode, so the
# result is about -708 instead of -inf.
LOG_FLOOR = np.finfo(np.float64).tiny


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "parents", "requires_grad", "name", "op", "_fwd", "_bwd")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.parents: tuple[Tensor, ...] = ()
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._fwd = None
        self._bwd = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name=None, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name, dtype=dtype)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


class Tape:
    """Ordered record of the ops executed while it is active.

    Use as a context manager; tapes nest per thread, innermost wins.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded node from its parents' current values."""
        out = []
        for node in self.nodes:
            value = node._fwd(*[p.data for p in node.parents])
            node.data = value
            out.append(value)
        return out


def _stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_tape():
    """Suspend recording on this thread (evaluation and generation)."""
    saved = _stack()[:]
    _local.tapes = []
    try:
        yield
    finally:
        _local.tapes = saved


def _debug() -> bool:
    return getattr(_local, "debug", False)


@contextmanager
def debug_mode(enabled=True):
    """Raise on non-finite op outputs and on ``log`` of non-positive values."""
    prev = _debug()
    _local.debug = enabled
    try:
        yield
    finally:
        _local.debug = prev


def _node(op: str, parents: Sequence[Tensor], fwd: Callable, bwd: Callable) -> Tensor:
    value = fwd(*[p.data for p in parents])
    out = Tensor.__new__(Tensor)
    out.data = value
    out.parents = tuple(parents)
    out.requires_grad = any(p.requires_grad for p in parents)
    out.name = None
    out.op = op
    out._fwd = fwd
    out._bwd = bwd
    if _debug() and not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite output from {op}")
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append(out)
    return out


def _same_shape(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _node("add", (a, b), np.add, lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _node("sub", (a, b), np.subtract, lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul", a, b)
    return _node("mul", (a, b), np.multiply, lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("div", a, b)
    return _node(
        "div",
        (a, b),
        np.divide,
        lambda g: (g / b.data, -g * a.data / (b.data * b.data)),
    )


def neg(a: Tensor) -> Tensor:
    return _node("neg", (a,), np.negative, lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a fixed real number."""
    return _node("scale", (a,), lambda x: x * c, lambda g: (g * c,))


def shift(a: Tensor, c: float) -> Tensor:
    """Add a fixed real number."""
    return _node("shift", (a,), lambda x: x + c, lambda g: (g,))


def square(a: Tensor) -> Tensor:
    return _node("square", (a,), np.square, lambda g: (2.0 * g * a.data,))


def exp(a: Tensor) -> Tensor:
    out = _node("exp", (a,), np.exp, lambda g: (g * out.data,))
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        if _debug():
            raise DomainError("log of non-positive value")

    def fwd(x):
        return np.log(np.maximum(x, LOG_FLOOR))

    def bwd(g):
        return (g / np.maximum(a.data, LOG_FLOOR),)

    return _node("log", (a,), fwd, bwd)


def _logistic(x):
    # branch form: never exponentiates a positive number
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logistic(a: Tensor) -> Tensor:
    out = _node("logistic", (a,), _logistic, lambda g: (g * out.data * (1.0 - out.data),))
    return out


def tanh(a: Tensor) -> Tensor:
    out = _node("tanh", (a,), np.tanh, lambda g: (g * (1.0 - out.data * out.data),))
    return out


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""

    def bwd(g):
        s = out.data
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    out = _node("softmax", (a,), _softmax, bwd)
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; gradient is zero where clipping is active."""

    def bwd(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)

    return _node("clamp", (a,), lambda x: np.clip(x, lo, hi), bwd)


def maximum(a: Tensor, floor: float) -> Tensor:
    return _node(
        "maximum", (a,), lambda x: np.maximum(x, floor), lambda g: (g * (a.data >= floor),)
    )


# ------------------------------------------------------------------ reductions


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    """Sum over ``axis`` (all axes by default, giving a 0-d tensor)."""
    shape = a.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node("sum", (a,), lambda x: np.sum(x, axis=axis), bwd)


def mean(a: Tensor) -> Tensor:
    return scale(sum(a), 1.0 / a.data.size)


# ----------------------------------------------------------------- structural


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    return _node("reshape", (a,), lambda x: x.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise DimensionError(f"transpose: need rank >= 2, got shape {a.shape}")
    return _node(
        "transpose", (a,), lambda x: np.swapaxes(x, -1, -2), lambda g: (np.swapaxes(g, -1, -2),)
    )


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit numpy-style broadcast; the gradient sums over repeated axes."""
    shape = tuple(shape)
    src = a.shape
    try:
        np.broadcast_shapes(src, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {src} to {shape}") from None
    lead = len(shape) - len(src)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(src) if n == 1 and shape[lead + i] != 1
    )

    def bwd(g):
        return (g.sum(axis=axes).reshape(src),)

    return _node("broadcast_to", (a,), lambda x: np.broadcast_to(x, shape).copy(), bwd)


def concat(parts: Sequence[Tensor], axis=-1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    ref = list(parts[0].shape)
    ax = axis % len(ref)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != len(ref) or other[:ax] + other[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise DimensionError(f"concat: shape mismatch {tuple(ref)} vs {p.shape}")
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node("concat", parts, lambda *xs: np.concatenate(xs, axis=ax), bwd)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """``a[..., start:stop]``."""

    def bwd(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        return (full,)

    return _node("slice", (a,), lambda x: x[..., start:stop], bwd)


def split_last(a: Tensor, sizes: Iterable[int]) -> list[Tensor]:
    out, start = [], 0
    for n in sizes:
        out.append(slice_last(a, start, start + n))
        start += n
    if start != a.shape[-1]:
        raise DimensionError(f"split_last: sizes sum to {start}, last axis is {a.shape[-1]}")
    return out


# --------------------------------------------------------------------- linear


def linear(W: Tensor, bias: Tensor, a: Tensor) -> Tensor:
    """``W @ a + bias`` for a vector ``a``, row-wise for a batch ``(n, in)``."""
    if W.ndim != 2 or bias.ndim != 1 or a.ndim not in (1, 2):
        raise DimensionError(f"linear: bad ranks W{W.shape} bias{bias.shape} a{a.shape}")
    if W.shape[1] != a.shape[-1] or W.shape[0] != bias.shape[0]:
        raise DimensionError(f"linear: shape mismatch W{W.shape} bias{bias.shape} a{a.shape}")

    def fwd(w, b, x):
        return x @ w.T + b

    def bwd(g):
        x = a.data
        if x.ndim == 1:
            return np.outer(g, x), g, W.data.T @ g
        return g.T @ x, g.sum(axis=0), g @ W.data

    return _node("linear", (W, bias, a), fwd, bwd)


def matmul(P: Tensor, Q: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must agree exactly."""
    if (
        P.ndim < 2
        or P.ndim != Q.ndim
        or P.shape[:-2] != Q.shape[:-2]
        or P.shape[-1] != Q.shape[-2]
    ):
        raise DimensionError(f"matmul: shape mismatch {P.shape} vs {Q.shape}")

    def bwd(g):
        return g @ np.swapaxes(Q.data, -1, -2), np.swapaxes(P.data, -1, -2) @ g

    return _node("matmul", (P, Q), np.matmul, bwd)


# ---------------------------------------------------------------------- losses


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Per-element ``-[x log s(c) + (1-x) log(1-s(c))]`` in the stable form
    ``max(c,0) - c x + log(1 + exp(-|c|))``."""
    target = np.asarray(target, dtype=logits.dtype)
    if target.shape != logits.shape:
        raise DimensionError(f"bce_with_logits: shape mismatch {logits.shape} vs {target.shape}")

    def fwd(c):
        return np.maximum(c, 0) - c * target + np.log1p(np.exp(-np.abs(c)))

    def bwd(g):
        return (g * (_logistic(logits.data) - target),)

    return _node("bce_with_logits", (logits,), fwd, bwd)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-row negative log-probability of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != logits.shape[:1]:
        raise DimensionError(f"softmax_cross_entropy: logits {logits.shape} labels {labels.shape}")
    rows = np.arange(labels.shape[0])

    def fwd(z):
        m = z.max(axis=-1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=-1))
        return lse - z[rows, labels]

    def bwd(g):
        d = _softmax(logits.data)
        d[rows, labels] -= 1.0
        return (d * g[:, None],)

    return _node("softmax_cross_entropy", (logits,), fwd, bwd)


# -------------------------------------------------------------------- backward


def backward(root: Tensor, params: Iterable[Tensor] | None = None, tape: Tape | None = None):
    """Reverse sweep from a scalar ``root``.

    Returns a dict mapping each tensor in ``params`` to its gradient array;
    parameters the root does not depend on get exact zeros.  Without
    ``params`` every leaf reached with ``requires_grad`` is returned.
    """
    if root.data.size != 1:
        raise DimensionError(f"backward: root must be scalar, got shape {root.shape}")
    tape = tape or active_tape()
    if tape is None:
        raise RuntimeError("backward: no active tape")
    if root.op != "leaf" and (not tape.nodes or root not in _tail_set(tape, root)):
        raise RuntimeError("backward: root was not recorded on this tape")

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node._bwd(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.op == "leaf":
                leaves[id(parent)] = parent
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if root.op == "leaf":
        leaves[id(root)] = root

    if params is None:
        return {p: grads[id(p)] for p in leaves.values()}
    return {
        p: grads[id(p)].reshape(p.shape) if id(p) in grads else np.zeros_like(p.data)
        for p in params
    }


def _tail_set(tape: Tape, root: Tensor):
    # cheap membership check: the root is normally the last node recorded
    if tape.nodes[-1] is root:
        return (root,)
    return tape.nodes
