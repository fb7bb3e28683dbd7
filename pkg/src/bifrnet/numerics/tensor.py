"""Tensor with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor` whose ``_backward`` closure pushes
the output adjoint onto its parents. The graph is recorded implicitly; a
:class:`Tape` is the topologically ordered view of that graph that
:func:`backward` replays in reverse.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class GeometryError(ValueError):
    """Spatial arithmetic yields a non-integral or non-positive size."""


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None, _parents=(), op: str = "leaf"):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None and isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), op=op)
    if needs:
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------- tape


class Tape:
    """Topologically ordered record of the ops that produced ``root``."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        # iterative post-order DFS; deep recurrences overflow the Python stack
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor, tape: Tape | None = None) -> Tape:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad ancestor."""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return Tape(loss)
    tape = tape or Tape(loss)
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accumulate(node, g)
            continue
        if node.grad is not None:
            # intermediates that a caller asked to inspect
            node.grad += g
        for parent, pg in node._backward(g):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                pg = _unbroadcast(pg, parent.data.shape)
            if id(parent) in adjoints:
                adjoints[id(parent)] = adjoints[id(parent)] + pg
            else:
                adjoints[id(parent)] = pg
    return tape


# --------------------------------------------------------------- elementwise


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    return _make(a.data + b.data, (a, b), lambda g: ((a, g), (b, g)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    return _make(a.data - b.data, (a, b), lambda g: ((a, g), (b, -g)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: ((a, g * b.data if a.requires_grad else None), (b, g * a.data if b.requires_grad else None)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    out = a.data / b.data
    return _make(out, (a, b), lambda g: ((a, g / b.data), (b, -g * out / b.data)), "div")


def elementwise(kind: str, a, b) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: ((x, g * out),), "exp")


def log(x, floor: float = 0.0) -> Tensor:
    """Natural log; with ``floor > 0`` the input is clamped from below first
    and the clamped entries receive zero gradient."""
    x = as_tensor(x)
    if floor > 0.0:
        clamped = x.data < floor
        safe = np.where(clamped, floor, x.data)
        return _make(np.log(safe), (x,), lambda g: ((x, np.where(clamped, 0.0, g / safe)),), "log")
    return _make(np.log(x.data), (x,), lambda g: ((x, g / x.data),), "log")


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: ((x, 2.0 * g * x.data),), "square")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return _make(out, (x,), lambda g: ((x, g * out * (1.0 - out)),), "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_sigmoid(x) -> Tensor:
    """log(sigmoid(x)) without forming sigmoid; stable for large |x|."""
    x = as_tensor(x)
    z = x.data
    out = np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))
    return _make(out, (x,), lambda g: ((x, g * (1.0 - _sigmoid(z))),), "log_sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: ((x, g * (1.0 - out * out)),), "tanh")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: ((x, g * mask),), "relu")


def activation(kind: str, x) -> Tensor:
    try:
        fn = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# ------------------------------------------------------------- reductions


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((x, np.broadcast_to(g, x.shape)),)

    return _make(np.asarray(out), (x,), _bw, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / float(n))


# ------------------------------------------------------------------ shapes


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: ((x, g.reshape(orig)),), "reshape")


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    def _bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g) if _has_advanced(idx) else full.__setitem__(idx, g)
        return ((x, full),)

    return _make(np.array(x.data[idx]), (x,), _bw, "getitem")


def _has_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of zero tensors")
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(p.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: shapes {ref} and {p.shape} disagree off axis {axis}")
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=ax)

    def _bw(g):
        sl = [slice(None)] * g.ndim
        res = []
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            sl[ax] = slice(lo, hi)
            res.append((p, g[tuple(sl)]))
        return res

    return _make(out, parts, _bw, "concat")


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Stack C_i×H×W (or N×C_i×H×W) blocks along the channel axis."""
    parts = [as_tensor(p) for p in parts]
    ndim = parts[0].ndim
    if ndim not in (3, 4):
        raise DimensionError(f"concat_channels expects 3-D or 4-D parts, got {ndim}-D")
    spatial = parts[0].shape[-2:]
    for p in parts:
        if p.shape[-2:] != spatial or p.ndim != ndim:
            raise DimensionError(f"concat_channels: spatial mismatch {p.shape} vs {parts[0].shape}")
    return concat(parts, axis=ndim - 3)


def split_channels(x: Tensor, sizes: Iterable[int]) -> list[Tensor]:
    ax = x.ndim - 3
    out, lo = [], 0
    for s in sizes:
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(lo, lo + s)
        out.append(getitem(x, tuple(sl)))
        lo += s
    if lo != x.shape[ax]:
        raise DimensionError(f"split sizes sum to {lo}, channel axis is {x.shape[ax]}")
    return out


# ----------------------------------------------------------- normalisation


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def _bw(g):
        return ((x, out * (g - np.sum(g * out, axis=axis, keepdims=True))),)

    return _make(out, (x,), _bw, "softmax")


def layer_norm(x, gain, shift, eps: float = 1e-5) -> Tensor:
    """Normalise over the trailing ``gain.ndim`` axes, then scale and shift."""
    x, gain, shift = as_tensor(x), as_tensor(gain), as_tensor(shift)
    if gain.shape != shift.shape or x.shape[x.ndim - gain.ndim:] != gain.shape:
        raise DimensionError(f"layer_norm: gain {gain.shape} / shift {shift.shape} do not match input {x.shape}")
    axes = tuple(range(x.ndim - gain.ndim, x.ndim))
    n = float(np.prod(gain.shape))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + shift.data

    def _bw(g):
        gx = g * gain.data
        dx = inv * (gx - gx.sum(axis=axes, keepdims=True) / n - xhat * (gx * xhat).sum(axis=axes, keepdims=True) / n)
        return ((x, dx), (gain, g * xhat), (shift, g))

    return _make(out, (x, gain, shift), _bw, "layer_norm")


# ------------------------------------------------------------------ linear


def dense(x, W, b) -> Tensor:
    """``W @ x + b`` for x of shape (n,) or a batch (B, n)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise DimensionError(f"dense: x {x.shape}, W {W.shape}, b {b.shape}")
    out = x.data @ W.data.T + b.data

    def _bw(g):
        g2 = g.reshape(-1, W.shape[0])
        x2 = x.data.reshape(-1, W.shape[1])
        return ((x, g @ W.data), (W, g2.T @ x2), (b, g2.sum(axis=0)))

    return _make(out, (x, W, b), _bw, "dense")


def matmul(a, b) -> Tensor:
    """2-D matrix product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: ((a, g @ b.data.T), (b, a.data.T @ g)), "matmul")
