"""Small reverse-mode automatic differentiation engine.

Values are float64 numpy arrays (0-d for scalars). Operations executed while a
:class:`Tape` is active are recorded in creation order; :func:`backward` sweeps
that record in reverse and accumulates adjoints into the leaves.

Outside of an active tape the same operations run as plain numpy and nothing is
recorded.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class DomainError(ValueError):
    pass


class NonScalarOutput(ValueError):
    pass


_active: list["Tape"] = []


class Tape:
    """Records differentiable operations in topological (creation) order."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def reset(self):
        for node in self.nodes:
            node._parents = ()
            node._backward = None
        self.nodes = []


class Tensor:
    """A value in the computation graph.

    ``grad`` holds the adjoint after :func:`backward`; leaves are tensors that
    were not produced by a recorded operation (parameters, inputs).
    """

    __slots__ = ("value", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, value, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.value)

    def __float__(self):
        return float(self.value)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor({self.value!r}{tag})"

    def detach(self) -> "Tensor":
        return Tensor(self.value.copy())

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

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __abs__(self):
        return absolute(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


_val = value_of


def _record(value, parents: tuple, backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.name = None
    if _active:
        out._parents = parents
        out._backward = backward
        _active[-1].nodes.append(out)
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(node, g):
    if not isinstance(node, Tensor):
        return
    g = np.asarray(g)
    if node.grad is None:
        if g.shape == node.value.shape:
            node.grad = g
        else:
            node.grad = np.broadcast_to(g, node.value.shape).copy()
    else:
        node.grad = node.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _binary(op, av: np.ndarray, bv: np.ndarray) -> np.ndarray:
    try:
        return op(av, bv)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {av.shape} with {bv.shape}") from exc


# ---------------------------------------------------------------------------
# elementary operations


def add(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = _binary(np.add, av, bv)

    def bw(g):
        _accum(a, _unbroadcast(g, av.shape))
        _accum(b, _unbroadcast(g, bv.shape))

    return _record(out, (a, b), bw)


def sub(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = _binary(np.subtract, av, bv)

    def bw(g):
        _accum(a, _unbroadcast(g, av.shape))
        _accum(b, _unbroadcast(-g, bv.shape))

    return _record(out, (a, b), bw)


def mul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = _binary(np.multiply, av, bv)

    def bw(g):
        if isinstance(a, Tensor):
            _accum(a, _unbroadcast(g * bv, av.shape))
        if isinstance(b, Tensor):
            _accum(b, _unbroadcast(g * av, bv.shape))

    return _record(out, (a, b), bw)


def div(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = _binary(np.divide, av, bv)

    def bw(g):
        if isinstance(a, Tensor):
            _accum(a, _unbroadcast(g / bv, av.shape))
        if isinstance(b, Tensor):
            _accum(b, _unbroadcast(-g * out / bv, bv.shape))

    return _record(out, (a, b), bw)


def power(a, b) -> Tensor:
    """``a ** b``; either side may be a constant."""
    av, bv = _val(a), _val(b)
    if isinstance(b, Tensor) and np.any(av <= 0):
        raise DomainError("power with a differentiable exponent needs a positive base")
    out = _binary(np.power, av, bv)

    def bw(g):
        if isinstance(a, Tensor):
            _accum(a, _unbroadcast(g * bv * av ** (bv - 1.0), av.shape))
        if isinstance(b, Tensor):
            _accum(b, _unbroadcast(g * out * np.log(av), bv.shape))

    return _record(out, (a, b), bw)


def exp(a) -> Tensor:
    out = np.exp(_val(a))
    return _record(out, (a,), lambda g: _accum(a, g * out))


def log(a) -> Tensor:
    av = _val(a)
    if np.any(av <= 0):
        raise DomainError("log of a non-positive value")
    return _record(np.log(av), (a,), lambda g: _accum(a, g / av))


def sqrt(a) -> Tensor:
    av = _val(a)
    if np.any(av < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(av)
    return _record(out, (a,), lambda g: _accum(a, g * 0.5 / out))


def absolute(a) -> Tensor:
    av = _val(a)
    sign = np.where(av >= 0.0, 1.0, -1.0)
    return _record(np.abs(av), (a,), lambda g: _accum(a, g * sign))


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    av, bv = _val(a), _val(b)
    pick_a = _binary(np.less_equal, av, bv)

    def bw(g):
        if isinstance(a, Tensor):
            _accum(a, _unbroadcast(np.where(pick_a, g, 0.0), av.shape))
        if isinstance(b, Tensor):
            _accum(b, _unbroadcast(np.where(pick_a, 0.0, g), bv.shape))

    return _record(np.where(pick_a, av, bv), (a, b), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    av, bv = _val(a), _val(b)
    pick_a = _binary(np.greater_equal, av, bv)

    def bw(g):
        if isinstance(a, Tensor):
            _accum(a, _unbroadcast(np.where(pick_a, g, 0.0), av.shape))
        if isinstance(b, Tensor):
            _accum(b, _unbroadcast(np.where(pick_a, 0.0, g), bv.shape))

    return _record(np.where(pick_a, av, bv), (a, b), bw)


def clamp(x, lo, hi) -> Tensor:
    """``min(max(x, lo), hi)``."""
    return minimum(maximum(x, lo), hi)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching semantics (operands of ndim >= 2)."""
    av, bv = _val(a), _val(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeMismatch(f"matmul needs ndim >= 2, got {av.shape} @ {bv.shape}")
    try:
        out = np.matmul(av, bv)
    except ValueError as exc:
        raise ShapeMismatch(f"matmul {av.shape} @ {bv.shape}") from exc

    def bw(g):
        if isinstance(a, Tensor):
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape))
        if isinstance(b, Tensor):
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape))

    return _record(out, (a, b), bw)


def concat(items: Sequence, axis: int = 0) -> Tensor:
    vals = [_val(x) for x in items]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in vals])

    def bw(g):
        for x, lo, hi in zip(items, bounds[:-1], bounds[1:]):
            if isinstance(x, Tensor):
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                _accum(x, g[tuple(sl)])

    return _record(out, tuple(items), bw)


def stack(items: Sequence, axis: int = 0) -> Tensor:
    vals = [_val(x) for x in items]
    try:
        out = np.stack(vals, axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc

    def bw(g):
        for i, x in enumerate(items):
            if isinstance(x, Tensor):
                _accum(x, np.take(g, i, axis=axis))

    return _record(out, tuple(items), bw)


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice)) or i is Ellipsis or i is None for i in items)


def getitem(a, idx) -> Tensor:
    av = _val(a)
    out = np.array(av[idx], dtype=np.float64)
    basic = _is_basic(idx)

    def bw(g):
        full = np.zeros_like(av)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _accum(a, full)

    return _record(out, (a,), bw)


def reshape(a, shape) -> Tensor:
    av = _val(a)
    return _record(av.reshape(shape), (a,), lambda g: _accum(a, g.reshape(av.shape)))


def swapaxes(a, ax1: int = -1, ax2: int = -2) -> Tensor:
    return _record(np.swapaxes(_val(a), ax1, ax2), (a,),
                   lambda g: _accum(a, np.swapaxes(g, ax1, ax2)))


def reduce_sum(a, axis=None) -> Tensor:
    av = _val(a)
    out = np.asarray(av.sum(axis=axis), dtype=np.float64)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, av.shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), av.shape))

    return _record(out, (a,), bw)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    av = _val(a)
    scale = np.where(av >= 0.0, 1.0, slope)
    return _record(av * scale, (a,), lambda g: _accum(a, g * scale))


def elu(a, alpha: float = 1.0) -> Tensor:
    av = _val(a)
    neg = alpha * np.expm1(np.minimum(av, 0.0))
    pos = av > 0.0
    out = np.where(pos, av, neg)
    dx = np.where(pos, 1.0, neg + alpha)
    return _record(out, (a,), lambda g: _accum(a, g * dx))


def softmax(a, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along the last axis.

    ``mask`` (boolean, broadcastable) excludes entries, which receive weight
    exactly 0. Every row must keep at least one entry.
    """
    av = _val(a)
    if mask is None:
        e = np.exp(av - av.max(axis=-1, keepdims=True))
    else:
        z = np.where(mask, av, -np.inf)
        e = np.exp(z - z.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        _accum(a, out * (g - inner))

    return _record(out, (a,), bw)


def norm_last(a) -> Tensor:
    """Euclidean norm over the last axis."""
    av = _val(a)
    out = np.sqrt((av * av).sum(axis=-1))

    def bw(g):
        safe = np.where(out > 0.0, out, 1.0)
        _accum(a, (g / safe)[..., None] * av)

    return _record(out, (a,), bw)


def lerp_nodes(lo, hi, n: int) -> Tensor:
    """``n`` equally spaced values from ``lo`` to ``hi`` inclusive, on a new last axis."""
    if n < 2:
        raise ValueError("need at least two nodes")
    lov, hiv = _val(lo), _val(hi)
    frac = np.arange(n, dtype=np.float64) / (n - 1)
    lo_e, hi_e = lov[..., None], hiv[..., None]
    out = lo_e + (hi_e - lo_e) * frac
    # pin both ends so that lo and hi are reproduced exactly
    out[..., 0] = lov
    out[..., -1] = hiv

    def bw(g):
        _accum(lo, (g * (1.0 - frac)).sum(axis=-1))
        _accum(hi, (g * frac).sum(axis=-1))

    return _record(out, (lo, hi), bw)


def scatter(values, rows: np.ndarray, cols: np.ndarray, n: int) -> Tensor:
    """Write ``values[..., e]`` to entry ``(rows[e], cols[e])`` of zero ``(..., n, n)`` matrices."""
    vv = _val(values)
    if vv.shape[-1] != len(rows):
        raise ShapeMismatch(f"{vv.shape[-1]} values for {len(rows)} positions")
    out = np.zeros(vv.shape[:-1] + (n, n))
    out[..., rows, cols] = vv
    return _record(out, (values,), lambda g: _accum(values, g[..., rows, cols]))


# ---------------------------------------------------------------------------
# reverse sweep


def backward(output: Tensor, tape: Tape | None = None) -> dict[Tensor, np.ndarray]:
    """Populate adjoints of every leaf reachable from scalar ``output``.

    Returns a mapping leaf -> gradient. Leaves that do not influence the output
    are absent (their gradient is zero).
    """
    if output.value.size != 1:
        raise NonScalarOutput(f"output has shape {output.value.shape}")
    if tape is None:
        if not _active:
            raise RuntimeError("backward needs a tape")
        tape = _active[-1]
    leaves: dict[int, Tensor] = {}
    for node in tape.nodes:
        node.grad = None
        for p in node._parents:
            if isinstance(p, Tensor) and p._backward is None:
                p.grad = None
                leaves[id(p)] = p
    output.grad = np.ones_like(output.value)
    if output._backward is None:
        return {output: output.grad}
    for node in reversed(tape.nodes):
        if node.grad is not None:
            node._backward(node.grad)
    return {leaf: leaf.grad for leaf in leaves.values() if leaf.grad is not None}


def grad(fn: Callable[..., Tensor], *args) -> list[np.ndarray]:
    """Gradient of scalar ``fn(*args)`` with respect to each argument."""
    leaves = [Tensor(np.array(a, dtype=np.float64)) for a in args]
    with Tape() as tape:
        out = fn(*leaves)
        g = backward(out, tape)
    return [g.get(x, np.zeros_like(x.value)) for x in leaves]


def finite_difference(fn: Callable, args: Sequence, h: float = 1e-5) -> list[np.ndarray]:
    """Central finite-difference gradient of a scalar function (no tape)."""
    arrays = [np.array(a, dtype=np.float64) for a in args]
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        for j in np.ndindex(arr.shape):
            orig = arr[j]
            arr[j] = orig + h
            up = float(_val(fn(*arrays)))
            arr[j] = orig - h
            dn = float(_val(fn(*arrays)))
            arr[j] = orig
            g[j] = (up - dn) / (2 * h)
        out.append(g)
    return out


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState | None = None,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update applied in place; returns ``(params, state)``."""
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeMismatch(f"param {np.shape(p)} vs grad {np.shape(g)}")
    if state is None:
        state = AdamState()
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state
