"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Values are scalars, vectors or matrices (at most two axes). Every primitive
records a vector-Jacobian product for each parent; :func:`backward` replays
them in reverse topological order. Implicit broadcasting is limited to
scalar-with-array; row-vector broadcasting is spelled out with
:func:`add_row` / :func:`mul_row`.

Example:
    >>> x = Parameter(np.array(3.0), name="x")
    >>> value, grads = evaluate_with_gradients(lambda: x * x, [x])
    >>> float(value), float(grads["x"])
    (9.0, 6.0)
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Node",
    "Parameter",
    "NumericFault",
    "UnsupportedPrimitive",
    "ShapeError",
    "PRIMITIVES",
    "apply",
    "constant",
    "backward",
    "evaluate_with_gradients",
    "check_gradients",
]


class NumericFault(FloatingPointError):
    """A forward value or a finite-difference probe became NaN or infinite."""


class UnsupportedPrimitive(TypeError):
    """Raised when a graph is built from an operation the engine does not know."""


class ShapeError(ValueError):
    pass


class Node:
    __slots__ = ("value", "parents", "vjps", "op", "name", "requires_grad")
    __array_priority__ = 1000

    def __init__(self, value, parents=(), vjps=(), op="const", name=None):
        self.value = np.asarray(value, dtype=np.float64)
        if self.value.ndim > 2:
            raise ShapeError(f"{op}: at most two axes supported, got {self.value.shape}")
        self.parents = tuple(parents)
        self.vjps = tuple(vjps)
        self.op = op
        self.name = name
        self.requires_grad = any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = self.name or self.op
        return f"Node({label}, shape={self.shape})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise UnsupportedPrimitive("division by a graph node is not a supported primitive")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, power):
        if power == 2:
            return square(self)
        if power == 3:
            return cube(self)
        raise UnsupportedPrimitive(f"power {power!r} is not a supported primitive")

    @property
    def T(self):
        return transpose(self)


class Parameter(Node):
    """Trainable leaf. ``grad`` accumulates across backward passes until reset."""

    __slots__ = ("grad",)

    def __init__(self, value, name: str):
        super().__init__(np.array(value, dtype=np.float64), op="param", name=name)
        self.requires_grad = True
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape})"


def constant(value) -> Node:
    return value if isinstance(value, Node) else Node(value)


def _make(value, parents, vjps, op):
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        names = ", ".join(p.name or p.op for p in parents)
        raise NumericFault(f"non-finite value produced by '{op}' (inputs: {names})")
    return Node(value, parents, vjps, op)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

PRIMITIVES: dict[str, Callable[..., Node]] = {}


def primitive(fn):
    PRIMITIVES[fn.__name__.rstrip("_")] = fn
    return fn


def apply(name: str, *args, **kwargs) -> Node:
    """Build a node from a primitive looked up by name."""
    try:
        fn = PRIMITIVES[name]
    except KeyError:
        raise UnsupportedPrimitive(f"unsupported primitive '{name}'") from None
    return fn(*args, **kwargs)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _check_elementwise(op, a: Node, b: Node):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} (only scalar broadcasting is allowed)")


@primitive
def add(a, b) -> Node:
    a, b = constant(a), constant(b)
    _check_elementwise("add", a, b)
    return _make(
        a.value + b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
        "add",
    )


@primitive
def sub(a, b) -> Node:
    a, b = constant(a), constant(b)
    _check_elementwise("sub", a, b)
    return _make(
        a.value - b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
        "sub",
    )


@primitive
def mul(a, b) -> Node:
    a, b = constant(a), constant(b)
    _check_elementwise("mul", a, b)
    av, bv = a.value, b.value
    return _make(
        av * bv,
        (a, b),
        (lambda g: _unbroadcast(g * bv, a.shape), lambda g: _unbroadcast(g * av, b.shape)),
        "mul",
    )


@primitive
def add_row(x, r) -> Node:
    """``x[i, :] + r`` for a matrix ``x`` and a row vector ``r``."""
    x, r = constant(x), constant(r)
    if x.ndim != 2 or r.shape != (x.shape[1],):
        raise ShapeError(f"add_row: {x.shape} and {r.shape}")
    return _make(x.value + r.value, (x, r), (lambda g: g, lambda g: g.sum(axis=0)), "add_row")


@primitive
def mul_row(x, r) -> Node:
    """``x[i, :] * r`` for a matrix ``x`` and a row vector ``r``."""
    x, r = constant(x), constant(r)
    if x.ndim != 2 or r.shape != (x.shape[1],):
        raise ShapeError(f"mul_row: {x.shape} and {r.shape}")
    xv, rv = x.value, r.value
    return _make(xv * rv, (x, r), (lambda g: g * rv, lambda g: (g * xv).sum(axis=0)), "mul_row")


@primitive
def matmul(a, b) -> Node:
    a, b = constant(a), constant(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul: scalar operand")
    av, bv = a.value, b.value
    out = av @ bv

    def ga(g):
        if bv.ndim == 1:
            return np.multiply.outer(g, bv) if av.ndim == 2 else g * bv
        return g @ bv.T if av.ndim == 2 else bv @ g

    def gb(g):
        if av.ndim == 1:
            return np.multiply.outer(av, g) if bv.ndim == 2 else g * av
        return av.T @ g

    return _make(out, (a, b), (ga, gb), "matmul")


@primitive
def transpose(a) -> Node:
    a = constant(a)
    return _make(a.value.T, (a,), (lambda g: g.T,), "transpose")


def _unary(op, a, f, df_from):
    a = constant(a)
    with np.errstate(all="ignore"):  # non-finite results are reported by _make
        out = f(a.value)
    return _make(out, (a,), (lambda g: g * df_from(a.value, out),), op)


@primitive
def tanh(a) -> Node:
    return _unary("tanh", a, np.tanh, lambda x, y: 1.0 - y * y)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@primitive
def sigmoid(a) -> Node:
    return _unary("sigmoid", a, _sigmoid, lambda x, y: y * (1.0 - y))


@primitive
def relu(a) -> Node:
    # derivative at exactly 0 is taken as 0
    return _unary("relu", a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(float))


_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _gelu_grad(x, _):
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


@primitive
def gelu(a) -> Node:
    """GELU, tanh approximation."""
    return _unary("gelu", a, _gelu, _gelu_grad)


@primitive
def square(a) -> Node:
    return _unary("square", a, np.square, lambda x, y: 2.0 * x)


@primitive
def cube(a) -> Node:
    return _unary("cube", a, lambda x: x**3, lambda x, y: 3.0 * x * x)


@primitive
def sqrt(a) -> Node:
    return _unary("sqrt", a, np.sqrt, lambda x, y: 0.5 / y)


@primitive
def exp(a) -> Node:
    return _unary("exp", a, np.exp, lambda x, y: y)


@primitive
def log(a) -> Node:
    return _unary("log", a, np.log, lambda x, y: 1.0 / x)


@primitive
def abs_(a) -> Node:
    return _unary("abs", a, np.abs, lambda x, y: np.sign(x))


@primitive
def clip(a, lo: float, hi: float) -> Node:
    """Clamp to ``[lo, hi]``; gradient passes only strictly inside."""
    return _unary("clip", a, lambda x: np.clip(x, lo, hi), lambda x, y: ((x > lo) & (x < hi)).astype(float))


@primitive
def soft_threshold(w, theta) -> Node:
    """``sign(w) * max(0, |w| - theta)`` with a trainable or fixed ``theta``."""
    w, theta = constant(w), constant(theta)
    _check_elementwise("soft_threshold", w, theta)
    wv, tv = w.value, theta.value
    if np.any(tv < 0):
        raise ValueError("soft_threshold: theta must be >= 0")
    active = (np.abs(wv) > tv).astype(float)
    s = np.sign(wv)
    return _make(
        s * np.maximum(np.abs(wv) - tv, 0.0),
        (w, theta),
        (lambda g: g * active, lambda g: _unbroadcast(-g * s * active, theta.shape)),
        "soft_threshold",
    )


@primitive
def huber(e, delta: float) -> Node:
    """Elementwise Huber loss of residuals ``e``."""
    if delta <= 0:
        raise ValueError("huber: delta must be > 0")
    e = constant(e)
    ev = e.value
    quad = np.abs(ev) <= delta
    with np.errstate(all="ignore"):
        out = np.where(quad, 0.5 * ev * ev, delta * (np.abs(ev) - 0.5 * delta))
    return _make(out, (e,), (lambda g: g * np.where(quad, ev, delta * np.sign(ev)),), "huber")


@primitive
def sum_(a) -> Node:
    a = constant(a)
    shape = a.shape
    return _make(a.value.sum(), (a,), (lambda g: np.full(shape, float(g)),), "sum")


@primitive
def mean(a) -> Node:
    a = constant(a)
    shape, n = a.shape, max(a.value.size, 1)
    return _make(a.value.mean(), (a,), (lambda g: np.full(shape, float(g) / n),), "mean")


@primitive
def row_sum(a) -> Node:
    """Sum across columns: ``(n, m) -> (n,)``."""
    a = constant(a)
    if a.ndim != 2:
        raise ShapeError("row_sum expects a matrix")
    m = a.shape[1]
    return _make(a.value.sum(axis=1), (a,), (lambda g: np.repeat(g[:, None], m, axis=1),), "row_sum")


@primitive
def row_mean(a) -> Node:
    a = constant(a)
    if a.ndim != 2:
        raise ShapeError("row_mean expects a matrix")
    m = a.shape[1]
    return _make(a.value.mean(axis=1), (a,), (lambda g: np.repeat(g[:, None] / m, m, axis=1),), "row_mean")


@primitive
def col_mean(a) -> Node:
    """Average over rows: ``(n, m) -> (m,)``."""
    a = constant(a)
    if a.ndim != 2:
        raise ShapeError("col_mean expects a matrix")
    n = a.shape[0]
    return _make(a.value.mean(axis=0), (a,), (lambda g: np.repeat(g[None, :] / n, n, axis=0),), "col_mean")


@primitive
def take_rows(a, idx) -> Node:
    a = constant(a)
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return _make(a.value[idx], (a,), (vjp,), "take_rows")


@primitive
def row(a, i: int) -> Node:
    """Row ``i`` of a matrix as a vector."""
    a = constant(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[i] = g
        return out

    return _make(a.value[i], (a,), (vjp,), "row")


@primitive
def column(a, j: int) -> Node:
    a = constant(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, j] = g
        return out

    return _make(a.value[:, j], (a,), (vjp,), "column")


@primitive
def stack_columns(cols: Sequence) -> Node:
    """Stack equal-length vectors as the columns of a matrix."""
    cols = [constant(c) for c in cols]
    if any(c.ndim != 1 or c.shape != cols[0].shape for c in cols):
        raise ShapeError("stack_columns expects equal-length vectors")
    vjps = tuple((lambda g, j=j: g[:, j]) for j in range(len(cols)))
    return _make(np.stack([c.value for c in cols], axis=1), cols, vjps, "stack_columns")


@primitive
def softmax(a) -> Node:
    """Softmax over the last axis (row-wise for matrices)."""
    a = constant(a)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return p * (g - (g * p).sum(axis=-1, keepdims=True))

    return _make(p, (a,), (vjp,), "softmax")


@primitive
def frobenius_sq(a) -> Node:
    a = constant(a)
    av = a.value
    return _make(np.sum(av * av), (a,), (lambda g: 2.0 * float(g) * av,), "frobenius_sq")


@primitive
def kl_to_uniform(p) -> Node:
    """``sum_i p_i ln(k p_i)`` with ``0 ln 0 = 0``."""
    p = constant(p)
    pv = p.value
    k = pv.size
    pos = pv > 0
    safe = np.where(pos, pv, 1.0)
    out = np.sum(np.where(pos, pv * np.log(k * safe), 0.0))
    return _make(out, (p,), (lambda g: float(g) * np.where(pos, np.log(k * safe) + 1.0, 0.0),), "kl_to_uniform")


@primitive
def custom(value, parents: Sequence[Node], vjps: Sequence[Callable], op: str) -> Node:
    """Fused primitive supplied by a model layer with its own vector-Jacobian products."""
    return _make(value, [constant(p) for p in parents], vjps, op)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topological(out: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out: Node) -> None:
    """Accumulate d(out)/d(param) into every reachable :class:`Parameter`."""
    if out.value.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {out.shape}")
    grads = {id(out): np.ones_like(out.value)}
    for node in reversed(_topological(out)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.requires_grad:
                continue
            contrib = np.asarray(vjp(g), dtype=np.float64).reshape(parent.shape)
            key = id(parent)
            grads[key] = grads[key] + contrib if key in grads else contrib


def evaluate_with_gradients(expr: Callable[[], Node], params: Iterable[Parameter]):
    """Evaluate ``expr()`` and return ``(value, {name: gradient})``.

    Gradients of ``params`` are reset before the backward pass.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = expr()
    if not isinstance(out, Node):
        raise UnsupportedPrimitive("expression must return a graph node")
    backward(out)
    return float(out.value), {p.name: p.grad.copy() for p in params}


def check_gradients(expr: Callable[[], Node], params: Iterable[Parameter], epsilon: float = 1e-5) -> float:
    """Max over all parameter entries of ``|analytic - central| / max(1, |analytic|)``."""
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    params = list(params)
    _, analytic = evaluate_with_gradients(expr, params)
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        ana = analytic[p.name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = float(expr().value)
            flat[i] = orig - epsilon
            f_minus = float(expr().value)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericFault(f"non-finite perturbation result for {p.name}[{i}]")
            numeric = (f_plus - f_minus) / (2 * epsilon)
            worst = max(worst, abs(ana[i] - numeric) / max(1.0, abs(ana[i])))
    return worst
