"""Reverse-mode differentiation over the tensor_core operations.

A :class:`Tensor` wraps a numpy array and remembers, for each parent, a
function mapping the output gradient to that parent's gradient
contribution.  :func:`backward` walks the graph once in reverse
topological order, summing contributions for nodes with several consumers.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from . import tensor_core as tc

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (inference)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "name")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, parents=(), name: str | None = None):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.name = name

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self):
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, like=self)))

    def __rsub__(self, other):
        return add(as_tensor(other, like=self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None and np.isscalar(x):
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(np.asarray(x))


def _node(value, *links) -> Tensor:
    """Create a result node; ``links`` are ``(parent, vjp)`` pairs."""
    live = tuple((p, fn) for p, fn in links if p.requires_grad)
    if _GRAD_ENABLED and live:
        return Tensor(value, requires_grad=True, parents=live)
    return Tensor(value)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that
    requires grad and return them as ``{leaf: grad}``."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
                leaves[node] = node.grad
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    return leaves


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    return _node(a.value + b.value,
                 (a, lambda g: _unbroadcast(g, a.shape)),
                 (b, lambda g: _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    return _node(a.value * b.value,
                 (a, lambda g: _unbroadcast(g * b.value, a.shape)),
                 (b, lambda g: _unbroadcast(g * a.value, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.value, (a, lambda g: -g))


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.value ** exponent
    return _node(out, (a, lambda g: g * exponent * a.value ** (exponent - 1)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return _node(out, (a, lambda g: g * out))


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0).astype(a.dtype), (a, lambda g: g * mask))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.value)
    return _node(out, (a, lambda g: g * out * (1 - out)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e))


# --------------------------------------------------------------------------
# reductions and shape
# --------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return _node(out, (a, vjp))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.value.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.value.reshape(shape), (a, lambda g: g.reshape(a.shape)))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.value.transpose(axes))
    return _node(out, (a, lambda g: g.transpose(inverse)))


def getitem(a: Tensor, index) -> Tensor:
    def vjp(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return full

    return _node(a.value[index], (a, vjp))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])
    links = []
    for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
        index = [slice(None)] * out.ndim
        index[axis] = slice(lo, hi)
        links.append((t, lambda g, idx=tuple(index): g[idx]))
    return _node(out, *links)


def merge_axes(a: Tensor, first: int, second: int) -> Tensor:
    return _node(tc.merge_axes(a.value, first, second), (a, lambda g: g.reshape(a.shape)))


def split_axis(a: Tensor, axis: int, factor: int) -> Tensor:
    return _node(tc.split_axis(a.value, axis, factor), (a, lambda g: g.reshape(a.shape)))


# --------------------------------------------------------------------------
# contraction, softmax, windows
# --------------------------------------------------------------------------

def contract(spec: str, *operands) -> Tensor:
    """Differentiable :func:`tensor_core.contract`."""
    ops = [as_tensor(o) for o in operands]
    ins, out = tc._parse_spec(spec, len(ops))
    value = tc.contract(spec, *[o.value for o in ops])
    links = []
    for i, (term, op) in enumerate(zip(ins, ops)):
        others = [j for j in range(len(ops)) if j != i]
        available = set(out).union(*(ins[j] for j in others))
        kept = "".join(ch for ch in term if ch in available)

        def vjp(g, i=i, term=term, kept=kept, others=others):
            sub = ",".join([out] + [ins[j] for j in others]) + "->" + kept
            r = np.einsum(sub, g, *[ops[j].value for j in others],
                          optimize=True)
            if kept != term:
                # labels summed only inside this operand: broadcast back
                r = r.reshape([ops[i].shape[k] if ch in kept else 1
                               for k, ch in enumerate(term)])
                r = np.broadcast_to(r, ops[i].shape).copy()
            return r

        links.append((op, vjp))
    return _node(value, *links)


def softmax(a: Tensor, axis: int) -> Tensor:
    out = tc.softmax_over_axis(a.value, axis)
    return _node(out, (a, lambda g: tc.softmax_vjp(out, g, axis)))


def slide_window_mac(values, kernel, padding=None) -> Tensor:
    values, kernel = as_tensor(values), as_tensor(kernel)
    out = tc.slide_window_mac(values.value, kernel.value, padding)
    cache = {}

    def grads(g):
        if cache.get("g") is not g:
            cache["g"] = g
            cache["r"] = tc.slide_window_mac_grads(
                values.value, kernel.value, g, padding,
                need_values=values.requires_grad, need_kernel=kernel.requires_grad)
        return cache["r"]

    return _node(out, (values, lambda g: grads(g)[0]), (kernel, lambda g: grads(g)[1]))


def window_apply(values, weights, window, padding=None) -> Tensor:
    values, weights = as_tensor(values), as_tensor(weights)
    out = tc.window_apply(values.value, weights.value, window, padding)
    cache = {}

    def grads(g):
        if cache.get("g") is not g:
            cache["g"] = g
            cache["r"] = tc.window_apply_grads(
                values.value, weights.value, window, g, padding,
                need_values=values.requires_grad, need_weights=weights.requires_grad)
        return cache["r"]

    return _node(out, (values, lambda g: grads(g)[0]), (weights, lambda g: grads(g)[1]))


# --------------------------------------------------------------------------
# network pieces
# --------------------------------------------------------------------------

def max_pool2(a: Tensor) -> Tensor:
    """2x2 max pooling over the last two axes (both must be even)."""
    *lead, h, w = a.shape
    if h % 2 or w % 2:
        raise tc.DimensionError(f"cannot pool odd spatial shape {(h, w)}")
    blocks = a.value.reshape(*lead, h // 2, 2, w // 2, 2)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        sel = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(sel, arg[..., None], g[..., None], axis=-1)
        sel = sel.reshape(*lead, h // 2, w // 2, 2, 2)
        return np.moveaxis(sel, -2, -3).reshape(a.shape)

    return _node(out, (a, vjp))


def upsample2(a: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the last two axes."""
    *lead, h, w = a.shape
    out = np.repeat(np.repeat(a.value, 2, axis=-2), 2, axis=-1)

    def vjp(g):
        return g.reshape(*lead, h, 2, w, 2).sum(axis=(-3, -1))

    return _node(out, (a, vjp))


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy in the stable logit form."""
    z = logits.value
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite logits in BCE")
    y = np.asarray(labels, dtype=z.dtype)
    if y.shape != z.shape:
        raise tc.DimensionError(f"logits {z.shape} vs labels {y.shape}")
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    out = np.asarray(per.sum() / n, dtype=z.dtype)
    return _node(out, (logits, lambda g: g * (_sigmoid(z) - y) / n))


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------

def finite_diff_check(f: Callable[..., Tensor], leaves: Sequence[np.ndarray],
                      eps: float = 1e-5, n_samples: int = 20, seed: int = 0,
                      per_leaf: bool = False):
    """Compare backward() against central differences.

    ``f`` maps Tensors (one per leaf) to a scalar Tensor.  Up to
    ``n_samples`` coordinates per leaf are drawn without replacement from a
    generator seeded with ``seed``.  The error of a coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``; the maximum is returned
    (or a list of per-leaf maxima when ``per_leaf``).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    leaves = [np.array(x, copy=True) for x in leaves]
    for x in leaves:
        tc.check_finite(x, "leaf")
    params = [Tensor(x, requires_grad=True) for x in leaves]
    loss = f(*params)
    tc.check_finite(loss.value, "f")
    backward(loss)
    rng = np.random.default_rng(seed)

    def evaluate(vals):
        with no_grad():
            v = f(*[Tensor(x) for x in vals]).value
        if not np.isfinite(v):
            raise FloatingPointError("f is not finite at a perturbed point")
        return float(v)

    worst = []
    for i, (x, p) in enumerate(zip(leaves, params)):
        analytic = np.zeros_like(x) if p.grad is None else p.grad
        count = min(n_samples, x.size)
        coords = rng.choice(x.size, size=count, replace=False)
        err = 0.0
        for flat in coords:
            idx = np.unravel_index(flat, x.shape)
            vals = list(leaves)
            bumped = x.copy()
            bumped[idx] = x[idx] + eps
            vals[i] = bumped
            up = evaluate(vals)
            bumped[idx] = x[idx] - eps
            down = evaluate(vals)
            numeric = (up - down) / (2 * eps)
            a = float(analytic[idx])
            err = max(err, abs(a - numeric) / max(1.0, abs(a)))
        worst.append(err)
    return worst if per_leaf else max(worst, default=0.0)
