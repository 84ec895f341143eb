"""Dense-tensor substrate on top of numpy arrays.

Every function here is pure: inputs are never modified and a fresh array is
returned.  Arrays are row-major (C order) throughout.

Sliding-window operations use the channels-first layout
``(N, C, *spatial)`` for values and ``(C_out, C_in, *window)`` for kernels.
"""
from __future__ import annotations

import itertools
import string

import numpy as np

from .errors import DimensionError  # noqa: F401  (re-exported)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
    return x


# --------------------------------------------------------------------------
# contraction
# --------------------------------------------------------------------------

def _parse_spec(spec: str, n_operands: int):
    if "->" not in spec:
        raise ValueError(f"contraction spec needs an explicit output: {spec!r}")
    lhs, out = spec.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != n_operands:
        raise ValueError(f"spec {spec!r} names {len(ins)} operands, got {n_operands}")
    for term in ins + [out]:
        if any(ch not in string.ascii_letters for ch in term):
            raise ValueError(f"bad axis label in {spec!r}")
        if len(set(term)) != len(term):
            raise ValueError(f"repeated axis label within one term of {spec!r}")
    missing = set(out) - set("".join(ins))
    if missing:
        raise ValueError(f"output axes {sorted(missing)} not present in any operand")
    return ins, out


def contract(spec: str, *operands: np.ndarray) -> np.ndarray:
    """Generalized contraction in einsum notation, e.g. ``"bik,bkj->bij"``.

    Labels shared between operands and kept in the output are batch axes;
    labels absent from the output are summed.  Every paired label must have
    one length across operands, otherwise :class:`DimensionError` names it.
    """
    ins, out = _parse_spec(spec, len(operands))
    lengths: dict[str, int] = {}
    for term, op in zip(ins, operands):
        op = np.asarray(op)
        if op.ndim != len(term):
            raise DimensionError(
                f"operand for {term!r} has {op.ndim} axes, expected {len(term)}")
        for label, n in zip(term, op.shape):
            if lengths.setdefault(label, n) != n:
                raise DimensionError(
                    f"axis {label!r} has length {lengths[label]} and {n}")
    return np.einsum(spec, *operands, optimize=True)


# --------------------------------------------------------------------------
# softmax
# --------------------------------------------------------------------------

def softmax_over_axis(x: np.ndarray, axis: int) -> np.ndarray:
    x = np.asarray(x)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_vjp(y: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    """Vector-Jacobian product of softmax, ``y * (g - <g, y>)``."""
    return y * (g - (g * y).sum(axis=axis, keepdims=True))


# --------------------------------------------------------------------------
# sliding windows
# --------------------------------------------------------------------------

def _normalize_padding(padding, window: tuple[int, ...]) -> list[tuple[int, int]]:
    if padding is None:
        return [(k // 2, k // 2) for k in window]
    if isinstance(padding, int):
        return [(padding, padding)] * len(window)
    pads = []
    for p in padding:
        pads.append((p, p) if isinstance(p, (int, np.integer)) else tuple(p))
    if len(pads) != len(window):
        raise DimensionError(
            f"padding given for {len(pads)} axes, window has {len(window)}")
    return pads


def _window_geometry(spatial, window, padding):
    pads = _normalize_padding(padding, window)
    out = []
    for ax, (n, k, (lo, hi)) in enumerate(zip(spatial, window, pads)):
        if lo < 0 or hi < 0:
            raise DimensionError(f"negative padding on window axis {ax}")
        m = n + lo + hi - k + 1
        if m < 1:
            raise DimensionError(
                f"window length {k} exceeds padded length {n + lo + hi} on axis {ax}")
        out.append(m)
    return pads, tuple(out)


def _pad(values: np.ndarray, pads) -> np.ndarray:
    if all(lo == 0 and hi == 0 for lo, hi in pads):
        return values
    lead = [(0, 0)] * (values.ndim - len(pads))
    return np.pad(values, lead + list(pads))


def _offset_slices(offset, out_spatial):
    return tuple(slice(o, o + m) for o, m in zip(offset, out_spatial))


def _flat_layout(values: np.ndarray, pads):
    """Pad, move channels first and flatten: ``(C, N * prod(padded))``."""
    padded = _pad(values, pads)
    flat = np.ascontiguousarray(np.swapaxes(padded, 0, 1))
    return flat.reshape(flat.shape[0], -1), padded.shape


def _shifts(window, padded_spatial):
    """Flat index shift of every window offset in the padded layout."""
    strides = np.cumprod((1,) + tuple(padded_spatial[::-1]))[:-1][::-1]
    for offset in itertools.product(*(range(k) for k in window)):
        yield offset, int(np.dot(offset, strides)) if offset else 0


def slide_window_mac(values: np.ndarray, kernel: np.ndarray, padding=None) -> np.ndarray:
    """Stride-1 cross-correlation with zero padding.

    ``values`` is ``(N, C_in, *spatial)`` and ``kernel`` is
    ``(C_out, C_in, *window)``; every trailing axis is a window axis (use a
    window length of 1 for axes that should not mix).  ``padding`` is
    ``None`` for "same" padding of odd windows, an int, or one entry per
    window axis (an int or a ``(lo, hi)`` pair).

    Returns ``(N, C_out, *spatial_out)``.
    """
    values = np.asarray(values)
    kernel = np.asarray(kernel)
    if values.ndim != kernel.ndim:
        raise DimensionError(
            f"values have {values.ndim} axes but kernel has {kernel.ndim}")
    if values.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"channel axis: values have {values.shape[1]}, kernel expects {kernel.shape[1]}")
    window = kernel.shape[2:]
    pads, out_spatial = _window_geometry(values.shape[2:], window, padding)
    flat, padded_shape = _flat_layout(values, pads)
    n, sp = padded_shape[0], padded_shape[2:]
    total = flat.shape[1]

    # Output is computed on the padded grid and cropped: position j reads
    # flat[:, j + shift], which stays inside one item for every kept j.
    c_out = kernel.shape[0]
    acc = np.zeros((c_out, total), dtype=np.result_type(values, kernel))
    for offset, shift in _shifts(window, sp):
        k_off = np.ascontiguousarray(kernel[(slice(None), slice(None)) + offset])
        span = total - shift
        acc[:, :span] += k_off @ flat[:, shift:]
    acc = acc.reshape((c_out, n) + tuple(sp))
    acc = acc[(slice(None), slice(None)) + tuple(slice(0, m) for m in out_spatial)]
    return np.ascontiguousarray(np.swapaxes(acc, 0, 1))


def slide_window_mac_grads(values: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray,
                           padding=None, need_values: bool = True,
                           need_kernel: bool = True):
    """Adjoints of :func:`slide_window_mac` w.r.t. values and kernel."""
    values = np.asarray(values)
    window = kernel.shape[2:]
    pads, out_spatial = _window_geometry(values.shape[2:], window, padding)
    flat, padded_shape = _flat_layout(values, pads)
    n, sp = padded_shape[0], padded_shape[2:]
    total = flat.shape[1]
    c_out, c_in = kernel.shape[:2]

    # embed the output gradient into the padded grid (zeros elsewhere)
    g = np.zeros((c_out, n) + tuple(sp), dtype=grad_out.dtype)
    g[(slice(None), slice(None)) + tuple(slice(0, m) for m in out_spatial)] = \
        np.swapaxes(grad_out, 0, 1)
    g = g.reshape(c_out, total)

    g_flat = np.zeros((c_in, total), dtype=grad_out.dtype) if need_values else None
    g_kern = np.zeros(kernel.shape, dtype=grad_out.dtype) if need_kernel else None
    for offset, shift in _shifts(window, sp):
        span = total - shift
        k_idx = (slice(None), slice(None)) + offset
        if need_values:
            g_flat[:, shift:] += np.ascontiguousarray(kernel[k_idx].T) @ g[:, :span]
        if need_kernel:
            g_kern[k_idx] = g[:, :span] @ flat[:, shift:].T
    if need_values:
        g_vals = g_flat.reshape((c_in, n) + tuple(sp))
        crop = (slice(None), slice(None)) + tuple(
            slice(lo, lo + m) for (lo, _), m in zip(pads, values.shape[2:]))
        g_vals = np.ascontiguousarray(np.swapaxes(g_vals[crop], 0, 1))
    else:
        g_vals = None
    return g_vals, g_kern


def window_apply(values: np.ndarray, weights: np.ndarray, window: tuple[int, ...],
                 padding=None) -> np.ndarray:
    """Windowed sum with per-position weights (a dynamic kernel).

    ``values`` is ``(N, U, C, *spatial)`` and ``weights`` is
    ``(N, U, P, *spatial_out)`` with ``P = prod(window)`` in row-major
    window order.  The result ``(N, C, *spatial_out)`` is::

        out[n, c, x] = sum_u sum_o weights[n, u, o, x] * padded[n, u, c, x + o]
    """
    values = np.asarray(values)
    weights = np.asarray(weights)
    window = tuple(window)
    if values.ndim - 3 != len(window) or weights.ndim != values.ndim:
        raise DimensionError(
            f"window of rank {len(window)} does not fit values {values.shape} / "
            f"weights {weights.shape}")
    pads, out_spatial = _window_geometry(values.shape[3:], window, padding)
    n_off = int(np.prod(window))
    expected = values.shape[:2] + (n_off,) + out_spatial
    if weights.shape != expected:
        raise DimensionError(f"weights shape {weights.shape}, expected {expected}")
    padded = _pad(values, pads)
    u = values.shape[1]
    out = np.zeros((values.shape[0], values.shape[2]) + out_spatial,
                   dtype=np.result_type(values, weights))
    for i, offset in enumerate(itertools.product(*(range(k) for k in window))):
        patch = padded[(slice(None),) * 3 + _offset_slices(offset, out_spatial)]
        w = weights[:, :, i, None]
        if u == 1:
            out += w[:, 0] * patch[:, 0]
        else:
            out += (w * patch).sum(axis=1)
    return out


def window_apply_grads(values: np.ndarray, weights: np.ndarray, window, grad_out: np.ndarray,
                       padding=None, need_values: bool = True, need_weights: bool = True):
    """Adjoints of :func:`window_apply`."""
    window = tuple(window)
    pads, out_spatial = _window_geometry(values.shape[3:], window, padding)
    padded = _pad(values, pads)
    g_vals = np.zeros(padded.shape, dtype=grad_out.dtype) if need_values else None
    g_w = np.empty(weights.shape, dtype=grad_out.dtype) if need_weights else None
    g = grad_out[:, None]  # (N, 1, C, *S)
    for i, offset in enumerate(itertools.product(*(range(k) for k in window))):
        sl = (slice(None),) * 3 + _offset_slices(offset, out_spatial)
        if need_values:
            g_vals[sl] += weights[:, :, i, None] * g
        if need_weights:
            g_w[:, :, i] = (padded[sl] * g).sum(axis=2)
    if need_values:
        crop = (slice(None),) * 3 + tuple(
            slice(lo, lo + n) for (lo, _), n in zip(pads, values.shape[3:]))
        g_vals = g_vals[crop]
    return g_vals, g_w


# --------------------------------------------------------------------------
# axis bookkeeping
# --------------------------------------------------------------------------

def merge_axes(x: np.ndarray, first: int, second: int) -> np.ndarray:
    """Merge two adjacent axes into one; data order is unchanged."""
    x = np.asarray(x)
    first %= x.ndim
    second %= x.ndim
    if second != first + 1:
        raise DimensionError(f"axes {first} and {second} are not adjacent")
    shape = x.shape[:first] + (x.shape[first] * x.shape[second],) + x.shape[second + 1:]
    return np.ascontiguousarray(x).reshape(shape)


def split_axis(x: np.ndarray, axis: int, factor: int) -> np.ndarray:
    """Split ``axis`` of length ``n`` into ``(n // factor, factor)``."""
    x = np.asarray(x)
    axis %= x.ndim
    n = x.shape[axis]
    if factor < 1 or n % factor:
        raise DimensionError(f"axis {axis} of length {n} is not divisible by {factor}")
    shape = x.shape[:axis] + (n // factor, factor) + x.shape[axis + 1:]
    return np.ascontiguousarray(x).reshape(shape)
