"""Lambda+ layers: global, local and inter-slice lambdas.

Feature volumes are channels-last, ``(b, t, h, w, c)``.  Per-pixel
intermediates keep the pixel axes in front:

* queries ``Q``: ``(b, t, h, w, k)``
* keys ``K``: ``(b, t, h, w, k, u)``; values ``V``: ``(b, t, h, w, v, u)``
* global lambda: ``(b, t, k, v)`` (one matrix per slice)
* local / inter-slice lambdas: ``(b, t, h, w, k, v)``

Three evaluation routes give the same numbers:

``forward_naive``
    Per-pixel loops over the context areas.  Slow; the reference.
``forward_fast``
    Whole-volume contractions and convolutions that materialize every
    per-pixel lambda before applying it to the queries.
``forward_fused``
    Applies the queries to the position tables first, so the per-pixel
    ``k x v`` lambdas are never stored.  Used inside the network.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .tensor_core import DimensionError


class Variant(str, enum.Enum):
    TWO_D = "2d"
    THREE_D = "3d"
    TWO_POINT_FIVE_D = "2.5d"


@dataclass(frozen=True)
class LambdaPlusConfig:
    c: int
    k: int
    v: int
    u: int = 1
    r: int = 3
    t_k: int = 3
    variant: Variant = Variant.TWO_POINT_FIVE_D

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        for name in ("c", "k", "v", "u", "r", "t_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.r % 2 == 0 or self.t_k % 2 == 0:
            raise ValueError(f"kernel sizes must be odd (r={self.r}, t_k={self.t_k})")

    @property
    def local_window(self) -> tuple[int, int, int]:
        """Local context window over (t, h, w)."""
        depth = self.t_k if self.variant is Variant.THREE_D else 1
        return depth, self.r, self.r

    @property
    def has_inter_slice(self) -> bool:
        return self.variant is Variant.TWO_POINT_FIVE_D

    @property
    def e_shape(self) -> tuple[int, ...]:
        return (self.k, self.u) + self.local_window

    @property
    def f_shape(self) -> tuple[int, ...] | None:
        return (self.k, self.u, self.t_k) if self.has_inter_slice else None


@dataclass
class LambdaPlusWeights:
    """Learnable tables of one layer (arrays or Tensors).

    ``e[:, :, dt, dh, dw]`` weights the context pixel at offset
    ``(dt - D//2, dh - r//2, dw - r//2)`` from the target; ``f[:, :, dt]``
    the pixel ``dt - t_k//2`` slices away at the same (h, w).
    """
    w_q: np.ndarray  # (c, k)
    w_k: np.ndarray  # (c, k, u)
    w_v: np.ndarray  # (c, v, u)
    e: np.ndarray    # (k, u, D, r, r)
    f: np.ndarray | None = None  # (k, u, t_k)

    def as_dict(self) -> dict:
        d = {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "e": self.e}
        if self.f is not None:
            d["f"] = self.f
        return d


def init_weights(config: LambdaPlusConfig, rng: np.random.Generator,
                 dtype=np.float64) -> LambdaPlusWeights:
    c, k, v, u = config.c, config.k, config.v, config.u
    bound = 1 / math.sqrt(c)
    w_q = rng.uniform(-bound, bound, (c, k))
    w_k = rng.uniform(-bound, bound, (c, k, u))
    w_v = rng.uniform(-bound, bound, (c, v, u))
    # E and F weight one sum over every context offset, so both share the
    # variance-preserving scale of that combined sum
    n_offsets = int(np.prod(config.local_window))
    if config.has_inter_slice:
        n_offsets += config.t_k
    std = 1 / math.sqrt(n_offsets * u)
    e = rng.normal(0.0, std, config.e_shape)
    f = rng.normal(0.0, std, config.f_shape) if config.has_inter_slice else None
    cast = (lambda a: None if a is None else a.astype(dtype))
    return LambdaPlusWeights(cast(w_q), cast(w_k), cast(w_v), cast(e), cast(f))


def check_weights(w: LambdaPlusWeights, config: LambdaPlusConfig) -> None:
    expected = {
        "w_q": (config.c, config.k),
        "w_k": (config.c, config.k, config.u),
        "w_v": (config.c, config.v, config.u),
        "e": config.e_shape,
    }
    for name, shape in expected.items():
        got = tuple(np.shape(_raw(getattr(w, name))))
        if got != shape:
            raise DimensionError(f"{name} has shape {got}, expected {shape}")
    if config.has_inter_slice:
        if w.f is None:
            raise DimensionError("2.5d variant needs an inter-slice table f")
        got = tuple(np.shape(_raw(w.f)))
        if got != config.f_shape:
            raise DimensionError(f"f has shape {got}, expected {config.f_shape}")


# --------------------------------------------------------------------------
# building blocks (autodiff)
# --------------------------------------------------------------------------

def project_qkv(x, w: LambdaPlusWeights):
    """1x1 projections of the self-context into queries, keys and values."""
    x = ad.as_tensor(x)
    c = np.shape(_raw(w.w_q))[0]
    if x.shape[-1] != c:
        raise DimensionError(f"input has {x.shape[-1]} channels, layer expects {c}")
    q = ad.contract("bthwc,ck->bthwk", x, w.w_q)
    keys = ad.contract("bthwc,cku->bthwku", x, w.w_k)
    vals = ad.contract("bthwc,cvu->bthwvu", x, w.w_v)
    return q, keys, vals


def normalize_keys(keys) -> Tensor:
    """Softmax over the pixels of each slice, per (k, u) coordinate."""
    keys = ad.as_tensor(keys)
    b, t, h, w_, k, u = keys.shape
    flat = ad.reshape(keys, (b, t, h * w_, k, u))
    return ad.reshape(ad.softmax(flat, axis=2), keys.shape)


def global_lambda(keys_norm, vals) -> Tensor:
    return ad.contract("bthwku,bthwvu->btkv", keys_norm, vals)


def local_lambda(vals, e, config: LambdaPlusConfig) -> Tensor:
    """Per-pixel local lambdas via a (1, D, r, r) convolution that treats
    the value axis as a unit-stride spatial axis."""
    vals = ad.as_tensor(vals)
    e = ad.as_tensor(e)
    d, r, _ = config.local_window
    # (b, t, h, w, v, u) -> (b, u, v, t, h, w)
    cube = ad.transpose(vals, (0, 5, 4, 1, 2, 3))
    kernel = ad.reshape(e, (config.k, config.u, 1, d, r, r))
    lam = ad.slide_window_mac(cube, kernel, padding=(0, d // 2, r // 2, r // 2))
    # (b, k, v, t, h, w) -> (b, t, h, w, k, v)
    return ad.transpose(lam, (0, 3, 4, 5, 1, 2))


def inter_slice_lambda(vals, f, config: LambdaPlusConfig) -> Tensor:
    """Per-pixel inter-slice lambdas: pixels go to the batch axis and a
    (1, t_k) convolution runs along the slices."""
    if not config.has_inter_slice:
        raise ValueError(f"inter-slice lambda is not defined for variant {config.variant.value}")
    if f is None:
        raise ValueError("missing inter-slice table f")
    vals = ad.as_tensor(vals)
    b, t, h, w_, v, u = vals.shape
    # (b, t, h, w, v, u) -> ((b h w), u, v, t)
    rows = ad.reshape(ad.transpose(vals, (0, 2, 3, 5, 4, 1)), (b * h * w_, u, v, t))
    kernel = ad.reshape(ad.as_tensor(f), (config.k, u, 1, config.t_k))
    lam = ad.slide_window_mac(rows, kernel, padding=(0, config.t_k // 2))
    lam = ad.reshape(lam, (b, h, w_, config.k, v, t))
    return ad.transpose(lam, (0, 5, 1, 2, 3, 4))


def apply_lambdas(q, lam_g, lam_l, lam_s=None) -> Tensor:
    """y_n = q_n^T (global + local [+ inter-slice])."""
    lam_g = ad.as_tensor(lam_g)
    b, t, k, v = lam_g.shape
    total = ad.reshape(lam_g, (b, t, 1, 1, k, v)) + lam_l
    if lam_s is not None:
        total = total + lam_s
    return ad.contract("bthwk,bthwkv->bthwv", q, total)


def _check_input(x, config: LambdaPlusConfig):
    shape = x.shape
    if len(shape) != 5:
        raise DimensionError(f"expected a (b, t, h, w, c) volume, got shape {shape}")
    if shape[-1] != config.c:
        raise DimensionError(f"input has {shape[-1]} channels, config says {config.c}")


def forward_fast(x, w: LambdaPlusWeights, config: LambdaPlusConfig) -> Tensor:
    x = ad.as_tensor(x)
    _check_input(x, config)
    check_weights(w, config)
    q, keys, vals = project_qkv(x, w)
    keys = normalize_keys(keys)
    lam_g = global_lambda(keys, vals)
    lam_l = local_lambda(vals, w.e, config)
    lam_s = inter_slice_lambda(vals, w.f, config) if config.has_inter_slice else None
    return apply_lambdas(q, lam_g, lam_l, lam_s)


def forward_fused(x, w: LambdaPlusWeights, config: LambdaPlusConfig) -> Tensor:
    x = ad.as_tensor(x)
    _check_input(x, config)
    check_weights(w, config)
    q, keys, vals = project_qkv(x, w)
    keys = normalize_keys(keys)
    lam_g = global_lambda(keys, vals)
    y = ad.contract("bthwk,btkv->bthwv", q, lam_g)

    cube = ad.transpose(vals, (0, 5, 4, 1, 2, 3))  # (b, u, v, t, h, w)
    window = config.local_window
    table = ad.reshape(ad.as_tensor(w.e), (config.k, config.u, int(np.prod(window))))
    coeff = ad.contract("bthwk,kuo->buothw", q, table)
    pos = ad.window_apply(cube, coeff, window)  # (b, v, t, h, w)
    if config.has_inter_slice:
        coeff_s = ad.contract("bthwk,kuo->buothw", q, w.f)
        pos = pos + ad.window_apply(cube, coeff_s, (config.t_k, 1, 1))
    return y + ad.transpose(pos, (0, 2, 3, 4, 1))


# --------------------------------------------------------------------------
# reference loops
# --------------------------------------------------------------------------

def _raw(a):
    return None if a is None else np.asarray(a.value if isinstance(a, Tensor) else a)


def naive_lambdas(x, w: LambdaPlusWeights, config: LambdaPlusConfig) -> dict:
    """Per-pixel queries and lambdas computed directly from their
    definitions, one target pixel at a time."""
    x = np.asarray(_raw(x), dtype=np.float64)
    _check_input(x, config)
    check_weights(w, config)
    w_q, w_k, w_v, e, f = (_raw(a) for a in (w.w_q, w.w_k, w.w_v, w.e, w.f))
    b, t, h, w_, _ = x.shape
    k, v, u = config.k, config.v, config.u

    q = np.zeros((b, t, h, w_, k))
    keys = np.zeros((b, t, h, w_, k, u))
    vals = np.zeros((b, t, h, w_, v, u))
    for n in np.ndindex(b, t, h, w_):
        xn = x[n]
        q[n] = xn @ w_q
        keys[n] = np.tensordot(xn, w_k, axes=1)
        vals[n] = np.tensordot(xn, w_v, axes=1)

    kbar = np.zeros_like(keys)
    for bi, ti in np.ndindex(b, t):
        sl = keys[bi, ti]
        ex = np.exp(sl - sl.max(axis=(0, 1)))
        kbar[bi, ti] = ex / ex.sum(axis=(0, 1))

    d, r, _ = config.local_window
    lam_g = np.zeros((b, t, h, w_, k, v))
    lam_l = np.zeros((b, t, h, w_, k, v))
    lam_s = np.zeros((b, t, h, w_, k, v)) if config.has_inter_slice else None
    for bi, ti, i, j in np.ndindex(b, t, h, w_):
        # global: every pixel of slice ti
        ks = kbar[bi, ti].reshape(-1, k, u)
        vs = vals[bi, ti].reshape(-1, v, u)
        lam_g[bi, ti, i, j] = np.einsum("mku,mvu->kv", ks, vs)
        # local: r x r (x d) window, zero outside the volume
        acc = np.zeros((k, v))
        for a, di, dj in itertools.product(range(d), range(r), range(r)):
            tt, ii, jj = ti + a - d // 2, i + di - r // 2, j + dj - r // 2
            if 0 <= tt < t and 0 <= ii < h and 0 <= jj < w_:
                acc += e[:, :, a, di, dj] @ vals[bi, tt, ii, jj].T
        lam_l[bi, ti, i, j] = acc
        if lam_s is not None:
            acc = np.zeros((k, v))
            for a in range(config.t_k):
                tt = ti + a - config.t_k // 2
                if 0 <= tt < t:
                    acc += f[:, :, a] @ vals[bi, tt, i, j].T
            lam_s[bi, ti, i, j] = acc
    return {"q": q, "global": lam_g, "local": lam_l, "inter_slice": lam_s}


def forward_naive(x, w: LambdaPlusWeights, config: LambdaPlusConfig) -> np.ndarray:
    parts = naive_lambdas(x, w, config)
    b, t, h, w_, _ = parts["q"].shape
    y = np.zeros((b, t, h, w_, config.v))
    for n in np.ndindex(b, t, h, w_):
        lam = parts["global"][n] + parts["local"][n]
        if parts["inter_slice"] is not None:
            lam = lam + parts["inter_slice"][n]
        y[n] = parts["q"][n] @ lam
    return y
