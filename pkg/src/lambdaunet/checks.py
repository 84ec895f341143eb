"""Self-checks: oracle equivalence, gradients, receptive-field locality,
and the fast-vs-naive benchmark.

Every suite returns a ``CheckResult`` instead of raising, so callers can
print a verdict and pick an exit code.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .lambda_plus import (LambdaPlusConfig, LambdaPlusWeights, forward_fast, forward_fused,
                          forward_naive, init_weights, naive_lambdas)
from .rng import make_rng
from .unet import UNetConfig, build, forward

ORACLE_TOL = 1e-10
GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    suite: str
    passed: bool
    max_deviation: float
    tolerance: float
    n_cases: int
    seconds: float
    details: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{self.suite:<9} {verdict}  max deviation {self.max_deviation:.3e} "
                f"(tol {self.tolerance:.0e}, {self.n_cases} cases, {self.seconds:.1f}s)")


def random_layer_config(rng: np.random.Generator) -> tuple[tuple[int, ...], LambdaPlusConfig]:
    """A random input shape and layer config over the grid the oracle suite covers."""
    shape = (int(rng.integers(1, 3)), int(rng.choice([1, 2, 4, 8])),
             int(rng.choice([1, 3, 5, 8, 16])), int(rng.choice([1, 3, 5, 8, 16])))
    config = LambdaPlusConfig(
        c=int(rng.integers(1, 5)), k=int(rng.integers(1, 5)), v=int(rng.integers(1, 5)),
        u=int(rng.integers(1, 3)), r=int(rng.choice([1, 3])), t_k=int(rng.choice([1, 3, 5])),
        variant=str(rng.choice(["2d", "3d", "2.5d"])))
    return shape + (config.c,), config


def _corrupt(w: LambdaPlusWeights, config: LambdaPlusConfig) -> LambdaPlusWeights:
    e = w.e.copy()
    centre = tuple(n // 2 for n in config.local_window)
    e[(0, 0) + centre] += 1e-3
    return LambdaPlusWeights(w.w_q, w.w_k, w.w_v, e, w.f)


def oracle_suite(n_configs: int = 200, seed: int = 0, corrupt_e: bool = False) -> CheckResult:
    """Fast and fused paths against the per-pixel loops, in float64.

    ``corrupt_e`` perturbs the position table seen by the fast paths only;
    it exists so the suite's failure branch can be exercised.
    """
    rng = make_rng(seed, 100)
    start = time.perf_counter()
    worst, details = 0.0, []
    for i in range(n_configs):
        shape, config = random_layer_config(rng)
        x = rng.normal(size=shape)
        w = init_weights(config, rng)
        ref = forward_naive(x, w, config)
        w_fast = _corrupt(w, config) if corrupt_e else w
        with ad.no_grad():
            dev = max(float(np.max(np.abs(forward_fast(x, w_fast, config).value - ref))),
                      float(np.max(np.abs(forward_fused(x, w_fast, config).value - ref))))
        worst = max(worst, dev)
        details.append({"shape": list(shape), "variant": config.variant.value, "r": config.r,
                        "t_k": config.t_k, "u": config.u, "deviation": dev})
    return CheckResult("oracle", worst <= ORACLE_TOL, worst, ORACLE_TOL, n_configs,
                       time.perf_counter() - start, details)


def _layer_loss(config: LambdaPlusConfig, x: np.ndarray, target: np.ndarray, fused: bool):
    path = forward_fused if fused else forward_fast

    def loss(*tensors):
        w = LambdaPlusWeights(*tensors[:4], tensors[4] if len(tensors) > 4 else None)
        y = path(x, w, config)
        return ad.mean((y - target) ** 2)
    return loss


def grad_suite(seed: int = 0, n_samples: int = 20, eps: float = 1e-5) -> CheckResult:
    """Finite differences on single layers (every variant, both paths) and
    on a two-level network trained with the BCE loss."""
    rng = make_rng(seed, 200)
    start = time.perf_counter()
    details = []
    for variant in ("2d", "3d", "2.5d"):
        config = LambdaPlusConfig(c=3, k=4, v=5, u=2, r=3, t_k=3, variant=variant)
        x = rng.normal(size=(2, 4, 5, 6, config.c))
        target = rng.normal(size=(2, 4, 5, 6, config.v))
        w = init_weights(config, rng)
        leaves = list(w.as_dict().values())
        for fused in (False, True):
            errs = ad.finite_diff_check(_layer_loss(config, x, target, fused), leaves,
                                        eps=eps, n_samples=n_samples, seed=seed, per_leaf=True)
            details.append({"target": f"layer {variant} {'fused' if fused else 'fast'}",
                            "errors": dict(zip(w.as_dict(), errs))})

    net_config = UNetConfig(levels=2, base_channels=4, k=4, u=1)
    model = build(net_config, seed=seed, dtype=np.float64)
    names = list(model.params)
    x = rng.uniform(size=(1, 3, 8, 8, 2))
    y = (rng.uniform(size=(1, 3, 8, 8)) < 0.2).astype(np.float64)

    def net_loss(*tensors):
        return ad.bce_with_logits(forward(model, x, dict(zip(names, tensors))), y)

    errs = ad.finite_diff_check(net_loss, [model.params[n] for n in names], eps=eps,
                                n_samples=n_samples, seed=seed, per_leaf=True)
    details.append({"target": "levels=2 network", "errors": dict(zip(names, errs))})
    worst = max(max(d["errors"].values()) for d in details)
    return CheckResult("grad", worst <= GRAD_TOL, worst, GRAD_TOL, len(details),
                       time.perf_counter() - start, details)


def _max_change(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def locality_suite(seed: int = 0) -> CheckResult:
    """Exact receptive-field properties; any nonzero deviation fails.

    * the global lambda is the same matrix for every pixel of a slice;
    * a 2.5d layer output at (t, h, w) ignores slice t+-1 except at (h, w),
      and ignores slices two or more away (t_k = 3);
    * a 2d-variant network commutes with permutations of the slices.
    """
    rng = make_rng(seed, 300)
    start = time.perf_counter()
    details = []

    config = LambdaPlusConfig(c=3, k=4, v=5, u=2, r=3, t_k=3, variant="2.5d")
    x = rng.normal(size=(1, 6, 7, 7, 3))
    w = init_weights(config, rng)
    lam_g = naive_lambdas(x, w, config)["global"]
    dev = _max_change(lam_g, np.broadcast_to(lam_g[:, :, :1, :1], lam_g.shape))
    details.append({"property": "global lambda constant within a slice", "deviation": dev})

    t0, h0, w0 = 2, 3, 3
    dev_near, dev_far = 0.0, 0.0
    with ad.no_grad():
        for path in (forward_fast, forward_fused):
            base = path(x, w, config).value[0, t0, h0, w0]
            for dt in (-3, -2, -1, 1, 2, 3):
                for hh in range(7):
                    for ww in range(7):
                        if abs(dt) == 1 and (hh, ww) == (h0, w0):
                            continue
                        bumped = x.copy()
                        bumped[0, t0 + dt, hh, ww] += rng.normal(size=3)
                        d = _max_change(path(bumped, w, config).value[0, t0, h0, w0], base)
                        if abs(dt) == 1:
                            dev_near = max(dev_near, d)
                        else:
                            dev_far = max(dev_far, d)
    details.append({"property": "adjacent slices only through (h, w)", "deviation": dev_near})
    details.append({"property": "slices two or more away have no effect", "deviation": dev_far})

    # sanity: the excluded perturbation does change the output
    bumped = x.copy()
    bumped[0, t0 + 1, h0, w0] += 1.0
    with ad.no_grad():
        reach = _max_change(forward_fused(bumped, w, config).value[0, t0, h0, w0],
                            forward_fused(x, w, config).value[0, t0, h0, w0])
    details.append({"property": "same (h, w) on an adjacent slice does reach", "change": reach})

    model = build(UNetConfig(levels=2, base_channels=4, variant="2d"), seed=seed,
                  dtype=np.float64)
    vol = rng.uniform(size=(2, 5, 8, 8, 2))
    perm = rng.permutation(5)
    with ad.no_grad():
        out = forward(model, vol).value
        out_perm = forward(model, vol[:, perm]).value
    dev = _max_change(out_perm, out[:, perm])
    details.append({"property": "2d network slice permutation", "deviation": dev})

    worst = max(d.get("deviation", 0.0) for d in details)
    passed = worst == 0.0 and reach > 0
    return CheckResult("locality", passed, worst, 0.0, len(details),
                       time.perf_counter() - start, details)


SUITES = {"oracle": oracle_suite, "grad": grad_suite, "locality": locality_suite}


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------

@dataclass
class BenchRow:
    shape: tuple[int, ...]
    naive_s: float
    fast_s: float
    fused_s: float
    max_deviation: float

    @property
    def speedup(self) -> float:
        return self.naive_s / self.fast_s

    @property
    def fused_speedup(self) -> float:
        return self.naive_s / self.fused_s

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        d["speedup"] = self.speedup
        d["fused_speedup"] = self.fused_speedup
        return d


def _best_time(fn, reps: int) -> float:
    best = np.inf
    for _ in range(reps):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench_shape(shape, reps: int = 3, k: int = 8, v: int = 16, u: int = 1,
                variant: str = "2.5d", seed: int = 0) -> BenchRow:
    """Time the three evaluation routes on one ``(b, t, h, w, c)`` input.

    The outputs are compared first; a deviation above the oracle tolerance
    raises ``FloatingPointError`` before any timing happens.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    shape = tuple(int(n) for n in shape)
    config = LambdaPlusConfig(c=shape[-1], k=k, v=v, u=u, variant=variant)
    rng = make_rng(seed, 400)
    x = rng.normal(size=shape)
    w = init_weights(config, rng)

    ref = forward_naive(x, w, config)
    with ad.no_grad():
        dev = max(_max_change(forward_fast(x, w, config).value, ref),
                  _max_change(forward_fused(x, w, config).value, ref))
    if not dev <= ORACLE_TOL:
        raise FloatingPointError(f"fast path deviates from the oracle by {dev:.3e} at {shape}")

    def run(path):
        with ad.no_grad():
            path(x, w, config)

    naive_s = _best_time(lambda: forward_naive(x, w, config), reps)
    fast_s = _best_time(lambda: run(forward_fast), reps)
    fused_s = _best_time(lambda: run(forward_fused), reps)
    return BenchRow(shape, naive_s, fast_s, fused_s, dev)


def bench_table(rows: list[BenchRow]) -> str:
    head = (f"{'shape':<20}  {'naive s':>9}  {'fast s':>9}  {'fused s':>9}  "
            f"{'fast x':>7}  {'fused x':>7}  {'max dev':>9}")
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{str(r.shape):<20}  {r.naive_s:9.4f}  {r.fast_s:9.4f}  {r.fused_s:9.4f}  "
                     f"{r.speedup:7.1f}  {r.fused_speedup:7.1f}  {r.max_deviation:9.2e}")
    return "\n".join(lines)
