"""Acceptance gate.  Each test records one PASS/FAIL line (printed in the
terminal summary) and asserts the same verdict.

The directional variant experiment trains nine desk-scale models and takes
over an hour on one CPU core; it carries the ``slow`` marker.
"""
import json
import time

import numpy as np
import pytest

from lambdaunet import checks, cli, synth, training, unet

from .conftest import OVERFIT_CONFIG

MINUTES = 60.0


def test_c1_oracle_equivalence(record):
    result = checks.oracle_suite(n_configs=200, seed=0)
    variants = {d["variant"] for d in result.details}
    grid = {(d["shape"][1], d["shape"][2], d["r"], d["t_k"]) for d in result.details}
    ok = (result.passed and result.max_deviation <= 1e-10 and result.seconds <= 2 * MINUTES
          and variants == {"2d", "3d", "2.5d"})
    record(1, ok, f"200 configs ({len(grid)} distinct t/h/R/Tk), max |fast-naive| "
                  f"{result.max_deviation:.2e} <= 1e-10, {result.seconds:.1f}s <= 120s")
    assert ok


def test_c2_gradients(record):
    result = checks.grad_suite(seed=0, n_samples=20, eps=1e-5)
    ok = result.passed and result.max_deviation <= 1e-4 and result.seconds <= 2 * MINUTES
    targets = [d["target"] for d in result.details]
    assert "levels=2 network" in targets
    record(2, ok, f"{len(targets)} targets, max rel err {result.max_deviation:.2e} <= 1e-4, "
                  f"{result.seconds:.1f}s <= 120s")
    assert ok


def test_c3_receptive_field(record):
    result = checks.locality_suite(seed=0)
    parts = ", ".join(f"{d['property']}: {d.get('deviation', d.get('change')):.1e}"
                      for d in result.details)
    record(3, result.passed, f"bit-exact; {parts}")
    assert result.passed


def test_c4_overfit(record, overfit_run):
    case = overfit_run.case
    report = training.evaluate(overfit_run.model, [case])
    epochs = OVERFIT_CONFIG["epochs"]
    ok = report.dsc >= 0.95 and epochs <= 200 and overfit_run.seconds <= 10 * MINUTES
    record(4, ok, f"1 case, {epochs} epochs, training DSC {report.dsc:.4f} >= 0.95, "
                  f"{overfit_run.seconds:.0f}s <= 600s")
    assert ok


DIRECTIONAL_SEEDS = (0, 1, 2)
DIRECTIONAL_TRAIN = dict(epochs=25, warmup_epochs=5, initial_lr=1e-3, batch_segments=4,
                         steps_per_epoch=15)


@pytest.mark.slow
def test_c5_directional_variants(record, tmp_path):
    params = synth.GenParams(seed=0, jitter=4.0)
    train, val, test = synth.make_dataset(100, params, (0.6, 0.2, 0.2))
    start = time.perf_counter()
    scores: dict[str, list[float]] = {"2d": [], "3d": [], "2.5d": []}
    for seed in DIRECTIONAL_SEEDS:
        for variant in scores:
            model = unet.build(unet.UNetConfig(variant=variant), seed=seed)
            cfg = training.TrainConfig(seed=seed, variant=variant, **DIRECTIONAL_TRAIN)
            result = training.fit(model, train, val, cfg, echo=None)
            scores[variant].append(training.evaluate(result.model, test).dsc)
    seconds = time.perf_counter() - start
    mean = {v: float(np.mean(s)) for v, s in scores.items()}
    (tmp_path / "directional.json").write_text(json.dumps(scores))
    ok = mean["2.5d"] >= mean["2d"] and mean["2.5d"] >= mean["3d"] and seconds <= 120 * MINUTES
    record(5, ok, "mean test DSC over 3 seeds: " +
           ", ".join(f"{v} {m:.4f}" for v, m in mean.items()) +
           f" (per seed {scores}); {seconds / 60:.0f} min <= 120 min")
    assert ok


def test_c6_ablation_harness(record, tmp_path, capsys):
    data = tmp_path / "data"
    assert cli.main(["gen", "--out", str(data), "--cases", "10", "--seed", "0"]) == 0
    out = tmp_path / "ablate"
    code = cli.main(["ablate", "--data", str(data), "--out", str(out), "--Tk", "3,5,7",
                     "--epochs", "2", "--steps-per-epoch", "2", "--batch-segments", "2"])
    printed = capsys.readouterr().out
    rows = json.loads((out / "ablation.json").read_text())["rows"] if code == 0 else []
    text = (out / "ablation.txt").read_text() if code == 0 else ""
    in_range = all(0 <= r[m] <= 1 for r in rows for m in ("dsc", "recall", "precision", "f1"))
    lines = text.splitlines() or [""]
    ok = (code == 0 and [r["t_k"] for r in rows] == [3, 5, 7] and in_range
          and lines[0].split() == ["Tk", "DSC", "Recall/Precision", "F1"]
          and "86.51" in text and text.strip() in printed)
    record(6, ok, f"three rows Tk=3,5,7, metrics in [0,1]: {in_range}, reference footnote shown")
    assert ok


def test_c7_fast_beats_naive(record, tmp_path):
    code = cli.main(["bench", "--shapes", "1x8x64x64x16;1x8x32x32x16", "--reps", "1",
                     "--k", "8", "--v", "16", "--u", "1", "--out", str(tmp_path)])
    rows = json.loads((tmp_path / "bench.json").read_text())["rows"] if code == 0 else []
    big = next((r for r in rows if r["shape"] == [1, 8, 64, 64, 16]), None)
    ok = (code == 0 and big is not None and big["speedup"] >= 5
          and all(r["speedup"] > 1 for r in rows)
          and all(r["max_deviation"] <= 1e-10 for r in rows))
    detail = ", ".join(f"{tuple(r['shape'])}: fast {r['speedup']:.1f}x, fused "
                       f"{r['fused_speedup']:.1f}x" for r in rows)
    record(7, ok, f"output guard passed; {detail}; need >= 5x at 64x64")
    assert ok


def test_c8_round_trips(record, tmp_path):
    rng = np.random.default_rng(8)
    bad = []
    for i in range(50):
        t = int(rng.integers(1, 6))
        params = synth.GenParams(t=t, h=int(rng.integers(8, 40)), w=int(rng.integers(8, 40)),
                                 radius=(1.0, 4.0), slice_extent=(1, t),
                                 jitter=float(rng.uniform(0, 4)), seed=int(rng.integers(1e6)))
        case = synth.generate_case(params, i)
        path = tmp_path / f"case{i}.v25d"
        synth.save_case(case, path)
        back = synth.load_case(path)
        if (back.image.tobytes() != case.image.tobytes()
                or back.mask.tobytes() != case.mask.tobytes()):
            bad.append(f"case {i}")

        config = unet.UNetConfig(levels=int(rng.integers(2, 4)),
                                 base_channels=int(rng.integers(1, 9)),
                                 k=int(rng.integers(1, 9)), u=int(rng.integers(1, 3)),
                                 r=int(rng.choice([1, 3, 5])), t_k=int(rng.choice([1, 3, 5])),
                                 variant=str(rng.choice(["2d", "3d", "2.5d"])))
        dtype = np.float32 if i % 2 else np.float64
        model = unet.build(config, seed=int(rng.integers(1e6)), dtype=dtype)
        model.params = {k: v + rng.normal(size=v.shape).astype(dtype)
                        for k, v in model.params.items()}
        unet.save_model(model, tmp_path / f"model{i}")
        loaded = unet.load_model(tmp_path / f"model{i}")
        same = (loaded.config == model.config and list(loaded.params) == list(model.params)
                and all(loaded.params[k].dtype == model.params[k].dtype
                        and loaded.params[k].tobytes() == model.params[k].tobytes()
                        for k in model.params))
        if not same:
            bad.append(f"model {i}")
    ok = not bad
    record(8, ok, f"50 cases + 50 models bit-exact; mismatches: {bad or 'none'}")
    assert ok
