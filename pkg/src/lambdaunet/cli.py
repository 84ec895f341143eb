"""Command line: gen, train, eval, check, ablate, bench.

Flags are long names only.  ``--config FILE`` reads a JSON object whose
keys are flag names (``batch_segments`` or ``batch-segments``); flags
given on the command line win.  Every command writes one ``run.json``
manifest into its output directory.

Exit codes: 0 success, 2 usage, 3 data or file format, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, checks, synth, training, unet
from .errors import ConfigError, DimensionError, FormatError
from .metrics import score_case, score_split

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
RUN_MANIFEST = "run.json"

log = logging.getLogger("lambdaunet")

# Reference values for the inter-slice kernel sweep on the clinical DWI
# cohort; shown for orientation only, never compared against.
CLINICAL_TK_REFERENCE = {
    3: {"dsc": 86.51, "recall": 81.76, "precision": 89.39, "f1": 84.84},
    5: {"dsc": 85.75, "recall": 82.73, "precision": 88.80, "f1": 85.22},
    7: {"dsc": 86.01, "recall": 81.68, "precision": 88.70, "f1": 84.60},
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericFailure(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    artifacts: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    version: str = __version__

    def write(self, directory) -> str:
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, RUN_MANIFEST)
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, default=str)
            fh.write("\n")
        return path


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


# --------------------------------------------------------------------------
# argument types
# --------------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _range(kind):
    def parse(text: str):
        vals = _int_list(text) if kind is int else _float_list(text)
        if len(vals) != 2:
            raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
        return tuple(vals)
    return parse


def _shapes(text: str) -> list[tuple[int, ...]]:
    """``1x8x64x64x16;1x8x32x32x16``, each ``b x t x h x w x c``."""
    out = []
    for item in str(text).replace(";", " ").split():
        try:
            shape = tuple(int(n) for n in item.lower().split("x"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad shape {item!r}")
        if len(shape) != 5 or min(shape) < 1:
            raise argparse.ArgumentTypeError(f"shape {item!r} must be b x t x h x w x c")
        out.append(shape)
    if not out:
        raise argparse.ArgumentTypeError("no shapes given")
    return out


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_model_flags(p, with_tk=True):
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--u", type=int, default=1)
    p.add_argument("--r", type=int, default=3)
    if with_tk:
        p.add_argument("--Tk", dest="t_k", type=int, default=3)


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--warmup-epochs", type=int, default=None,
                   help="constant-rate epochs (default: epochs / 5)")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-segments", type=int, default=12)
    p.add_argument("--segment-slices", type=int, default=8)
    p.add_argument("--steps-per-epoch", type=int, default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lambdaunet", allow_abbrev=False,
                                     description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, allow_abbrev=False)
        p.add_argument("--config", help="JSON file supplying any flag")
        p.add_argument("--verbose", action="store_true")
        return p

    p = command("gen", "generate a synthetic dataset")
    p.add_argument("--out")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--geometry", type=_int_list, default=[8, 64, 64], help="t,h,w")
    p.add_argument("--lesions", type=_range(int), default=(1, 3), help="LO,HI lesion count")
    p.add_argument("--radius", type=_range(float), default=(3.0, 10.0), help="LO,HI pixels")
    p.add_argument("--extent", type=_range(int), default=(1, 3), help="LO,HI slices")
    p.add_argument("--jitter", type=float, default=4.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--fade", type=_range(float), default=(0.15, 0.6),
                   help="LO,HI contrast fraction on a lesion's non-core slices")
    p.add_argument("--split", type=_float_list, default=[0.6, 0.2, 0.2])

    p = command("train", "train one variant and keep the best validation checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--variant", choices=["2d", "3d", "2.5d"], default="2.5d")
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    _add_train_flags(p)

    p = command("eval", "score a checkpoint on a dataset split")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=os.path.join("runs", "eval"))
    p.add_argument("--truth-as-prediction", action="store_true", help=argparse.SUPPRESS)

    p = command("check", "run a correctness suite")
    p.add_argument("--suite", choices=sorted(checks.SUITES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=200, help="oracle suite size")
    p.add_argument("--out", default=os.path.join("runs", "check"))
    p.add_argument("--corrupt-e", action="store_true", help=argparse.SUPPRESS)

    p = command("ablate", "sweep the inter-slice kernel size")
    p.add_argument("--data")
    p.add_argument("--out", default=os.path.join("runs", "ablate"))
    p.add_argument("--Tk", dest="tk_values", type=_int_list, default=[3, 5, 7])
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p, with_tk=False)
    _add_train_flags(p)

    p = command("bench", "time the naive, fast and fused layer paths")
    p.add_argument("--shapes", type=_shapes, default=[(1, 8, 64, 64, 16)],
                   help="b x t x h x w x c, separated by ';'")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--v", type=int, default=16)
    p.add_argument("--u", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=os.path.join("runs", "bench"))
    return parser


REQUIRED = {"gen": ("out",), "train": ("data", "out"), "eval": ("model", "data"),
            "check": ("suite",), "ablate": ("data",), "bench": ()}


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            overrides = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(overrides, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return overrides


def parse_args(argv=None) -> argparse.Namespace:
    """Parse ``argv``, filling unspecified flags from ``--config``."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        overrides = _load_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        by_flag = {}
        for action in sub._actions:
            for opt in action.option_strings:
                by_flag[opt.lstrip("-").replace("-", "_").lower()] = action
        converted = {}
        for key, value in overrides.items():
            action = by_flag.get(key.replace("-", "_").lower())
            if action is None or action.dest in ("config", "help"):
                raise UsageError(f"config {args.config}: unknown option {key!r} for {args.command}")
            if isinstance(value, str) and action.type is not None:
                try:
                    value = action.type(value)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"config {args.config}: {key}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config {args.config}: {key} must be one of "
                                 f"{sorted(action.choices)}, got {value!r}")
            converted[action.dest] = value
        sub.set_defaults(**converted)
        args = parser.parse_args(argv)
    missing = [name for name in REQUIRED[args.command] if getattr(args, name) is None]
    if missing:
        raise UsageError(f"{args.command} needs " + ", ".join(f"--{m}" for m in missing))
    return args


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _resolved(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",)}


def _write_report(directory, stem: str, text: str, payload: dict) -> dict:
    os.makedirs(directory, exist_ok=True)
    txt = os.path.join(directory, stem + ".txt")
    js = os.path.join(directory, stem + ".json")
    with open(txt, "w") as fh:
        fh.write(text + "\n")
    with open(js, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    return {"table": txt, "json": js}


def _gen_params(args) -> synth.GenParams:
    if len(args.geometry) != 3:
        raise UsageError(f"--geometry needs t,h,w, got {args.geometry}")
    t, h, w = args.geometry
    return synth.GenParams(t=t, h=h, w=w, lesion_count=args.lesions, radius=args.radius,
                           slice_extent=args.extent, jitter=args.jitter, noise=args.noise,
                           fade=args.fade, seed=args.seed)


def cmd_gen(args, manifest: RunManifest) -> int:
    if args.cases < 1:
        raise UsageError("--cases must be at least 1")
    params = _gen_params(args)
    splits = synth.make_dataset(args.cases, params, args.split)
    path = synth.save_dataset(splits, params, args.out)
    manifest.artifacts = {"dataset": path,
                          "cases": [os.path.join(args.out, f"{c.case_id}.v25d")
                                    for split in splits for c in split]}
    print(f"wrote {args.cases} cases "
          f"({'/'.join(str(len(s)) for s in splits)} train/val/test) to {args.out}")
    return EXIT_OK


def _load_splits(directory) -> dict:
    if not os.path.isfile(os.path.join(directory, synth.DATASET_MANIFEST)):
        raise FileNotFoundError(f"no dataset manifest in {directory}")
    return synth.load_dataset(directory)


def _train_config(args, variant: str) -> training.TrainConfig:
    warmup = args.warmup_epochs if args.warmup_epochs is not None else args.epochs // 5
    return training.TrainConfig(
        epochs=args.epochs, warmup_epochs=min(warmup, args.epochs), initial_lr=args.lr,
        batch_segments=args.batch_segments, segment_slices=args.segment_slices,
        steps_per_epoch=args.steps_per_epoch, seed=args.seed, variant=variant,
        threshold=args.threshold)


def _net_config(args, variant: str, t_k: int) -> unet.UNetConfig:
    return unet.UNetConfig(levels=args.levels, base_channels=args.base_channels, k=args.k,
                           u=args.u, r=args.r, t_k=t_k, variant=variant)


def _fit(args, splits, variant: str, t_k: int, out_dir: str):
    for name in ("train", "val"):
        if not splits.get(name):
            raise DataError(f"dataset split {name!r} is empty")
    if args.epochs < 0:
        raise UsageError("--epochs must be >= 0")
    net_cfg = _net_config(args, variant, t_k)
    train_cfg = _train_config(args, variant)
    model = unet.build(net_cfg, seed=args.seed, dtype=np.dtype(args.dtype))
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "train_log.jsonl")
    echo = print if args.verbose else None
    if args.epochs == 0:
        log.warning("--epochs 0: saving the untrained initial model")
        open(log_path, "w").close()
    result = training.fit(model, splits["train"], splits["val"], train_cfg,
                          log_path=log_path, echo=echo)
    ckpt = os.path.join(out_dir, "model")
    unet.save_model(result.model, ckpt)
    return result, net_cfg, train_cfg, {"checkpoint": ckpt, "log": log_path}


def cmd_train(args, manifest: RunManifest) -> int:
    splits = _load_splits(args.data)
    result, net_cfg, train_cfg, paths = _fit(args, splits, args.variant, args.t_k, args.out)
    manifest.config["model"] = net_cfg.to_dict()
    manifest.config["training"] = training.config_dict(train_cfg)
    manifest.artifacts = paths
    if result.best_epoch is None:
        print(f"saved initial model to {paths['checkpoint']}")
    else:
        print(f"best epoch {result.best_epoch} val DSC {result.best_val_dsc:.4f}; "
              f"checkpoint {paths['checkpoint']}")
    return EXIT_OK


def cmd_eval(args, manifest: RunManifest) -> int:
    if not 0 < args.threshold < 1:
        raise UsageError("--threshold must lie in (0, 1)")
    if not os.path.isfile(os.path.join(args.model, "manifest.json")):
        raise FileNotFoundError(f"no checkpoint at {args.model}")
    model = unet.load_model(args.model)
    splits = _load_splits(args.data)
    if args.split not in splits:
        raise UsageError(f"split {args.split!r} not in dataset ({', '.join(splits)})")
    cases = splits[args.split]
    if not cases:
        raise DataError(f"split {args.split!r} is empty")
    if args.truth_as_prediction:
        report = score_split([score_case(c.mask, c.mask, c.case_id) for c in cases])
    else:
        report = training.evaluate(model, cases, args.threshold)
    report.extra = {"split": args.split, "threshold": args.threshold, "model": args.model}
    manifest.artifacts = _write_report(args.out, "metrics", report.to_table(), report.to_dict())
    print(report.to_table())
    return EXIT_OK


def cmd_check(args, manifest: RunManifest) -> int:
    if args.suite == "oracle":
        if args.configs < 1:
            raise UsageError("--configs must be at least 1")
        result = checks.oracle_suite(args.configs, args.seed, corrupt_e=args.corrupt_e)
    elif args.corrupt_e:
        raise UsageError("--corrupt-e applies to the oracle suite only")
    else:
        result = checks.SUITES[args.suite](seed=args.seed)
    manifest.artifacts = _write_report(args.out, f"check_{args.suite}", result.summary(),
                                       result.to_dict())
    print(result.summary())
    if not result.passed:
        raise NumericFailure(f"{args.suite} suite failed")
    return EXIT_OK


def ablation_table(rows: list[dict]) -> str:
    head = f"{'Tk':>3}  {'DSC':>7}  {'Recall/Precision':>17}  {'F1':>7}"
    lines = [head, "-" * len(head)]
    for r in rows:
        rp = f"{100 * r['recall']:.2f}/{100 * r['precision']:.2f}"
        lines.append(f"{r['t_k']:>3}  {100 * r['dsc']:7.2f}  {rp:>17}  {100 * r['f1']:7.2f}")
    return "\n".join(lines)


def _reference_footnote(tk_values) -> str:
    shown = [t for t in tk_values if t in CLINICAL_TK_REFERENCE]
    if not shown:
        return ""
    parts = []
    for t in shown:
        ref = CLINICAL_TK_REFERENCE[t]
        parts.append(f"Tk={t}: DSC {ref['dsc']:.2f}, R/P {ref['recall']:.2f}/"
                     f"{ref['precision']:.2f}, F1 {ref['f1']:.2f}")
    return ("* reference only, clinical DWI cohort (not comparable, not checked): "
            + "; ".join(parts))


def cmd_ablate(args, manifest: RunManifest) -> int:
    if not args.tk_values:
        raise UsageError("--Tk needs at least one value")
    bad = [t for t in args.tk_values if t < 1 or t % 2 == 0]
    if bad:
        raise UsageError(f"--Tk values must be odd and positive, got {bad}")
    splits = _load_splits(args.data)
    if not splits.get("test"):
        raise DataError("dataset split 'test' is empty")
    rows, artifacts = [], {}
    for t_k in args.tk_values:
        run_dir = os.path.join(args.out, f"tk{t_k}")
        result, _, _, paths = _fit(args, splits, "2.5d", t_k, run_dir)
        report = training.evaluate(result.model, splits["test"], args.threshold)
        rows.append({"t_k": t_k, "dsc": report.dsc, "recall": report.recall,
                     "precision": report.precision, "f1": report.f1,
                     "best_epoch": result.best_epoch})
        artifacts[f"tk{t_k}"] = paths
    text = ablation_table(rows)
    note = _reference_footnote(args.tk_values)
    if note:
        text += "\n\n" + note
    artifacts.update(_write_report(args.out, "ablation", text, {"rows": rows}))
    manifest.artifacts = artifacts
    print(text)
    return EXIT_OK


def cmd_bench(args, manifest: RunManifest) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    rows = [checks.bench_shape(s, args.reps, k=args.k, v=args.v, u=args.u, seed=args.seed)
            for s in args.shapes]
    text = checks.bench_table(rows)
    manifest.artifacts = _write_report(args.out, "bench", text,
                                       {"rows": [r.to_dict() for r in rows]})
    print(text)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "check": cmd_check,
            "ablate": cmd_ablate, "bench": cmd_bench}


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s: %(message)s", level=logging.WARNING)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.verbose:
        log.setLevel(logging.INFO)

    manifest = RunManifest(args.command, _resolved(args), getattr(args, "seed", None),
                           started=_now())
    code = EXIT_OK
    try:
        code = COMMANDS[args.command](args, manifest)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except (DataError, FormatError, DimensionError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    except (NumericFailure, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    manifest.finished = _now()
    manifest.config["exit_code"] = code
    out = getattr(args, "out", None)
    if out and code != EXIT_USAGE:
        try:
            manifest.write(out)
        except OSError as exc:
            print(f"data error: cannot write run manifest: {exc}", file=sys.stderr)
            code = code or EXIT_DATA
    return code


if __name__ == "__main__":
    sys.exit(main())
