"""BCE loss, RMSprop, the warmup-then-linear-decay schedule and the fit loop."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .metrics import MetricsReport, score_case, score_split
from .rng import make_rng
from .synth import VolumeCase
from .unet import UNetModel, forward, mask_from_logits

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    warmup_epochs: int = 20
    initial_lr: float = 1e-4
    batch_segments: int = 12
    segment_slices: int = 8
    steps_per_epoch: int | None = None  # None: one pass over the training slices
    rho: float = 0.9
    eps: float = 1e-8
    seed: int = 0
    variant: str = "2.5d"
    threshold: float = 0.5
    eval_batch: int = 8

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError(f"warmup_epochs={self.warmup_epochs} exceeds epochs={self.epochs}")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if self.batch_segments < 1 or self.segment_slices < 1:
            raise ValueError("batch_segments and segment_slices must be positive")


def bce_loss(logits, labels) -> Tensor:
    """Mean binary cross-entropy of logits against a {0, 1} mask."""
    labels = np.asarray(labels)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return ad.bce_with_logits(ad.as_tensor(logits), labels)


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Constant for the warmup epochs, then linear toward 0 at ``epochs``."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch < config.warmup_epochs:
        return config.initial_lr
    decay = config.epochs - config.warmup_epochs
    return config.initial_lr * (1 - (epoch - config.warmup_epochs) / decay)


def rmsprop_step(params: dict, grads: dict, state: dict, lr: float,
                 rho: float = 0.9, eps: float = 1e-8):
    """One RMSprop update; returns new ``(params, state)`` dicts.

    ``s <- rho*s + (1-rho)*g^2``;  ``p <- p - lr*g/(sqrt(s) + eps)``.
    Parameters without a gradient are carried over unchanged.
    """
    new_params, new_state = {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p
            if name in state:
                new_state[name] = state[name]
            continue
        s = state.get(name)
        s = (1 - rho) * g * g if s is None else rho * s + (1 - rho) * g * g
        new_state[name] = s
        new_params[name] = p - lr * g / (np.sqrt(s) + eps)
    return new_params, new_state


# --------------------------------------------------------------------------
# batching
# --------------------------------------------------------------------------

def pad_case(case: VolumeCase, n_slices: int) -> tuple[VolumeCase, str | None]:
    """Repeat edge slices until the case has at least ``n_slices``."""
    t = case.mask.shape[0]
    if t >= n_slices:
        return case, None
    before = (n_slices - t) // 2
    after = n_slices - t - before
    image = np.pad(case.image, ((before, after), (0, 0), (0, 0), (0, 0)), mode="edge")
    mask = np.pad(case.mask, ((before, after), (0, 0), (0, 0)), mode="edge")
    msg = f"case {case.case_id} has {t} slices < {n_slices}; padded by repeating edge slices"
    return VolumeCase(case.case_id, image, mask, case.metadata), msg


def sample_batch(cases: list[VolumeCase], config: TrainConfig, rng: np.random.Generator):
    """``batch_segments`` random windows of ``segment_slices`` consecutive slices.

    Cases are drawn with replacement; window starts uniformly over the
    valid range of the chosen case.
    """
    xs, ys = [], []
    n = config.segment_slices
    for _ in range(config.batch_segments):
        case = cases[int(rng.integers(len(cases)))]
        start = int(rng.integers(case.mask.shape[0] - n + 1))
        xs.append(case.image[start:start + n])
        ys.append(case.mask[start:start + n])
    return np.stack(xs), np.stack(ys)


def predict_cases(model: UNetModel, cases: list[VolumeCase], batch: int = 8) -> list[np.ndarray]:
    """Logits per case; cases with equal shapes are evaluated together."""
    out: list[np.ndarray | None] = [None] * len(cases)
    groups: dict[tuple, list[int]] = {}
    for i, case in enumerate(cases):
        groups.setdefault(case.image.shape, []).append(i)
    with ad.no_grad():
        for idx in groups.values():
            for lo in range(0, len(idx), batch):
                chunk = idx[lo:lo + batch]
                x = np.stack([cases[i].image for i in chunk]).astype(model.dtype)
                logits = forward(model, x).value
                for i, z in zip(chunk, logits):
                    out[i] = z
    return out


def evaluate(model: UNetModel, cases: list[VolumeCase], threshold: float = 0.5,
             batch: int = 8) -> MetricsReport:
    logits = predict_cases(model, cases, batch)
    scores = [score_case(mask_from_logits(z, threshold), c.mask, c.case_id)
              for z, c in zip(logits, cases)]
    return score_split(scores)


# --------------------------------------------------------------------------
# fit
# --------------------------------------------------------------------------

@dataclass
class FitResult:
    model: UNetModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_dsc: float | None = None
    warnings: list[str] = field(default_factory=list)


def train_step(model: UNetModel, x: np.ndarray, y: np.ndarray, state: dict, lr: float,
               config: TrainConfig):
    leaves = {name: Tensor(p, requires_grad=True) for name, p in model.params.items()}
    loss = bce_loss(forward(model, x.astype(model.dtype), leaves), y)
    if not np.isfinite(loss.value):
        raise FloatingPointError("training loss is not finite")
    ad.backward(loss)
    grads = {name: t.grad for name, t in leaves.items() if t.grad is not None}
    params, state = rmsprop_step(model.params, grads, state, lr, config.rho, config.eps)
    model.params = params
    return float(loss.value), state


def fit(model: UNetModel, train_cases: list[VolumeCase], val_cases: list[VolumeCase],
        config: TrainConfig, log_path=None, echo=print) -> FitResult:
    """Train with RMSprop and keep the parameters of the epoch with the best
    validation DSC (earliest epoch on ties)."""
    if not train_cases or not val_cases:
        raise ValueError("training and validation splits must be non-empty")
    result = FitResult(model.copy())
    if config.epochs == 0:
        return result

    prepared = []
    for case in train_cases:
        case, msg = pad_case(case, config.segment_slices)
        if msg:
            log.warning(msg)
            result.warnings.append(msg)
        prepared.append(case)
    steps = config.steps_per_epoch or max(1, math.ceil(
        sum(c.mask.shape[0] for c in prepared) / (config.batch_segments * config.segment_slices)))

    rng = make_rng(config.seed, 20)
    work = model.copy()
    state: dict = {}
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(config.epochs):
            lr = lr_at(epoch, config)
            losses = []
            for _ in range(steps):
                x, y = sample_batch(prepared, config, rng)
                loss, state = train_step(work, x, y, state, lr, config)
                losses.append(loss)
            val = evaluate(work, val_cases, config.threshold, config.eval_batch)
            record = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)),
                      "val_dsc": val.dsc}
            result.history.append(record)
            if result.best_val_dsc is None or val.dsc > result.best_val_dsc:
                result.best_val_dsc = val.dsc
                result.best_epoch = epoch
                result.model = work.copy()
            line = json.dumps(record)
            if log_file:
                log_file.write(line + "\n")
                log_file.flush()
            if echo:
                echo(line)
    finally:
        if log_file:
            log_file.close()
    return result


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
