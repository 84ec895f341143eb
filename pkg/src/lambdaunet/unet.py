"""LambdaUNet: a UNet whose encoder convolutions are Lambda+ layers.

Activations between layers are kept with slices merged into the batch,
``(b * t, C, H, W)``, so every plain layer is a 2D layer.  Each Lambda+
layer splits the slice axis back out to reach its neighbours.

Encoder level ``i``: [2x2 max pool] -> Lambda+ -> instance norm -> ReLU.
Decoder level ``i``: nearest 2x upsample -> concat skip -> 3x3 conv (no
bias; the norm removes it) -> instance norm -> ReLU.  A 1x1 convolution
produces one logit per pixel.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, FormatError
from .lambda_plus import LambdaPlusConfig, LambdaPlusWeights, Variant, forward_fast, forward_fused
from .lambda_plus import init_weights as init_lambda
from .rng import make_rng

NORM_EPS = 1e-5
CHECKPOINT_MAGIC = "LUNET1"


@dataclass(frozen=True)
class UNetConfig:
    levels: int = 3
    base_channels: int = 16
    in_channels: int = 2
    out_channels: int = 1
    k: int = 8
    u: int = 1
    r: int = 3
    t_k: int = 3
    variant: str = "2.5d"
    spatial: tuple[int, int] | None = None
    fused: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant).value)
        if self.spatial is not None:
            object.__setattr__(self, "spatial", tuple(self.spatial))
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if self.out_channels != 1:
            raise ConfigError("only a single output channel is supported")
        if min(self.base_channels, self.in_channels, self.k, self.u) < 1:
            raise ConfigError("channel counts must be positive")
        if self.r % 2 == 0 or self.t_k % 2 == 0:
            raise ConfigError(f"kernel sizes must be odd (r={self.r}, t_k={self.t_k})")
        if self.spatial is not None:
            step = 2 ** (self.levels - 1)
            if any(n % step for n in self.spatial):
                raise ConfigError(
                    f"spatial size {self.spatial} is not divisible by {step} "
                    f"({self.levels} levels)")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def lambda_config(self, level: int) -> LambdaPlusConfig:
        c_in = self.in_channels if level == 0 else self.channels(level - 1)
        return LambdaPlusConfig(c=c_in, k=self.k, v=self.channels(level), u=self.u,
                                r=self.r, t_k=self.t_k, variant=self.variant)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spatial"] = list(self.spatial) if self.spatial is not None else None
        return d


@dataclass
class UNetModel:
    config: UNetConfig
    seed: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "UNetModel":
        return UNetModel(self.config, self.seed,
                         {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "UNetModel":
        return UNetModel(self.config, self.seed, {k: v.copy() for k, v in self.params.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def topology(self) -> list[dict]:
        cfg = self.config
        layers = []
        for i in range(cfg.levels):
            lc = cfg.lambda_config(i)
            layers.append({"name": f"enc{i}", "kind": "lambda+", "in": lc.c, "out": lc.v,
                           "pool": i > 0, "variant": lc.variant.value})
        for i in reversed(range(cfg.levels - 1)):
            layers.append({"name": f"dec{i}", "kind": "conv3x3",
                           "in": cfg.channels(i) + cfg.channels(i + 1), "out": cfg.channels(i)})
        layers.append({"name": "head", "kind": "conv1x1", "in": cfg.base_channels, "out": 1})
        return layers


def build(config: UNetConfig, seed: int = 0, dtype=np.float32) -> UNetModel:
    params: dict[str, np.ndarray] = {}
    for i in range(config.levels):
        lc = config.lambda_config(i)
        w = init_lambda(lc, make_rng(seed, 1, i), dtype=np.float64)
        for name, arr in w.as_dict().items():
            params[f"enc{i}.lambda.{name}"] = arr
        params[f"enc{i}.norm.gamma"] = np.ones(lc.v)
        params[f"enc{i}.norm.beta"] = np.zeros(lc.v)
    for i in reversed(range(config.levels - 1)):
        c_in = config.channels(i) + config.channels(i + 1)
        c_out = config.channels(i)
        rng = make_rng(seed, 2, i)
        params[f"dec{i}.conv.weight"] = rng.normal(0, math.sqrt(2 / (9 * c_in)), (c_out, c_in, 3, 3))
        params[f"dec{i}.norm.gamma"] = np.ones(c_out)
        params[f"dec{i}.norm.beta"] = np.zeros(c_out)
    rng = make_rng(seed, 3)
    params["head.weight"] = rng.normal(0, math.sqrt(1 / config.base_channels),
                                       (1, config.base_channels, 1, 1))
    params["head.bias"] = np.zeros(1)
    return UNetModel(config, seed, {k: np.ascontiguousarray(v, dtype=dtype)
                                    for k, v in params.items()})


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------

def instance_norm(x: Tensor, gamma, beta) -> Tensor:
    """Normalize each (item, channel) plane of ``(N, C, H, W)``."""
    mu = ad.mean(x, axis=(2, 3), keepdims=True)
    xc = x - mu
    var = ad.mean(xc * xc, axis=(2, 3), keepdims=True)
    xhat = xc * ad.power(var + NORM_EPS, -0.5)
    c = x.shape[1]
    return xhat * ad.reshape(ad.as_tensor(gamma), (1, c, 1, 1)) + ad.reshape(ad.as_tensor(beta), (1, c, 1, 1))


def conv2d(x: Tensor, weight, bias=None) -> Tensor:
    out = ad.slide_window_mac(x, weight)
    if bias is None:
        return out
    c = out.shape[1]
    return out + ad.reshape(ad.as_tensor(bias), (1, c, 1, 1))


def lambda_block(x: Tensor, t: int, weights: LambdaPlusWeights, lc: LambdaPlusConfig,
                 fused: bool = True) -> Tensor:
    """Run a Lambda+ layer on slice-merged ``(b*t, C, H, W)`` features."""
    bt, c, h, w = x.shape
    vol = ad.transpose(ad.reshape(x, (bt // t, t, c, h, w)), (0, 1, 3, 4, 2))
    y = (forward_fused if fused else forward_fast)(vol, weights, lc)
    return ad.reshape(ad.transpose(y, (0, 1, 4, 2, 3)), (bt, lc.v, h, w))


def _layer_weights(p: dict, level: int) -> LambdaPlusWeights:
    pre = f"enc{level}.lambda."
    return LambdaPlusWeights(p[pre + "w_q"], p[pre + "w_k"], p[pre + "w_v"], p[pre + "e"],
                             p.get(pre + "f"))


def forward(model: UNetModel, volume, params: dict | None = None) -> Tensor:
    """Per-pixel logits ``(b, t, h, w)`` for a ``(b, t, h, w, C)`` volume.

    ``params`` may supply Tensors (e.g. leaves requiring grad) in place of
    the model's stored arrays.
    """
    cfg = model.config
    p = dict(model.params) if params is None else params
    x = ad.as_tensor(volume)
    if x.ndim != 5:
        raise DimensionError(f"expected a (b, t, h, w, c) volume, got shape {x.shape}")
    b, t, h, w, c = x.shape
    if c != cfg.in_channels:
        raise DimensionError(f"volume has {c} channels, model expects {cfg.in_channels}")
    step = 2 ** (cfg.levels - 1)
    if h % step or w % step:
        raise DimensionError(f"spatial size {(h, w)} is not divisible by {step}")
    if cfg.spatial is not None and (h, w) != cfg.spatial:
        raise DimensionError(f"spatial size {(h, w)} differs from configured {cfg.spatial}")

    feats = ad.reshape(ad.transpose(x, (0, 1, 4, 2, 3)), (b * t, c, h, w))
    skips = []
    for i in range(cfg.levels):
        if i > 0:
            feats = ad.max_pool2(feats)
        feats = lambda_block(feats, t, _layer_weights(p, i), cfg.lambda_config(i), cfg.fused)
        feats = ad.relu(instance_norm(feats, p[f"enc{i}.norm.gamma"], p[f"enc{i}.norm.beta"]))
        skips.append(feats)
    for i in reversed(range(cfg.levels - 1)):
        feats = ad.concat([skips[i], ad.upsample2(feats)], axis=1)
        feats = conv2d(feats, p[f"dec{i}.conv.weight"])
        feats = ad.relu(instance_norm(feats, p[f"dec{i}.norm.gamma"], p[f"dec{i}.norm.beta"]))
    logits = conv2d(feats, p["head.weight"], p["head.bias"])
    return ad.reshape(logits, (b, t, h, w))


def predict_logits(model: UNetModel, volume) -> np.ndarray:
    with ad.no_grad():
        return forward(model, np.asarray(volume, dtype=model.dtype)).value


def predict_mask(model: UNetModel, volume, threshold: float = 0.5) -> np.ndarray:
    """Binary mask, ``sigmoid(logit) >= threshold``."""
    return mask_from_logits(predict_logits(model, volume), threshold)


def mask_from_logits(logits, threshold: float = 0.5) -> np.ndarray:
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return (ad._sigmoid(np.asarray(logits, dtype=np.float64)) >= threshold).astype(np.uint8)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_model(model: UNetModel, path) -> None:
    """Write ``manifest.json`` and ``params.bin`` into directory ``path``.

    Parameters are stored as raw little-endian floats (``<f4``, or ``<f8``
    for float64 models) concatenated in manifest order.
    """
    os.makedirs(path, exist_ok=True)
    dtype = np.dtype(model.dtype).newbyteorder("<")
    if dtype.kind != "f" or dtype.itemsize not in (4, 8):
        raise ValueError(f"unsupported parameter dtype {model.dtype}")
    entries, offset = [], 0
    for name, arr in model.params.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * dtype.itemsize
    manifest = {
        "magic": CHECKPOINT_MAGIC,
        "config": model.config.to_dict(),
        "seed": model.seed,
        "dtype": dtype.str,
        "n_bytes": offset,
        "topology": model.topology(),
        "parameters": entries,
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(path, "params.bin"), "wb") as fh:
        for arr in model.params.values():
            fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def load_model(path) -> UNetModel:
    manifest_path = os.path.join(path, "manifest.json")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{manifest_path}: bad manifest ({exc})") from None
    if manifest.get("magic") != CHECKPOINT_MAGIC:
        raise FormatError(f"{manifest_path}: bad magic {manifest.get('magic')!r}")
    with open(os.path.join(path, "params.bin"), "rb") as fh:
        blob = fh.read()
    if len(blob) != manifest["n_bytes"]:
        raise FormatError(f"params.bin holds {len(blob)} bytes, manifest says {manifest['n_bytes']}")
    dtype = np.dtype(manifest["dtype"])
    params = {}
    for entry in manifest["parameters"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=entry["offset"])
        params[entry["name"]] = arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
    return UNetModel(UNetConfig(**manifest["config"]), manifest["seed"], params)
