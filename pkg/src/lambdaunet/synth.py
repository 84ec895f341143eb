"""Synthetic anisotropic volumes with small, slice-discontinuous lesions.

Each slice is a smooth "brain" ellipse with its own low-frequency texture.
Lesions are ellipses that live on a short run of consecutive slices; on
every slice the centre and radii are redrawn around the lesion's nominal
values, so the lesion shifts abruptly from one slice to the next while
staying compact within a slice.  Thick slices also dilute a lesion that
only grazes them: one core slice per lesion shows it at full contrast, the
other slices at a random fraction of it (``fade``).

On disk a case is one ``V25D1`` file::

    V25D1\\n
    {json header}\\n
    float32 little-endian image (t, h, w, 2), row-major
    uint8 mask (t, h, w)
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, FormatError
from .rng import make_rng

MAGIC = b"V25D1"
CHANNEL_NAMES = ("dwi", "eadc")
DATASET_MANIFEST = "dataset.json"


@dataclass(frozen=True)
class GenParams:
    t: int = 8
    h: int = 64
    w: int = 64
    lesion_count: tuple[int, int] = (1, 3)
    radius: tuple[float, float] = (3.0, 10.0)
    slice_extent: tuple[int, int] = (1, 3)
    jitter: float = 4.0
    contrast: tuple[float, float] = (0.25, 0.45)
    fade: tuple[float, float] = (0.15, 0.6)
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("lesion_count", "radius", "slice_extent", "contrast", "fade"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (lo, hi))
            if lo > hi:
                raise ConfigError(f"empty range for {name}: {lo} > {hi}")
        if min(self.t, self.h, self.w) < 1:
            raise ConfigError("volume dimensions must be positive")
        if self.lesion_count[0] < 0:
            raise ConfigError("lesion count cannot be negative")
        if self.radius[0] < 1:
            raise ConfigError("lesion radius must be at least 1 pixel")
        if self.slice_extent[0] < 1 or self.slice_extent[1] > self.t:
            raise ConfigError(
                f"slice extent {self.slice_extent} does not fit {self.t} slices")
        if not 0 <= self.fade[0] <= self.fade[1] <= 1:
            raise ConfigError(f"fade range {self.fade} must lie within [0, 1]")
        if self.jitter < 0 or self.noise < 0:
            raise ConfigError("jitter and noise must be non-negative")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GenParams":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class VolumeCase:
    case_id: str
    image: np.ndarray  # (t, h, w, 2) float32 in [0, 1]
    mask: np.ndarray   # (t, h, w) uint8
    metadata: dict = field(default_factory=dict)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.mask.shape)


def _anatomy(params: GenParams, rng: np.random.Generator) -> np.ndarray:
    t, h, w = params.t, params.h, params.w
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    vol = np.empty((t, h, w))
    for s in range(t):
        # brain cross-section shrinks toward the end slices
        z = (s + 0.5) / t - 0.5
        scale = math.sqrt(max(0.2, 1 - (1.6 * z) ** 2))
        ry, rx = 0.42 * h * scale, 0.36 * w * scale
        inside = ((yy - h / 2) / ry) ** 2 + ((xx - w / 2) / rx) ** 2 <= 1
        texture = np.zeros((h, w))
        for _ in range(3):
            fy, fx = rng.uniform(0.5, 2.0, 2)
            py, px = rng.uniform(0, 2 * np.pi, 2)
            texture += np.cos(2 * np.pi * fy * yy / h + py) * np.cos(2 * np.pi * fx * xx / w + px)
        vol[s] = np.where(inside, 0.35 + 0.04 * texture, 0.05)
    return vol


def _ellipse(h: int, w: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1


def generate_case(params: GenParams, index: int = 0, case_id: str | None = None) -> VolumeCase:
    """Deterministic in ``(params.seed, index)``."""
    rng = make_rng(params.seed, index)
    t, h, w = params.t, params.h, params.w
    anatomy = _anatomy(params, rng)
    mask = np.zeros((t, h, w), dtype=bool)
    lesion = np.zeros((t, h, w))
    lesions = []
    n_lesions = int(rng.integers(params.lesion_count[0], params.lesion_count[1] + 1))
    j = params.jitter
    for _ in range(n_lesions):
        extent = int(rng.integers(params.slice_extent[0], params.slice_extent[1] + 1))
        start = int(rng.integers(0, t - extent + 1))
        cy = rng.uniform(0.3 * h, 0.7 * h)
        cx = rng.uniform(0.3 * w, 0.7 * w)
        ry, rx = rng.uniform(*params.radius, 2)
        contrast = rng.uniform(*params.contrast)
        core = start + int(rng.integers(extent))
        per_slice = []
        for s in range(start, start + extent):
            dy, dx = rng.uniform(-j, j, 2)
            dry, drx = rng.uniform(-j / 2, j / 2, 2)
            level = contrast * (1.0 if s == core else rng.uniform(*params.fade))
            per_slice.append(level)
            blob = _ellipse(h, w, cy + dy, cx + dx, max(1.0, ry + dry), max(1.0, rx + drx))
            mask[s] |= blob
            lesion[s] = np.where(blob, np.maximum(lesion[s], level), lesion[s])
        lesions.append({"start": start, "extent": extent, "center": [cy, cx],
                        "radii": [ry, rx], "contrast": contrast, "slice_contrast": per_slice})

    clean = np.clip(anatomy + lesion, 0, 1)
    dwi = clean + rng.normal(0, params.noise, clean.shape)
    # eADC stand-in: a monotone transform of the clean signal with its own noise
    eadc = 0.9 * np.sqrt(clean) - 0.05 + rng.normal(0, params.noise, clean.shape)
    image = np.clip(np.stack([dwi, eadc], axis=-1), 0, 1).astype(np.float32)
    meta = {"generator": params.to_dict(), "index": index, "lesions": lesions}
    return VolumeCase(case_id or f"case_{index:04d}", image, mask.astype(np.uint8), meta)


def mask_fraction_bounds(params: GenParams) -> tuple[float, float]:
    """Bounds on the lesion voxel fraction that any generated case obeys."""
    n_vox = params.t * params.h * params.w
    lower = 1 / n_vox if params.lesion_count[0] >= 1 else 0.0
    r = params.radius[1] + params.jitter / 2 + 1
    per_slice = min(math.pi * r * r, params.h * params.w)
    upper = params.lesion_count[1] * params.slice_extent[1] * per_slice / n_vox
    return lower, min(1.0, upper)


def adjacent_iou(mask: np.ndarray, axis: int) -> float:
    """IoU between the mask and itself shifted by one voxel along ``axis``."""
    m = np.asarray(mask, dtype=bool)
    a = np.take(m, range(0, m.shape[axis] - 1), axis=axis)
    b = np.take(m, range(1, m.shape[axis]), axis=axis)
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 1.0


# --------------------------------------------------------------------------
# V25D1 files
# --------------------------------------------------------------------------

def save_case(case: VolumeCase, path) -> None:
    t, h, w = case.dims
    header = {
        "id": case.case_id,
        "dims": [t, h, w],
        "channels": len(CHANNEL_NAMES),
        "channel_names": list(CHANNEL_NAMES),
        "dtype": "<f4",
        "mask_dtype": "u1",
        "metadata": case.metadata,
    }
    if case.image.shape != (t, h, w, len(CHANNEL_NAMES)):
        raise ValueError(f"image shape {case.image.shape} does not match mask {case.dims}")
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(case.image, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(case.mask, dtype=np.uint8).tobytes())


def load_case(path) -> VolumeCase:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC) + 1] != MAGIC + b"\n":
        raise FormatError(f"{path}: bad magic at byte offset 0")
    start = len(MAGIC) + 1
    end = blob.find(b"\n", start)
    if end < 0:
        raise FormatError(f"{path}: header starting at byte offset {start} is not terminated")
    try:
        header = json.loads(blob[start:end])
        t, h, w = (int(n) for n in header["dims"])
        channels = int(header["channels"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed header at byte offset {start} ({exc})") from None
    offset = end + 1
    n_vox = t * h * w
    expected = n_vox * channels * 4 + n_vox
    actual = len(blob) - offset
    if actual != expected:
        raise FormatError(
            f"{path}: payload at byte offset {offset} holds {actual} bytes but header dims "
            f"{[t, h, w]} x {channels} channels imply {expected} bytes")
    image = np.frombuffer(blob, dtype="<f4", count=n_vox * channels, offset=offset)
    mask = np.frombuffer(blob, dtype=np.uint8, count=n_vox, offset=offset + n_vox * channels * 4)
    return VolumeCase(
        header.get("id", os.path.basename(str(path))),
        image.reshape(t, h, w, channels).astype(np.float32),
        mask.reshape(t, h, w).copy(),
        header.get("metadata", {}),
    )


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

SPLITS = ("train", "val", "test")


def split_sizes(n: int, ratios) -> list[int]:
    ratios = [float(r) for r in ratios]
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1: {ratios}")
    raw = [n * r for r in ratios]
    sizes = [math.floor(x) for x in raw]
    # largest remainder, earlier splits win ties
    order = sorted(range(3), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:n - sum(sizes)]:
        sizes[i] += 1
    if min(sizes) < 1:
        raise ConfigError(f"{n} cases cannot fill splits {ratios} (sizes {sizes})")
    return sizes


def make_dataset(n_cases: int, params: GenParams, ratios=(0.6, 0.2, 0.2)):
    """Generate ``n_cases`` cases and split them; returns ``(train, val, test)``."""
    sizes = split_sizes(n_cases, ratios)
    cases = [generate_case(params, i) for i in range(n_cases)]
    order = make_rng(params.seed, 10_000).permutation(n_cases)
    out, pos = [], 0
    for size in sizes:
        out.append([cases[i] for i in sorted(order[pos:pos + size])])
        pos += size
    return tuple(out)


def save_dataset(splits, params: GenParams, directory) -> str:
    os.makedirs(directory, exist_ok=True)
    manifest = {"format": "V25D1-dataset", "generator": params.to_dict(), "splits": {}}
    for name, cases in zip(SPLITS, splits):
        files = []
        for case in cases:
            fname = f"{case.case_id}.v25d"
            save_case(case, os.path.join(directory, fname))
            files.append(fname)
        manifest["splits"][name] = files
    path = os.path.join(directory, DATASET_MANIFEST)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_dataset(directory) -> dict[str, list[VolumeCase]]:
    path = os.path.join(directory, DATASET_MANIFEST)
    with open(path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: bad dataset manifest ({exc})") from None
    return {name: [load_case(os.path.join(directory, f)) for f in files]
            for name, files in manifest["splits"].items()}

