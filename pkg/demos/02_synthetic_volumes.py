# %% [markdown]
# # Synthetic anisotropic volumes
#
# Each case has 8 thick slices of 64 x 64 pixels and two channels.  Lesions
# are compact inside a slice but jump around from slice to slice, which is
# the situation the inter-slice lambda is meant for.

# %%
import tempfile
from pathlib import Path

import numpy as np

from lambdaunet import synth

params = synth.GenParams(seed=0)
case = synth.generate_case(params, index=3)
print(case.case_id, case.image.shape, case.mask.shape, case.image.dtype)
print("lesion voxels per slice:", case.mask.sum(axis=(1, 2)))
for les in case.metadata["lesions"]:
    print("  slices", les["start"], "to", les["start"] + les["extent"] - 1,
          "radii", np.round(les["radii"], 1))

# %% [markdown]
# Thick slices dilute a lesion: one core slice per lesion shows it at full
# contrast, its other slices only at a fraction, so a faint lesion pixel is
# easiest to confirm from the neighbouring slice at the same position.

# %%
for les in case.metadata["lesions"]:
    print("contrast per slice:", np.round(les["slice_contrast"], 3))

# %% [markdown]
# A crude ASCII view of the slices that hold lesion pixels ('#' lesion,
# '.' brain, ' ' background).

# %%
for s in np.flatnonzero(case.mask.any(axis=(1, 2))):
    img = case.image[s, ::4, ::4, 0]
    msk = case.mask[s, ::4, ::4]
    print(f"slice {s}")
    for row_img, row_msk in zip(img, msk):
        print("".join("#" if m else ("." if v > 0.2 else " ") for v, m in zip(row_img, row_msk)))

# %% [markdown]
# How discontinuous?  Overlap between neighbouring slices versus
# neighbouring rows, as IoU of the mask with itself shifted by one.

# %%
cases = [synth.generate_case(params, i) for i in range(40)]
cases = [c for c in cases if c.mask.any()]
print("across slices:", np.mean([synth.adjacent_iou(c.mask, 0) for c in cases]).round(3))
print("across rows:  ", np.mean([synth.adjacent_iou(c.mask, 1) for c in cases]).round(3))
still = synth.GenParams(seed=0, jitter=0.0)
print("across slices, no jitter:",
      np.mean([synth.adjacent_iou(synth.generate_case(still, i).mask, 0)
               for i in range(40)]).round(3))

# %% [markdown]
# Files: a text header line followed by raw little-endian floats and mask
# bytes.  Loading gives back the same bits.

# %%
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "case.v25d"
    synth.save_case(case, path)
    blob = path.read_bytes()
    print(blob[:80])
    back = synth.load_case(path)
    print("bit-exact:", back.image.tobytes() == case.image.tobytes()
          and back.mask.tobytes() == case.mask.tobytes())

    train, val, test = synth.make_dataset(10, params)
    print("split sizes:", len(train), len(val), len(test))
    synth.save_dataset((train, val, test), params, tmp)
    print(sorted(p.name for p in Path(tmp).iterdir())[:4], "...")
