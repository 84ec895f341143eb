# %% [markdown]
# # One Lambda+ layer, three ways
#
# A Lambda+ layer turns each pixel's query into an output by multiplying it
# with a small k x v matrix (a "lambda") that summarises some context.
# Three contexts are summed: the whole slice (global), an r x r window
# (local) and the same pixel on neighbouring slices (inter-slice).

# %%
import time

import numpy as np

from lambdaunet import autodiff as ad
from lambdaunet import lambda_plus as lp

rng = np.random.default_rng(0)
config = lp.LambdaPlusConfig(c=4, k=8, v=16, u=1, r=3, t_k=3, variant="2.5d")
weights = lp.init_weights(config, rng)
x = rng.normal(size=(1, 6, 16, 16, config.c))  # (b, t, h, w, c)
print({name: arr.shape for name, arr in weights.as_dict().items()})

# %% [markdown]
# The per-pixel loops are the reference.  The fast route materialises
# every pixel's lambda with convolutions; the fused route applies the
# queries to the position tables first and never stores them.

# %%
t0 = time.perf_counter()
ref = lp.forward_naive(x, weights, config)
t1 = time.perf_counter()
with ad.no_grad():
    fast = lp.forward_fast(x, weights, config).value
    t2 = time.perf_counter()
    fused = lp.forward_fused(x, weights, config).value
    t3 = time.perf_counter()
print(f"naive {t1 - t0:.3f}s  fast {t2 - t1:.3f}s  fused {t3 - t2:.3f}s")
print("max |fast - naive| =", np.abs(fast - ref).max())
print("max |fused - naive| =", np.abs(fused - ref).max())

# %% [markdown]
# The global lambda is one matrix per slice, shared by all its pixels.

# %%
lam = lp.naive_lambdas(x, weights, config)["global"]
print("distinct global lambdas in slice 0:",
      len({lam[0, 0, i, j].tobytes() for i in range(16) for j in range(16)}))

# %% [markdown]
# Receptive field on neighbouring slices: only the pixel at the same (h, w)
# is seen.  Perturb slice 3 away from (8, 8) and the output at (2, 8, 8)
# stays exactly the same; perturb (3, 8, 8) and it moves.

# %%
def out_at(vol):
    with ad.no_grad():
        return lp.forward_fused(vol, weights, config).value[0, 2, 8, 8]

base = out_at(x)
elsewhere = x.copy()
elsewhere[0, 3, 4, 11] += 5
same_spot = x.copy()
same_spot[0, 3, 8, 8] += 5
print("change from (3, 4, 11):", np.abs(out_at(elsewhere) - base).max())
print("change from (3, 8, 8): ", np.abs(out_at(same_spot) - base).max())

# %% [markdown]
# Variants.  "2d" drops the inter-slice term; "3d" drops it too but widens
# the local window to t_k x r x r.  With a zero inter-slice table the 2.5d
# layer reduces to the 2d one.

# %%
flat = lp.LambdaPlusConfig(c=4, k=8, v=16, variant="2d")
no_f = lp.LambdaPlusWeights(weights.w_q, weights.w_k, weights.w_v, weights.e,
                            np.zeros_like(weights.f))
with ad.no_grad():
    diff = lp.forward_fast(x, no_f, config).value - lp.forward_fast(x, weights, flat).value
print("2.5d with F = 0 vs 2d:", np.abs(diff).max())
