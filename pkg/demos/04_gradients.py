# %% [markdown]
# # Checking gradients
#
# Every operation records how to push a gradient back to its inputs.
# Central finite differences confirm the analytic gradients on a single
# layer and on a whole (small) network.

# %%
import numpy as np

from lambdaunet import autodiff as ad
from lambdaunet import checks, lambda_plus as lp, unet

x = ad.Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
loss = ad.tsum(x * x) / 2
ad.backward(loss)
print("d/dx of sum(x^2)/2:", x.grad.tolist())

# %%
rng = np.random.default_rng(0)
config = lp.LambdaPlusConfig(c=3, k=4, v=5, u=2)
w = lp.init_weights(config, rng)
vol = rng.normal(size=(1, 4, 6, 6, 3))


def layer_loss(*tables):
    return ad.tsum(lp.forward_fused(vol, lp.LambdaPlusWeights(*tables), config) ** 2)


errs = ad.finite_diff_check(layer_loss, list(w.as_dict().values()), per_leaf=True)
print({name: f"{e:.1e}" for name, e in zip(w.as_dict(), errs)})

# %% [markdown]
# The whole network in float64 with the training loss.

# %%
model = unet.build(unet.UNetConfig(levels=2, base_channels=4), seed=0, dtype=np.float64)
names = list(model.params)
image = rng.uniform(size=(1, 3, 8, 8, 2))
labels = (rng.uniform(size=(1, 3, 8, 8)) < 0.2).astype(float)


def net_loss(*params):
    return ad.bce_with_logits(unet.forward(model, image, dict(zip(names, params))), labels)


print("worst relative error:",
      ad.finite_diff_check(net_loss, [model.params[n] for n in names]))

# %% [markdown]
# The packaged suites bundle these checks with the receptive-field tests.

# %%
for suite in ("oracle", "grad", "locality"):
    print(checks.SUITES[suite]().summary())
