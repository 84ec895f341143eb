# %% [markdown]
# # Training LambdaUNet on synthetic data
#
# The network is a UNet whose encoder blocks are Lambda+ layers.  Slices
# travel through the network merged into the batch axis; only the Lambda+
# layers look across slices.  Here a small model is trained for a few
# epochs so the script finishes in a minute or two.

# %%
import numpy as np

from lambdaunet import synth, training, unet

gen = synth.GenParams(t=8, h=32, w=32, radius=(2.0, 6.0), jitter=2.0, seed=1)
train, val, test = synth.make_dataset(20, gen)

config = unet.UNetConfig(levels=3, base_channels=8, variant="2.5d")
model = unet.build(config, seed=0)
print(f"{model.n_parameters()} parameters")
for layer in model.topology():
    print(" ", layer)

# %% [markdown]
# RMSprop, a constant learning rate for the first fifth of the epochs and
# a linear decay afterwards.  The checkpoint with the best validation DSC
# is kept.

# %%
cfg = training.TrainConfig(epochs=20, warmup_epochs=4, initial_lr=2e-3, batch_segments=4,
                           steps_per_epoch=8, seed=0)
print([round(training.lr_at(e, cfg), 5) for e in range(cfg.epochs)])
result = training.fit(model, train, val, cfg)
print("best epoch", result.best_epoch, "val DSC", round(result.best_val_dsc, 4))

# %%
report = training.evaluate(result.model, test)
print(report.to_table())

# %% [markdown]
# Thresholding: a pixel is lesion when sigmoid(logit) >= threshold.

# %%
logits = unet.predict_logits(result.model, test[0].image[None])
for thr in (0.3, 0.5, 0.7):
    print(thr, int(unet.mask_from_logits(logits, thr).sum()), "pixels flagged,",
          int(test[0].mask.sum()), "true")
