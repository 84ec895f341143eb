"""Lambda+ layers and the LambdaUNet segmentation network in numpy."""

__version__ = "0.1.0"

from .errors import ConfigError, DimensionError, FormatError
from .lambda_plus import (LambdaPlusConfig, LambdaPlusWeights, Variant, forward_fast,
                          forward_fused, forward_naive, init_weights)
from .metrics import MetricsReport, score_case, score_split
from .synth import GenParams, VolumeCase, generate_case, load_case, make_dataset, save_case
from .training import FitResult, TrainConfig, evaluate, fit
from .unet import UNetConfig, UNetModel, build, forward, load_model, predict_mask, save_model
