"""EfficientUNet cloud segmentation in numpy.

Submodules
----------
tensor    NCHW operators (conv, BN, activations, pooling, resize, softmax)
weights   manifest.json + weights.bin store
encoder   EfficientNet B0-B5 configs and forward pass
model     EfficientUNet decoder, model assembly, input preparation
metrics   Dice, CCE, soft-Dice, combined loss, PR curves
radam     Rectified Adam and head training
rle       run-length codec and submission mask scaling
augment   flips, rotation, grid distortion
dataset   annotation CSVs, splits, prediction and scoring
synthetic four-texture toy dataset and texture features
cli       ``cloudseg`` command line
"""
from .encoder import (
    BlockSpec,
    EncoderConfig,
    ScalingCoefficients,
    VARIANTS,
    baseline_b0_config,
    encoder_forward,
    mbconv_forward,
    parameter_count,
    round_channels,
    round_repeats,
    scale_config,
    variant_config,
)
from .metrics import (
    LossWeights,
    PrCurve,
    categorical_cross_entropy,
    combined_loss,
    dice_coefficient,
    mean_dice,
    pr_curve,
    soft_dice_loss,
)
from .model import (
    CLASSES,
    DecoderConfig,
    SegmentationModel,
    build_efficientunet,
    decoder_block,
    model_forward,
    prepare_input,
)
from .radam import RAdamHyperparams, RAdamState, radam_step, train_head
from .rle import Rle, parse_rle, rle_decode, rle_encode, rle_text, scale_mask
from .tensor import ConvWeights, ShapeError

__version__ = "0.1.0"
