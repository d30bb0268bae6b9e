"""Array primitives, reverse-mode differentiation, losses and the Nadam optimizer."""
from hct.numerics.gradcheck import finite_diff_gradient, relative_error, sample_coordinates
from hct.numerics.kernels import BACKEND
from hct.numerics.layers import (
    conv1d,
    dense,
    encoder_block,
    maxpool1d,
    multi_head_attention,
)
from hct.numerics.losses import LossValue, binary_cross_entropy, categorical_cross_entropy
from hct.numerics.optim import OptimizerState, nadam_step
from hct.numerics.tape import Gradients, Node, Tape, backward

__all__ = [
    "BACKEND",
    "Gradients",
    "LossValue",
    "Node",
    "OptimizerState",
    "Tape",
    "backward",
    "binary_cross_entropy",
    "categorical_cross_entropy",
    "conv1d",
    "dense",
    "encoder_block",
    "finite_diff_gradient",
    "maxpool1d",
    "multi_head_attention",
    "nadam_step",
    "relative_error",
    "sample_coordinates",
]
