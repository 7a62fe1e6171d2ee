"""Minimal reverse-mode tensor engine used by the embedding network."""

from .tensor import Op, Parameter, Tape, Tensor, backward
from .ops import (
    add, channel_affine, concat, conv3d, conv_output_shape, cosine_distance,
    cosine_similarity, global_avg_pool, l2_normalize, linear, mul, reduce_mean,
    reduce_sum, relu, reshape, rowdot, scale, sub, take, temporal_subsample,
)
from .gradcheck import GradCheckReport, grad_check
from .optim import Optimizer, OptimizerConfig, optimizer_step
from . import checkpoint

__all__ = [
    "Op", "Parameter", "Tape", "Tensor", "backward",
    "add", "channel_affine", "concat", "conv3d", "conv_output_shape",
    "cosine_distance", "cosine_similarity", "global_avg_pool", "l2_normalize",
    "linear", "mul", "reduce_mean", "reduce_sum", "relu", "reshape", "rowdot",
    "scale", "sub", "take", "temporal_subsample",
    "GradCheckReport", "grad_check", "Optimizer", "OptimizerConfig",
    "optimizer_step", "checkpoint",
]
