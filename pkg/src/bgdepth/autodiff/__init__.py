"""Minimal reverse-mode tensor engine with the layer set of both networks."""

from .gradcheck import grad_check, numeric_grad, relative_error
from .ops import (
    add,
    batch_norm,
    batchnorm2d,
    batchnorm3d,
    concat,
    conv2d,
    conv3d,
    conv_transpose2d,
    conv_transpose3d,
    gather_weighted,
    maxpool2d,
    maxpool3d,
    mean,
    mse,
    mul,
    narrow,
    relu,
    reshape,
    sigmoid,
    split,
    sum,
)
from .tensor import Param, Tape, TapeError, Tensor, as_tensor, backward

__all__ = [
    "Param", "Tape", "TapeError", "Tensor", "as_tensor", "backward",
    "grad_check", "numeric_grad", "relative_error",
    "add", "mul", "sum", "mean", "reshape", "relu", "sigmoid", "concat", "narrow", "split",
    "mse", "gather_weighted", "conv2d", "conv3d", "conv_transpose2d", "conv_transpose3d",
    "maxpool2d", "maxpool3d", "batch_norm", "batchnorm2d", "batchnorm3d",
]
