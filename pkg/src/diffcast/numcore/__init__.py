"""Minimal reverse-mode tensor engine, deterministic RNG, and Adam."""

from .optim import ParameterSet, adam_step
from .rng import RngStream, gaussian_draw
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    conv1d_circular,
    grad_enabled,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    sigmoid,
    slice_axis,
    softplus,
    sub,
    sum_of_squares,
    tanh,
    tensor_sum,
)

__all__ = [
    "ParameterSet",
    "RngStream",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "conv1d_circular",
    "gaussian_draw",
    "grad_enabled",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "reshape",
    "sigmoid",
    "slice_axis",
    "softplus",
    "sub",
    "sum_of_squares",
    "tanh",
    "tensor_sum",
]
