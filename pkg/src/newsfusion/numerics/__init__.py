"""Tensor tape, parameter storage, Adam, and gradient verification."""

from .adam import AdamState, adam_step
from .gradcheck import GradCheckReport, format_report, grad_check
from .params import ParameterStore
from .tensor import (
    NumericsError,
    Tensor,
    backward,
    clip,
    concat,
    dropout,
    exp,
    gather_rows,
    layer_norm,
    linear,
    log,
    masked_softmax,
    matmul,
    no_grad,
    reduce_max,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scaled_dot_attention,
    softmax,
    sqrt,
    transpose,
)

__all__ = [
    "AdamState",
    "adam_step",
    "GradCheckReport",
    "format_report",
    "grad_check",
    "ParameterStore",
    "NumericsError",
    "Tensor",
    "backward",
    "clip",
    "concat",
    "dropout",
    "exp",
    "gather_rows",
    "layer_norm",
    "linear",
    "log",
    "masked_softmax",
    "matmul",
    "no_grad",
    "reduce_max",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "scaled_dot_attention",
    "softmax",
    "sqrt",
    "transpose",
]
