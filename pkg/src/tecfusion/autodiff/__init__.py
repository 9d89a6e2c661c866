"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from .gradcheck import analytic_gradients, grad_check
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    dropout,
    elu,
    embedding,
    exp,
    expand_dims,
    getitem,
    layer_norm,
    log,
    masked_fill,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    softmax,
    square,
    stack,
    sub,
    sum_,
    swapaxes,
    tanh,
    transpose,
)

__all__ = [
    "Tensor",
    "add",
    "analytic_gradients",
    "as_tensor",
    "backward",
    "concat",
    "div",
    "dropout",
    "elu",
    "embedding",
    "exp",
    "expand_dims",
    "getitem",
    "grad_check",
    "layer_norm",
    "log",
    "masked_fill",
    "matmul",
    "mean",
    "mul",
    "neg",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "square",
    "stack",
    "sub",
    "sum_",
    "swapaxes",
    "tanh",
    "transpose",
]
