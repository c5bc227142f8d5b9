from .ops import (
    activation,
    add,
    concat,
    conv2d,
    conv2d_transpose,
    conv_out_size,
    conv_transpose_out_size,
    dense,
    lstm_step,
    mean_all,
    mse,
    mul,
    pool_gap,
    sigmoid,
    square,
    sub,
    sum_all,
    take,
    tanh,
)
from .optim import OptState, optimizer_step
from .tensor import (
    GradStore,
    GraphError,
    NetworkParams,
    NonFiniteError,
    Tensor,
    TensorError,
    backward,
    check_finite,
    grad_enabled,
    no_grad,
)

__all__ = [
    "GradStore", "GraphError", "NetworkParams", "NonFiniteError", "OptState", "Tensor", "TensorError",
    "activation", "add", "backward", "check_finite", "concat", "conv2d", "conv2d_transpose",
    "conv_out_size", "conv_transpose_out_size", "dense", "grad_enabled", "lstm_step", "mean_all", "mse",
    "mul", "no_grad", "optimizer_step", "pool_gap", "sigmoid", "square", "sub", "sum_all", "take", "tanh",
]
