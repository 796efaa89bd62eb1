from .tensor import (
    GradientError,
    Tensor,
    abs_,
    add,
    as_tensor,
    backward,
    concat,
    conv2d,
    exp,
    getitem,
    l1_loss,
    matmul,
    max_pool2,
    mean,
    mul,
    relu,
    reshape,
    softmax,
    sq_norm,
    sqrt,
    square,
    sum_,
    take,
    transpose,
    upsample_nearest2,
)
from .eigh import SymSpectrum, eigh_sym
from .optim import Adam, grad_norm, sgd_step, zero_grad
from .gradcheck import check_grad

__all__ = [
    "Adam", "GradientError", "SymSpectrum", "Tensor", "abs_", "add", "as_tensor", "backward",
    "check_grad", "concat", "conv2d", "eigh_sym", "exp", "getitem", "grad_norm", "l1_loss",
    "matmul", "max_pool2", "mean", "mul", "relu", "reshape", "sgd_step", "softmax", "sq_norm",
    "sqrt", "square", "sum_", "take", "transpose", "upsample_nearest2", "zero_grad",
]
