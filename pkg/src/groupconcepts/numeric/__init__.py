from .adam import AdamState, adam_step
from .gradcheck import GradCheckReport, grad_check
from .tensor import (
    ComputationTape,
    ShapeError,
    Tensor,
    add,
    binary_cross_entropy_with_logits,
    concatenate,
    cross_entropy,
    embedding,
    gelu,
    layer_norm,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    softmax,
    take,
    transpose,
    tsum,
)

__all__ = [
    "AdamState",
    "ComputationTape",
    "GradCheckReport",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "binary_cross_entropy_with_logits",
    "concatenate",
    "cross_entropy",
    "embedding",
    "gelu",
    "grad_check",
    "layer_norm",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "scale",
    "softmax",
    "take",
    "transpose",
    "tsum",
]
