from .conditioning import (
    COND_DIM,
    AffinePredictor,
    NormPoint,
    cbn,
    concat_condition,
    encode_angle,
    film,
)
from .gradcheck import grad_check
from .layers import BatchNorm1d, Conv1d, Linear, Module
from .tensor import Parameter, ShapeError, Tensor, batchnorm, conv1d, softmax, softmax_cross_entropy

__all__ = [
    "COND_DIM",
    "AffinePredictor",
    "BatchNorm1d",
    "Conv1d",
    "Linear",
    "Module",
    "NormPoint",
    "Parameter",
    "ShapeError",
    "Tensor",
    "batchnorm",
    "cbn",
    "concat_condition",
    "conv1d",
    "encode_angle",
    "film",
    "grad_check",
    "softmax",
    "softmax_cross_entropy",
]
