from eend_lab.numerics.gradcheck import finite_difference_gradient, relative_error
from eend_lab.numerics.ops import (
    activation,
    conv1d_depthwise,
    conv2d_depthwise_separable,
    glu,
    layer_norm,
    matmul,
    relu,
    same_padding,
    sigmoid,
    swish,
)
from eend_lab.numerics.rng import Rng

__all__ = [
    "Rng",
    "activation",
    "conv1d_depthwise",
    "conv2d_depthwise_separable",
    "finite_difference_gradient",
    "glu",
    "layer_norm",
    "matmul",
    "relative_error",
    "relu",
    "same_padding",
    "sigmoid",
    "swish",
]
