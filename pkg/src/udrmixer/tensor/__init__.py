"""Minimal numpy tensor engine with reverse-mode differentiation."""

from .core import DEFAULT_DTYPE, ShapeError, Tensor, as_tensor, is_grad_enabled, no_grad
from .gradcheck import grad_check, numerical_grad
from .ops import (
    ComplexTensor,
    abs_,
    activation,
    add,
    channels_to_complex,
    complex_to_channels,
    conv2d,
    count_flops,
    fft2,
    gelu,
    ifft2,
    interpolate_bilinear,
    irfft2,
    interpolation_matrix,
    layer_norm,
    mean,
    mul,
    neg,
    pixel_shuffle,
    pixel_unshuffle,
    relu,
    rfft2,
    rotate_axes,
    sigmoid,
    sub,
    sum_,
)

__all__ = [
    "DEFAULT_DTYPE", "ShapeError", "Tensor", "ComplexTensor", "as_tensor", "no_grad",
    "is_grad_enabled", "grad_check", "numerical_grad", "abs_", "activation", "add",
    "channels_to_complex", "complex_to_channels", "conv2d", "count_flops", "fft2", "gelu",
    "ifft2", "irfft2", "rfft2", "interpolate_bilinear", "interpolation_matrix", "layer_norm", "mean", "mul",
    "neg", "pixel_shuffle", "pixel_unshuffle", "relu", "rotate_axes", "sigmoid", "sub",
    "sum_",
]
