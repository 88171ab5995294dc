"""Numerical substrate: tensors with reverse-mode autodiff, FFT, Adam."""

from .fourier import fft, ifft, real_synthesis, rfft_modes
from .optim import AdamState, adam_step
from .tensor import (
    ACTIVATIONS, GradTape, NonFiniteError, Tensor, add, backward, concat, crop, div,
    exp, gelu, getitem, matmul, mean, mul, neg, pad_edge, relu, reshape, spectral_conv1d,
    square, stack, sub, tabs, tanh, tensor, transpose, tsum,
)

__all__ = [
    "ACTIVATIONS", "AdamState", "GradTape", "NonFiniteError", "Tensor", "adam_step", "add",
    "backward", "concat", "crop", "div", "exp", "fft", "gelu", "getitem", "ifft", "matmul",
    "mean", "mul", "neg", "pad_edge", "real_synthesis", "relu", "reshape", "rfft_modes",
    "spectral_conv1d", "square", "stack", "sub", "tabs", "tanh", "tensor", "transpose", "tsum",
]
