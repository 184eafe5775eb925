"""Minimal reverse-mode autodiff over NCHW float32 tensors."""

from .init import xavier_init
from .ops import batchnorm2d, concat_channels, conv2d, maxpool2d, relu, softmax_channels, upconv2d
from .optim import AdamState, adam_step
from .tensor import Tensor, no_grad, zero_grads

__all__ = [
    "AdamState", "Tensor", "adam_step", "batchnorm2d", "concat_channels", "conv2d", "maxpool2d",
    "no_grad", "relu", "softmax_channels", "upconv2d", "xavier_init", "zero_grads",
]
