"""Minimal dense-tensor engine with reverse-mode automatic differentiation."""
from . import functional
from .functional import conv2d, conv_transpose2d, gdn
from .nn import GDN, Conv2d, ConvTranspose2d, LeakyReLU, Module, Parameter, ReLU, Sequential
from .optim import Adam, AdamState, adam_step, clip_grad_norm
from .tensor import Tensor, check_finite, detect_anomaly, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "Conv2d",
    "ConvTranspose2d",
    "GDN",
    "LeakyReLU",
    "Module",
    "Parameter",
    "ReLU",
    "Sequential",
    "Tensor",
    "adam_step",
    "check_finite",
    "clip_grad_norm",
    "conv2d",
    "conv_transpose2d",
    "detect_anomaly",
    "functional",
    "gdn",
    "no_grad",
]
