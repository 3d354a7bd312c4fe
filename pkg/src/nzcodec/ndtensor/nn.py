"""Parameter containers and the layers the codec transforms are built from."""
from __future__ import annotations

import math

import numpy as np

from ..errors import ContractError
from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor. ``name`` is assigned when registered."""

    __slots__ = ("name",)

    def __init__(self, data, dtype=np.float32):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True)
        self.name = ""


class Module:
    """Tree of named parameters and sub-modules.

    Attribute assignment registers :class:`Parameter` and :class:`Module`
    values, so ``named_parameters`` yields dotted paths such as
    ``"g_a.conv0.weight"``.
    """

    training = True

    def __setattr__(self, key, value):
        if isinstance(value, (Parameter, Module)):
            self.__dict__.setdefault("_children", {})[key] = value
        super().__setattr__(key, value)

    def named_parameters(self, prefix: str = ""):
        for key, child in self.__dict__.get("_children", {}).items():
            path = f"{prefix}{key}"
            if isinstance(child, Parameter):
                child.name = path
                yield path, child
            else:
                yield from child.named_parameters(path + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for child in self.__dict__.get("_children", {}).values():
            if isinstance(child, Module):
                yield from child.modules()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ContractError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ContractError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def to_dtype(self, dtype):
        """Cast every parameter in place (used by 64-bit gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Sequential(Module):
    def __init__(self, *layers):
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)
        self._layers = list(layers)

    def forward(self, x):
        for layer in self._layers:
            x = layer(x)
        return x

    def __iter__(self):
        return iter(self._layers)

    def __len__(self):
        return len(self._layers)

    def __getitem__(self, index):
        return self._layers[index]


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel_size=5, stride=2, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(cin * kernel_size * kernel_size)
        self.weight = Parameter(_uniform(rng, bound, (cout, cin, kernel_size, kernel_size)))
        self.bias = Parameter(_uniform(rng, bound, (cout,)))
        self.stride = stride
        self.pad = kernel_size // 2

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel_size=5, stride=2, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(cout * kernel_size * kernel_size)
        self.weight = Parameter(_uniform(rng, bound, (cin, cout, kernel_size, kernel_size)))
        self.bias = Parameter(_uniform(rng, bound, (cout,)))
        self.stride = stride
        self.pad = kernel_size // 2
        self.out_pad = stride - 1

    def forward(self, x):
        return F.conv_transpose2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad, out_pad=self.out_pad)


class GDN(Module):
    """GDN / inverse GDN layer.

    Effective parameters are ``beta = beta_raw**2 + beta_min`` and
    ``gamma = gamma_raw**2``, so positivity holds for any raw value.
    """

    def __init__(self, channels, inverse=False, beta_min=1e-6, gamma_init=0.1):
        self.inverse = inverse
        self.beta_min = beta_min
        self.beta = Parameter(np.full(channels, math.sqrt(1.0 - beta_min)))
        self.gamma = Parameter(math.sqrt(gamma_init) * np.eye(channels))

    def effective(self):
        beta = F.square(self.beta) + self.beta_min
        gamma = F.square(self.gamma)
        return beta, gamma

    def forward(self, x):
        beta, gamma = self.effective()
        return F.gdn(x, beta, gamma, inverse=self.inverse)


class ReLU(Module):
    def forward(self, x):
        return F.relu(x)


class LeakyReLU(Module):
    def __init__(self, slope=0.01):
        self.slope = slope

    def forward(self, x):
        return F.leaky_relu(x, self.slope)
