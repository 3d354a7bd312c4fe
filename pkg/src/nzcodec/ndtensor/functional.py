"""Differentiable operations over :class:`Tensor`.

Elementwise binary ops broadcast the way numpy does; gradients are summed
back to each operand's shape. Convolutions use NCHW layout with square odd
kernels.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from ..errors import DimensionError, ParameterizationError
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _coerce(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _pair(a, b):
    a, b = _coerce(a, b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from None
    return a, b


# --------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return make_result(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    """``a ** exponent`` for a constant scalar exponent.

    For ``exponent < 1`` the derivative is unbounded at 0; the backward pass
    uses 0 there so a clamped input (``power(relu(t), w)``) stays finite.
    """
    exponent = float(exponent)
    out = a.data ** exponent

    def backward(g):
        if exponent >= 1.0:
            return (g * exponent * a.data ** (exponent - 1.0),)
        zero = a.data == 0
        safe = np.where(zero, 1.0, a.data)
        return (np.where(zero, 0.0, g * exponent * safe ** (exponent - 1.0)).astype(a.dtype, copy=False),)

    return make_result(out.astype(a.dtype, copy=False), (a,), backward, "power")


def square(a: Tensor) -> Tensor:
    return make_result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (numpy semantics)."""
    a, b = _coerce(a, b)
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: contraction axis mismatch {a.shape[-1]} vs {b.shape[-2]}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(np.matmul(a.data, b.data), (a, b), backward, "matmul")


# --------------------------------------------------------------------------
# unary elementwise


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def log2(a: Tensor) -> Tensor:
    scale = 1.0 / math.log(2.0)
    return make_result(np.log2(a.data), (a,), lambda g: (g * scale / a.data,), "log2")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def abs(a: Tensor) -> Tensor:  # noqa: A001
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = special.expit(a.data)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data).astype(a.dtype, copy=False)
    return make_result(out, (a,), lambda g: (g * special.expit(a.data),), "softplus")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
    return make_result(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_cdf(a: Tensor) -> Tensor:
    """Standard normal CDF, evaluated through ``erfc`` for tail accuracy."""
    out = (0.5 * special.erfc(-a.data * _INV_SQRT2)).astype(a.dtype, copy=False)

    def backward(g):
        return (g * _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data),)

    return make_result(out, (a,), backward, "normal_cdf")


def lower_bound(a: Tensor, bound: float) -> Tensor:
    """``max(a, bound)`` whose gradient still flows when it would raise ``a``.

    Below the bound the plain derivative is zero, which would freeze any
    value that once fell under it; passing negative gradients (those that
    push ``a`` upward under descent) keeps such values trainable.
    """
    bound_arr = np.asarray(bound, dtype=a.dtype)
    out = np.maximum(a.data, bound_arr)

    def backward(g):
        return (g * ((a.data >= bound_arr) | (g < 0)),)

    return make_result(out, (a,), backward, "lower_bound")


# --------------------------------------------------------------------------
# reductions and shape


def sum(a: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return make_result(np.asarray(out, dtype=a.dtype), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size // max(np.asarray(out).size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).astype(a.dtype, copy=True),)

    return make_result(np.asarray(out, dtype=a.dtype), (a,), backward, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        if _is_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_result(a.data[index], (a,), backward, "getitem")


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis=0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def avg_pool2d(a: Tensor) -> Tensor:
    """2x2 mean pooling, stride 2; odd trailing rows/columns are dropped."""
    n, c, h, w = a.shape
    h2, w2 = h // 2, w // 2
    cropped = a.data[:, :, : 2 * h2, : 2 * w2]
    out = cropped.reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def backward(g):
        full = np.zeros_like(a.data)
        up = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        full[:, :, : 2 * h2, : 2 * w2] = up
        return (full,)

    return make_result(out.astype(a.dtype, copy=False), (a,), backward, "avg_pool2d")


# --------------------------------------------------------------------------
# convolutions


def _windows(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Strided (N, C, ho, wo, k, k) view of k x k patches of ``xp``."""
    view = sliding_window_view(xp, (k, k), axis=(2, 3))
    return view[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _scatter(dcols: np.ndarray, out: np.ndarray, stride: int):
    """Adjoint of :func:`_windows`: add (N, h, w, C, k, k) patches into ``out``."""
    _, h, w, _, k, _ = dcols.shape
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + (h - 1) * stride + 1 : stride, j : j + (w - 1) * stride + 1 : stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )


def _check_conv(x, w, stride, transposed):
    name = "conv_transpose2d" if transposed else "conv2d"
    if x.ndim != 4:
        raise DimensionError(f"{name}: input must be 4-D (N, C, H, W), got {x.ndim}-D")
    if w.ndim != 4:
        raise DimensionError(f"{name}: weight must be 4-D, got {w.ndim}-D")
    k = w.shape[2]
    if w.shape[3] != k:
        raise DimensionError(f"{name}: kernel axes 2 and 3 differ ({w.shape[2]} vs {w.shape[3]})")
    if k % 2 == 0:
        raise DimensionError(f"{name}: kernel size must be odd, got {k}")
    if stride not in (1, 2):
        raise DimensionError(f"{name}: stride must be 1 or 2, got {stride}")
    if x.shape[1] != w.shape[0 if transposed else 1]:
        raise DimensionError(
            f"{name}: input channel axis 1 has {x.shape[1]} but weight axis "
            f"{0 if transposed else 1} expects {w.shape[0 if transposed else 1]}"
        )
    return k


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is (N, Cin, H, W), ``w`` is (Cout, Cin, k, k), ``b`` is (Cout,).
    """
    k = _check_conv(x, w, stride, transposed=False)
    n, _, h, wd = x.shape
    if h + 2 * pad < k:
        raise DimensionError(f"conv2d: height axis 2 ({h}) + 2*pad ({pad}) smaller than kernel {k}")
    if wd + 2 * pad < k:
        raise DimensionError(f"conv2d: width axis 3 ({wd}) + 2*pad ({pad}) smaller than kernel {k}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"conv2d: bias axis 0 has {b.shape} but weight has {w.shape[0]} output channels")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _windows(xp, k, stride, ho, wo)
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3])) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = np.tensordot(g, w.data, axes=([1], [0]))
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            _scatter(dcols, gxp, stride)
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward, "conv2d")


def conv_transpose2d(
    x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0, out_pad: int = 0
) -> Tensor:
    """Transposed convolution (the adjoint of :func:`conv2d` on the data path).

    ``x`` is (N, Cin, H, W), ``w`` is (Cin, Cout, k, k); output extent is
    ``(H - 1) * stride - 2 * pad + k + out_pad``.
    """
    k = _check_conv(x, w, stride, transposed=True)
    if not 0 <= out_pad < stride:
        raise DimensionError(f"conv_transpose2d: out_pad must be < stride, got {out_pad} >= {stride}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"conv_transpose2d: bias axis 0 has {b.shape} but weight has {w.shape[1]} output channels")
    n, _, h, wd = x.shape
    ho = (h - 1) * stride - 2 * pad + k + out_pad
    wo = (wd - 1) * stride - 2 * pad + k + out_pad
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv_transpose2d: non-positive output extent ({ho}, {wo})")
    hf = (h - 1) * stride + k + out_pad
    wf = (wd - 1) * stride + k + out_pad
    cout = w.shape[1]
    dcols = np.tensordot(x.data, w.data, axes=([1], [0]))
    full = np.zeros((n, cout, hf, wf), dtype=x.dtype)
    _scatter(dcols, full, stride)
    out = full[:, :, pad : pad + ho, pad : pad + wo]
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gfull = np.zeros((n, cout, hf, wf), dtype=g.dtype)
        gfull[:, :, pad : pad + ho, pad : pad + wo] = g
        cols = _windows(gfull, k, stride, h, wd)
        gx = None
        if x.requires_grad:
            gx = np.ascontiguousarray(np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))
        gw = np.tensordot(x.data, cols, axes=([0, 2, 3], [0, 2, 3])) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward, "conv_transpose2d")


def gdn(x: Tensor, beta: Tensor, gamma: Tensor, inverse: bool = False) -> Tensor:
    """Generalized divisive normalization.

    ``y_i = x_i * (beta_i + sum_j gamma_ij x_j^2) ** e`` with ``e = -1/2``
    (forward) or ``+1/2`` (inverse). ``beta`` and ``gamma`` are the effective,
    already-reparameterized values.
    """
    if x.ndim != 4:
        raise DimensionError(f"gdn: input must be 4-D, got {x.ndim}-D")
    c = x.shape[1]
    if beta.shape != (c,):
        raise DimensionError(f"gdn: beta axis 0 has {beta.shape[0] if beta.ndim else beta.shape} but input has {c} channels")
    if gamma.shape != (c, c):
        raise DimensionError(f"gdn: gamma shape {gamma.shape} does not match {c} channels")
    if np.any(beta.data <= 0):
        raise ParameterizationError("gdn: effective beta must be strictly positive")
    if np.any(gamma.data < 0):
        raise ParameterizationError("gdn: effective gamma must be non-negative")
    n, _, h, w = x.shape
    xf = x.data.reshape(n, c, h * w)
    x2 = xf * xf
    norm = np.matmul(gamma.data, x2) + beta.data[None, :, None]
    e = 0.5 if inverse else -0.5
    scale = np.sqrt(norm) if inverse else 1.0 / np.sqrt(norm)
    yf = xf * scale
    out = yf.reshape(x.shape)

    def backward(g):
        gf = g.reshape(n, c, h * w)
        t = gf * yf * (e / norm)
        gx = gf * scale + 2.0 * xf * np.matmul(gamma.data.T, t)
        gbeta = t.sum(axis=(0, 2))
        ggamma = np.matmul(t, np.swapaxes(x2, 1, 2)).sum(axis=0)
        return gx.reshape(x.shape), gbeta, ggamma

    return make_result(out, (x, beta, gamma), backward, "gdn_inverse" if inverse else "gdn")
