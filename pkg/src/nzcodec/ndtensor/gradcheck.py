"""Central finite-difference gradient checking.

Used by the test-suite; runs graphs at 64-bit so the finite-difference
estimate is accurate enough for 1e-5 relative agreement.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _scalarize(out: Tensor, weights):
    from . import functional as F

    if out.size == 1:
        return F.sum(out)
    return F.sum(F.mul(out, Tensor(weights.astype(out.dtype))))


def numerical_gradient(fn, arrays, wrt: int, h: float = 1e-3, weights=None) -> np.ndarray:
    """d sum(w * fn(*arrays)) / d arrays[wrt] by central differences."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[wrt]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = target[idx]
        target[idx] = orig + h
        plus = _scalarize(fn(*[Tensor(a) for a in base]), weights).item()
        target[idx] = orig - h
        minus = _scalarize(fn(*[Tensor(a) for a in base]), weights).item()
        target[idx] = orig
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad


def analytic_gradients(fn, arrays, weights=None):
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    _scalarize(fn(*tensors), weights).backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)``."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn, *arrays, h: float = 1e-3, seed: int = 0, wrt=None) -> list:
    """Return the relative error of the analytic gradient for each input.

    Non-scalar outputs are reduced with fixed random weights so every output
    element contributes a distinct direction.
    """
    probe = fn(*[Tensor(np.array(a, dtype=np.float64)) for a in arrays])
    weights = None
    if probe.size != 1:
        weights = np.random.default_rng(seed).standard_normal(probe.shape)
    analytic = analytic_gradients(fn, arrays, weights)
    indices = range(len(arrays)) if wrt is None else wrt
    return [relative_error(analytic[i], numerical_gradient(fn, arrays, i, h, weights)) for i in indices]
