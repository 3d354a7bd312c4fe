"""Adam with bias correction, plus global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, states, grads, lr):
    """Apply one Adam update in place.

    ``params``, ``states`` and ``grads`` are parallel sequences; each state's
    ``step`` is incremented. Raises :class:`ContractError` on a missing grad.
    """
    for p, st, g in zip(params, states, grads):
        if g is None:
            raise ContractError(f"adam_step: parameter {getattr(p, 'name', '?')!r} has no gradient")
        if st.m.shape != p.shape:
            raise ContractError(f"adam_step: state shape {st.m.shape} != parameter shape {p.shape}")
        st.step += 1
        st.m = st.beta1 * st.m + (1.0 - st.beta1) * g
        st.v = st.beta2 * st.v + (1.0 - st.beta2) * (g * g)
        m_hat = st.m / (1.0 - st.beta1**st.step)
        v_hat = st.v / (1.0 - st.beta2**st.step)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + st.eps)).astype(p.dtype, copy=False)


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ContractError("Adam: parameter names must be unique")
        self.lr = lr
        self.states = [
            AdamState(np.zeros_like(p.data), np.zeros_like(p.data), 0, betas[0], betas[1], eps) for p in self.params
        ]

    def step(self):
        adam_step(self.params, self.states, [p.grad for p in self.params], self.lr)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self) -> dict:
        out = {"lr": self.lr}
        for p, st in zip(self.params, self.states):
            out[p.name] = {"m": st.m, "v": st.v, "step": st.step}
        return out

    def load_state_dict(self, state: dict):
        self.lr = state["lr"]
        for p, st in zip(self.params, self.states):
            entry = state[p.name]
            st.m = np.asarray(entry["m"], dtype=p.dtype).copy()
            st.v = np.asarray(entry["v"], dtype=p.dtype).copy()
            st.step = int(entry["step"])


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * factor).astype(p.dtype, copy=False)
    return total
