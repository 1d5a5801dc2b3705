"""Adam with a continuous exponential learning-rate decay."""
from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr0: float = 5e-4
    decay_rate: float = 0.1
    decay_steps: int = 100_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = None

    @classmethod
    def for_params(cls, flat, **kw):
        return cls(m=np.zeros_like(flat), v=np.zeros_like(flat), **kw)

    def lr_at(self, t=None):
        return lr_at(self.t if t is None else t, self.lr0, self.decay_rate, self.decay_steps)


def lr_at(t, lr0=5e-4, decay_rate=0.1, decay_steps=100_000):
    return lr0 * decay_rate ** (t / decay_steps)


def adam_step(flat, grad, state):
    """In-place Adam update of the flat parameter vector ``flat``."""
    if flat.shape != grad.shape or state.m.shape != flat.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise FloatingPointError(f"non-finite gradient at parameter index {bad[0]}")
    if state.clip_norm is not None:
        norm = float(np.sqrt(np.sum(grad.astype(np.float64) ** 2)))
        if norm > state.clip_norm:
            grad = grad * (state.clip_norm / norm)
    lr = state.lr_at()
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1 - b1) * grad
    state.v *= b2
    state.v += (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1 ** state.t)
    v_hat = state.v / (1 - b2 ** state.t)
    flat -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(flat.dtype)
    return flat, state
