"""Sinusoidal positional encoding of positions, view and sun directions."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncodingConfig:
    L_pos: int = 10
    L_dir: int = 4
    include_identity: bool = True

    def __post_init__(self):
        if self.L_pos < 0 or self.L_dir < 0:
            raise ValueError("frequency counts must be >= 0")

    def pos_dim(self, d_in=3):
        return encoded_dim(d_in, self.L_pos, self.include_identity)

    def dir_dim(self, d_in=3):
        return encoded_dim(d_in, self.L_dir, self.include_identity)


def encoded_dim(d_in, L, include_identity=True):
    return d_in * (int(include_identity) + 2 * L)


def encode(p, L, include_identity=True):
    """Encode the last axis of ``p`` with ``L`` octaves of sin/cos.

    Per scalar the layout is ``(p, sin(2^0 pi p), cos(2^0 pi p), ...)``, with
    scalars of a vector laid out one after the other. A bare scalar is treated
    as a length-1 vector. The result keeps the dtype of a floating input.
    """
    p = np.asarray(p)
    if not np.issubdtype(p.dtype, np.floating):
        p = p.astype(np.float64)
    if p.ndim == 0:
        p = p[None]
    if not np.all(np.isfinite(p)):
        raise ValueError("encode: non-finite input")
    freqs = (2.0 ** np.arange(L) * np.pi).astype(p.dtype)
    ang = p[..., :, None] * freqs  # (..., d, L)
    parts = np.empty(p.shape + (int(include_identity) + 2 * L,), dtype=p.dtype)
    k = 0
    if include_identity:
        parts[..., 0] = p
        k = 1
    parts[..., k::2] = np.sin(ang)
    parts[..., k + 1::2] = np.cos(ang)
    return parts.reshape(p.shape[:-1] + (-1,))


def encode_jacobian(p, L, include_identity=True):
    """Derivative of each encoded entry w.r.t. its own input scalar.

    Same layout as :func:`encode`; the encoding is component-wise so this is
    the full (block diagonal) Jacobian.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 0:
        p = p[None]
    freqs = 2.0 ** np.arange(L) * np.pi
    ang = p[..., :, None] * freqs
    parts = np.empty(p.shape + (int(include_identity) + 2 * L,))
    k = 0
    if include_identity:
        parts[..., 0] = 1.0
        k = 1
    parts[..., k::2] = freqs * np.cos(ang)
    parts[..., k + 1::2] = -freqs * np.sin(ang)
    return parts.reshape(p.shape[:-1] + (-1,))
