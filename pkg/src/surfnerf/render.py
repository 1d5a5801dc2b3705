"""Alpha compositing along rays, the sun/sky irradiance model, altitude
extraction and the two training losses, each with its reverse pass."""
from dataclasses import dataclass

import numpy as np

EPS_W = 1e-6
W_FLOOR = 0.05
WHITE = np.ones(3)


def alpha_from_sigma(sigma, delta):
    return -np.expm1(-np.asarray(sigma) * delta)


@dataclass
class CompositeTrace:
    alpha: np.ndarray        # (R, N)
    T: np.ndarray            # (R, N) transmittance before each sample
    w: np.ndarray            # (R, N)
    color: np.ndarray        # (R, 3), or None when no colors were given
    T_final: np.ndarray      # (R,) transmittance past the last sample

    @property
    def acc(self):
        return self.w.sum(axis=-1)


def composite(colors, alpha):
    """Front-to-back compositing of per-sample ``colors`` (R, N, 3) with opacities ``alpha`` (R, N)."""
    alpha = np.asarray(alpha)
    trans = 1.0 - alpha
    T_ext = np.empty(alpha.shape[:-1] + (alpha.shape[-1] + 1,), dtype=alpha.dtype)
    T_ext[..., 0] = 1.0
    np.cumprod(trans, axis=-1, out=T_ext[..., 1:])
    T = T_ext[..., :-1]
    w = T * alpha
    color = None if colors is None else np.einsum("...n,...nc->...c", w, colors)
    return CompositeTrace(alpha=alpha, T=T, w=w, color=color, T_final=T_ext[..., -1])


def composite_backward(trace, delta, colors=None, g_color=None, g_w=None, g_T=None):
    """Cotangents of density (and of the per-sample colors) from cotangents
    of the composited color, the weights and the transmittances.

    Works in terms of density so no division by ``1 - alpha`` is needed:
    ``dT_k/dsigma_j = -delta_j T_k`` for ``j < k`` and
    ``dw_j/dsigma_j = delta_j T_{j+1}``.
    """
    T, w, alpha = trace.T, trace.w, trace.alpha
    gw = np.zeros_like(w) if g_w is None else np.array(g_w, dtype=w.dtype)
    g_colors = None
    if g_color is not None:
        gw += np.einsum("...c,...nc->...n", g_color, colors)
        g_colors = w[..., None] * g_color[..., None, :]
    gT = gw * alpha
    if g_T is not None:
        gT += g_T
    gTT = gT * T
    # tail[j] = sum_{k > j} gT_k T_k
    tail = np.cumsum(gTT[..., ::-1], axis=-1)[..., ::-1] - gTT
    T_next = T * (1.0 - alpha)
    g_sigma = delta * (gw * T_next - tail)
    return g_sigma, g_colors


def irradiance(s, sky):
    """Sun visibility ``s`` (...,) blended between white light and ``sky`` (..., 3)."""
    s = np.asarray(s)[..., None]
    return s * WHITE.astype(s.dtype) + (1 - s) * sky


def irradiance_backward(s, sky, g_l):
    """Returns (g_s, g_sky) for cotangent ``g_l`` of the irradiance."""
    s = np.asarray(s)
    g_s = np.einsum("...c,...c->...", g_l, 1 - sky)
    g_sky = g_l * (1 - s)[..., None]
    return g_s, g_sky


def expected_altitude(trace, z, alt_min, eps_w=EPS_W, w_floor=W_FLOOR):
    """Weight-averaged sample altitude per ray; rays with too little opacity
    are flagged empty and reported at ``alt_min``. Returns (altitude, empty)."""
    w = trace.w
    acc = w.sum(axis=-1)
    zhat = (w * z).sum(axis=-1) / np.maximum(acc, eps_w)
    empty = acc < w_floor
    zhat = np.where(empty, alt_min, zhat)
    return zhat, empty


def nerf_loss(pred, gt):
    """Total squared color error and its cotangent ``2 (pred - gt)``."""
    diff = np.asarray(pred) - gt
    return float(np.sum(diff * diff)), 2.0 * diff


def solar_terms(T, w, s):
    """Per-ray shadow consistency terms along solar rays.

    Returns ``(transparency, absorption, g_T, g_w, g_s)`` where
    transparency = sum_i (T_i - s_i)^2 and absorption = 1 - sum_i w_i s_i.
    """
    d = T - s
    transparency = np.sum(d * d, axis=-1)
    absorption = 1.0 - np.sum(w * s, axis=-1)
    return transparency, absorption, 2.0 * d, -s, -2.0 * d - w


@dataclass
class LossBreakdown:
    color: float
    transparency: float = 0.0
    absorption: float = 0.0
    lambda_s: float = 0.0

    @property
    def solar(self):
        return self.transparency + self.absorption

    @property
    def total(self):
        if self.lambda_s == 0:
            return self.color
        return self.color + self.lambda_s * self.solar

    def __add__(self, other):
        return LossBreakdown(self.color + other.color, self.transparency + other.transparency,
                             self.absorption + other.absorption, self.lambda_s)


def snerf_loss(pred, gt, solar_T, solar_w, solar_s, lambda_s, n_solar=None):
    """Color loss plus ``lambda_s`` times the solar terms averaged over solar rays.

    ``solar_*`` are (R_s, N) arrays sampled along the solar rays. ``n_solar``
    is the normalizer (defaults to R_s; pass the full solar batch size when
    evaluating a chunk). Returns ``(LossBreakdown, g_pred, g_T, g_w, g_s)``.
    """
    color, g_pred = nerf_loss(pred, gt)
    if n_solar is None:
        n_solar = solar_T.shape[0]
    tr, ab, gT, gw, gs = solar_terms(solar_T, solar_w, solar_s)
    k = lambda_s / n_solar
    out = LossBreakdown(color, float(np.sum(tr)) / n_solar, float(np.sum(ab)) / n_solar, lambda_s)
    return out, g_pred, k * gT, k * gw, k * gs
