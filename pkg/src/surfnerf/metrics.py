"""Image and altitude quality metrics."""
from dataclasses import dataclass, field, asdict

import numpy as np

from .augment import gaussian_kernel

PSNR_INF = float("inf")


def psnr(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mse = np.mean((pred - gt) ** 2)
    if mse == 0:
        return PSNR_INF
    return float(10 * np.log10(1.0 / mse))


def _gray(img):
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def _filter_valid(img, k):
    """Separable 'valid' correlation with the 1-D kernel ``k``."""
    n = k.size
    rows = sum(k[i] * img[:, i:img.shape[1] - n + 1 + i] for i in range(n))
    return sum(k[i] * rows[i:rows.shape[0] - n + 1 + i, :] for i in range(n))


def ssim(pred, gt, win=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM of the channel-mean grayscale images over all full windows."""
    x = _gray(pred)
    y = _gray(gt)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < win:
        raise ValueError(f"image smaller than the {win}x{win} SSIM window")
    k = gaussian_kernel(sigma, win // 2)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mx, my = _filter_valid(x, k), _filter_valid(y, k)
    sxx = _filter_valid(x * x, k) - mx * mx
    syy = _filter_valid(y * y, k) - my * my
    sxy = _filter_valid(x * y, k) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(s.mean())


def altitude_mae(pred, dsm, empty=None):
    """Mean |pred - dsm| over cells with DSM data and a non-empty ray.

    ``pred`` is an altitude array registered cell-for-cell to ``dsm``
    (shape ``(nrows, ncols)``). Returns ``(mae, n_used, n_excluded)``.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(dsm.nrows, dsm.ncols)
    ok = dsm.valid.copy()
    if empty is not None:
        ok &= ~np.asarray(empty).reshape(ok.shape)
    n = int(ok.sum())
    if n == 0:
        raise ValueError("no overlapping valid DSM cells")
    err = np.abs(pred[ok] - dsm.values[ok].astype(np.float64))
    return float(np.mean(err)), n, int(ok.size - n)


@dataclass
class EvalReport:
    psnr: dict = field(default_factory=dict)
    ssim: dict = field(default_factory=dict)
    depth_mae: float = None
    dsm_cells_used: int = 0
    dsm_cells_excluded: int = 0
    files: dict = field(default_factory=dict)

    def to_json(self):
        d = asdict(self)
        # JSON has no infinity; identical images report the string "inf"
        d["psnr"] = {k: ("inf" if v == PSNR_INF else v) for k, v in self.psnr.items()}
        return d
