import json

import numpy as np
import pytest

from surfnerf.augment import gaussian_kernel
from surfnerf.metrics import EvalReport, altitude_mae, psnr, ssim
from surfnerf.scene_io import DsmGrid
from surfnerf.synth import SynthSpec, dsm_grid, first_hit


def test_psnr_identical_is_inf():
    img = np.random.default_rng(0).random((8, 8, 3))
    assert psnr(img, img) == float("inf")


def test_psnr_known_values():
    a = np.zeros((4, 4, 3))
    assert psnr(a + 0.1, a) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a + 1.0, a) == pytest.approx(0.0, abs=1e-12)


def test_psnr_drops_with_noise(rng):
    gt = rng.random((32, 32, 3))
    vals = [psnr(gt + s * rng.normal(size=gt.shape), gt) for s in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


def _ssim_loop(x, y, win=11, sigma=1.5, c1=1e-4, c2=9e-4):
    # plain per-window evaluation
    k = gaussian_kernel(sigma, win // 2)
    w = np.outer(k, k)
    out = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            a, b = x[i:i + win, j:j + win], y[i:i + win, j:j + win]
            ma, mb = (w * a).sum(), (w * b).sum()
            va = (w * (a - ma) ** 2).sum()
            vb = (w * (b - mb) ** 2).sum()
            cov = (w * (a - ma) * (b - mb)).sum()
            out.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return np.mean(out)


def test_ssim_identical():
    img = np.random.default_rng(1).random((20, 20, 3))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_matches_loop_reference(rng):
    x = rng.random((64, 64))
    y = np.clip(x + 0.1 * rng.normal(size=x.shape), 0, 1)
    assert abs(ssim(x, y) - _ssim_loop(x, y)) <= 1e-6


def test_ssim_inverted_pattern():
    yy, xx = np.mgrid[:24, :24]
    checker = ((xx // 3 + yy // 3) % 2).astype(float)
    val = ssim(checker, 1 - checker)
    assert val < 0
    assert val == pytest.approx(_ssim_loop(checker, 1 - checker), abs=1e-9)


def test_ssim_uses_channel_mean(rng):
    x = rng.random((16, 16, 3))
    y = rng.random((16, 16, 3))
    assert ssim(x, y) == pytest.approx(ssim(x.mean(-1), y.mean(-1)), abs=1e-15)


def test_ssim_rejects_small_image():
    with pytest.raises(ValueError, match="smaller"):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def _grid(vals, nodata=-9999.0):
    vals = np.asarray(vals, np.float32)
    return DsmGrid(vals.shape[1], vals.shape[0], 1.0, 0.0, 0.0, vals, nodata)


def test_mae_zero_and_bias(rng):
    g = _grid(rng.uniform(0, 20, (10, 12)))
    assert altitude_mae(g.values, g)[0] == 0
    mae, used, excluded = altitude_mae(g.values.astype(np.float64) + 1, g)
    assert mae == pytest.approx(1.0, abs=1e-5)
    assert (used, excluded) == (120, 0)


def test_mae_excludes_nodata_and_empty():
    vals = np.array([[1.0, -9999.0], [3.0, 4.0]])
    g = _grid(vals)
    pred = np.array([[2.0, 0.0], [3.0, 100.0]])
    empty = np.array([[False, False], [False, True]])
    mae, used, excluded = altitude_mae(pred, g, empty)
    assert mae == pytest.approx(0.5)
    assert (used, excluded) == (2, 2)


def test_mae_permutation_invariant(rng):
    vals = rng.uniform(0, 5, (6, 6))
    pred = vals + rng.normal(size=vals.shape)
    perm = rng.permutation(36)
    a = altitude_mae(pred, _grid(vals))[0]
    b = altitude_mae(pred.ravel()[perm].reshape(6, 6), _grid(vals.ravel()[perm].reshape(6, 6)))[0]
    assert a == pytest.approx(b, rel=1e-12)


def test_mae_no_valid_cells():
    g = _grid(np.full((2, 2), -9999.0))
    with pytest.raises(ValueError, match="no overlapping"):
        altitude_mae(np.zeros((2, 2)), g)


def test_mae_synth_top_down_oracle():
    spec = SynthSpec()
    g = dsm_grid(spec)
    x, y = g.cell_centers()
    o = np.stack([x.ravel(), y.ravel(), np.full(x.size, 100.0)], -1)
    d = np.broadcast_to([0.0, 0.0, -1.0], o.shape)
    t, _ = first_hit(spec, o, d)
    alt = (o[:, 2] - t).reshape(g.nrows, g.ncols)
    assert altitude_mae(alt, g)[0] == 0


def test_report_json_inf():
    r = EvalReport(psnr={"a.png": float("inf"), "b.png": 21.5})
    d = r.to_json()
    assert d["psnr"]["a.png"] == "inf"
    json.dumps(d, allow_nan=False)
