import numpy as np
import pytest
from scipy import ndimage

from surfnerf.augment import (AugmentSpec, augment_manifest, gaussian_blur, gaussian_kernel,
                              zoom_and_crop)
from surfnerf.geometry import generate_rays
from surfnerf.scene_io import ImageEntry, load_manifest
from surfnerf.synth import SynthSpec, view_entries


def _entry(w=4, h=4, fx=1000.0, cx=None, cy=None):
    return ImageEntry("a.png", w, h, fx, fx, w / 2 if cx is None else cx,
                      h / 2 if cy is None else cy, np.eye(4), 0.0, 45.0)


def test_zoom_one_is_identity(rng):
    pix = rng.random((6, 8, 3))
    e = _entry(8, 6, 300.0, 3.7, 2.2)
    out, new = zoom_and_crop(e, pix, AugmentSpec(1.0))
    np.testing.assert_array_equal(out, pix)
    assert (new.fx, new.fy, new.cx, new.cy) == (e.fx, e.fy, e.cx, e.cy)
    assert new.width == 8 and new.height == 6


def test_zoom_scales_focal_length():
    _, new = zoom_and_crop(_entry(), np.zeros((4, 4, 3)), AugmentSpec(2.0))
    assert new.fx == 2000.0 and new.fy == 2000.0
    assert new.augmented and new.split == "train"
    np.testing.assert_array_equal(new.camera_to_world, np.eye(4))


def test_checkerboard_against_map_coordinates():
    board = (np.indices((4, 4)).sum(0) % 2).astype(float)
    pix = np.repeat(board[..., None], 3, axis=2)
    out, _ = zoom_and_crop(_entry(), pix, AugmentSpec(2.0, 4, 4))
    # reference: output pixel center maps to source index 2 + (i + .5 - 2) / 2 - .5
    i = np.arange(4)
    src = 2 + (i + 0.5 - 2) / 2 - 0.5
    yy, xx = np.meshgrid(src, src, indexing="ij")
    ref = ndimage.map_coordinates(board, [yy, xx], order=1, mode="nearest")
    np.testing.assert_allclose(out[..., 0], ref, atol=1e-12)
    # all samples come from the center 2x2 block
    assert src.min() >= 0.75 and src.max() <= 2.25


def test_crop_errors():
    with pytest.raises(ValueError):
        AugmentSpec(0.5)
    with pytest.raises(ValueError, match="larger"):
        zoom_and_crop(_entry(), np.zeros((4, 4, 3)), AugmentSpec(2.0, 8, 4))
    with pytest.raises(ValueError):
        AugmentSpec(2.0, blur_sigma=-1)


def test_augmented_rays_match_source_rays():
    e = view_entries(SynthSpec(n_views=5))[3]
    spec = AugmentSpec(2.5, 40, 30)
    _, new = zoom_and_crop(e, np.zeros((e.height, e.width, 3)), spec)
    u, v = np.meshgrid(np.arange(40), np.arange(30))
    u, v = u.ravel(), v.ravel()
    o2, d2 = generate_rays(new, u, v)
    # continuous source pixel of each output center, back to integer-corner convention
    su = e.width / 2 + (u + 0.5 - 20) / 2.5 - 0.5
    sv = e.height / 2 + (v + 0.5 - 15) / 2.5 - 0.5
    o1, d1 = generate_rays(e, su, sv)
    np.testing.assert_allclose(d2, d1, atol=1e-6)
    np.testing.assert_allclose(o2, o1, atol=1e-9)


def test_blur_zero_is_identity(rng):
    img = rng.random((5, 7, 3))
    np.testing.assert_array_equal(gaussian_blur(img, 0), img)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.3])
def test_blur_keeps_constant(sigma):
    img = np.full((9, 11, 3), 0.37)
    out = gaussian_blur(img, sigma)
    np.testing.assert_allclose(out, 0.37, atol=1e-12)
    assert abs(out.mean() - img.mean()) <= 1e-6


def test_blur_impulse():
    img = np.zeros((21, 21))
    img[10, 10] = 1.0
    out = gaussian_blur(img, 1.0)
    x = np.arange(-3, 4)
    g = np.exp(-x ** 2 / 2)
    g /= g.sum()
    assert out[10, 10] == pytest.approx(g[3] ** 2, abs=1e-12)
    np.testing.assert_allclose(out[7:14, 7:14], np.outer(g, g), atol=1e-12)
    assert abs(out.sum() - 1) <= 1e-6
    assert gaussian_kernel(1.0).size == 7


def test_blur_reflects_at_border():
    # "reflect" mirrors about the edge sample without repeating it
    img = np.zeros((5, 9))
    img[:, 0] = 1.0
    out = gaussian_blur(img, 1.0)
    k = gaussian_kernel(1.0)
    np.testing.assert_allclose(out[2, :4], k[3:], atol=1e-12)
    np.testing.assert_allclose(out[0], out[4], atol=1e-12)


def test_augment_manifest(synth_dir, tmp_path):
    m = load_manifest(synth_dir / "scene.json")
    out = augment_manifest(m, tmp_path, zoom=2.0, count=2)
    aug = [e for e in out.images if e.augmented]
    assert len(aug) == 2 * len(m.train)
    assert sorted({e.fx / m.images[0].fx for e in aug}) == [1.5, 2.0]
    again = load_manifest(tmp_path / "scene.json")
    assert again.images == out.images
