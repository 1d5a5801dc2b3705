import json

import numpy as np
import pytest

from surfnerf.geometry import sun_vector
from surfnerf.scene_io import load_dsm, load_manifest, read_png
from surfnerf.synth import (Box, SynthSpec, albedo_of, analytic_radiance, analytic_transmittance,
                            dsm_grid, fd_gradient, first_hit, ray_box, render_view, shade,
                            sun_visibility, view_entries)


def _nadir(xy, z=100.0):
    xy = np.atleast_2d(np.asarray(xy, float))
    o = np.column_stack([xy, np.full(len(xy), z)])
    return o, np.broadcast_to([0.0, 0.0, -1.0], o.shape).copy()


def test_empty_scene_is_flat_albedo():
    spec = SynthSpec(boxes=[])
    e = view_entries(spec)[0]
    r = render_view(spec, e)
    hit = r["label"] == 0
    assert hit.all()
    np.testing.assert_allclose(r["image"][hit], np.broadcast_to(spec.ground_albedo, (hit.sum(), 3)))
    assert np.all(r["sun"] == 1)
    g = dsm_grid(spec)
    assert np.all(g.values == spec.ground_alt)


def test_shadow_band_45_degrees():
    # 10 m box, sun due east at 45 degrees: the shadow reaches 10 m west of the box
    spec = SynthSpec(boxes=[Box((0.0, -5.0, 0.0), (4.0, 5.0, 10.0), (0.5, 0.5, 0.5))])
    sun = sun_vector(90.0, 45.0)
    x = np.arange(-14.75, 0.0, 0.5)
    pts = np.column_stack([x, np.zeros_like(x), np.zeros_like(x)])
    lit = sun_visibility(spec, pts, sun)
    np.testing.assert_array_equal(lit, (x < -10).astype(float))
    # nothing shadowed on the sunny side
    east = np.column_stack([np.arange(4.5, 20, 1.0), np.zeros(16), np.zeros(16)])
    assert np.all(sun_visibility(spec, east, sun) == 1)


def test_box_dsm():
    spec = SynthSpec(boxes=[Box((-2.0, -3.0, 0.0), (2.0, 1.0, 7.5), (0.2, 0.2, 0.2))])
    g = dsm_grid(spec)
    x, y = g.cell_centers()
    inside = (np.abs(x) < 2) & (y > -3) & (y < 1)
    assert inside.sum() == 16
    assert np.all(g.values[inside] == 7.5)
    assert np.all(g.values[~inside] == 0)


def test_first_hit_labels():
    spec = SynthSpec()
    o, d = _nadir([[-20.0, -15.0], [15.0, 14.0], [40.0, 40.0]])
    t, label = first_hit(spec, o, d)
    np.testing.assert_array_equal(label, [1, 2, 0])
    np.testing.assert_allclose(100 - t, [10.0, 20.0, 0.0])
    up = first_hit(spec, o, -d)[1]
    assert np.all(up == -1)


def test_ray_box_parallel_rays():
    b = Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (0, 0, 0))
    o = np.array([[0.5, 0.5, 5.0], [3.0, 0.5, 5.0]])
    d = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, -1.0]])
    t0, t1 = ray_box(o, d, b)
    assert (t0[0], t1[0]) == (4.0, 5.0)
    assert t0[1] > t1[1]


def test_transmittance_oracle():
    spec = SynthSpec(boxes=[Box((0.0, -1.0, 0.0), (2.0, 1.0, 2.0), (1.0, 0.0, 0.0))],
                     sigma_box=np.log(2))
    o, d = np.array([-5.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])
    assert analytic_transmittance(spec, o, d, 0.0, 20.0) == pytest.approx(0.25)
    ts = np.linspace(0, 20, 81)
    T = analytic_transmittance(spec, o, d, 0.0, ts)
    assert np.all(np.diff(T) <= 0)
    miss = np.array([-5.0, 0.0, 5.0])
    assert analytic_transmittance(spec, miss, d, 0.0, 20.0) == 1.0
    np.testing.assert_allclose(analytic_radiance(spec, o, d, 0.0, 20.0), [0.75, 0, 0])


def test_image_is_albedo_times_irradiance():
    spec = SynthSpec()
    for e in view_entries(spec)[:4]:
        r = render_view(spec, e)
        s = r["sun"][..., None]
        light = s + (1 - s) * np.asarray(spec.sky)
        np.testing.assert_allclose(r["image"], albedo_of(spec, r["label"]) * light, atol=1e-15)
        assert set(np.unique(r["sun"])) <= {0.0, 1.0}


def test_scene_has_shadows_in_every_view():
    spec = SynthSpec()
    for e in view_entries(spec):
        r = render_view(spec, e)
        ground = r["label"] == 0
        frac = 1 - r["sun"][ground].mean()
        assert 0.005 < frac < 0.2


def test_written_scene(synth_dir, manifest):
    spec = SynthSpec.from_json(synth_dir / "synth_spec.json")
    assert json.loads((synth_dir / "synth_spec.json").read_text())["suns"]
    assert len(manifest.train) == 9 and len(manifest.test) == 2
    e = manifest.images[3]
    r = render_view(spec, e)
    img = read_png(e.path)
    assert np.abs(img - r["image"]).max() <= 0.5 / 255 + 1e-12
    mask = read_png(synth_dir / e.file.replace("img_", "sun_"))
    np.testing.assert_array_equal(mask.reshape(64, 64, -1)[..., 0], r["sun"])
    g = load_dsm(synth_dir / "dsm.dsm")
    np.testing.assert_array_equal(g.values, dsm_grid(spec).values)
    assert load_manifest(synth_dir / "scene.json") == manifest


def test_fd_gradient_basics():
    assert fd_gradient(lambda t: t[0] ** 2, [3.0])[0] == pytest.approx(6.0, rel=1e-9)
    assert np.all(fd_gradient(lambda t: 4.2, np.ones(5)) == 0)
    f = lambda t: np.sin(t[0]) * t[1] ** 3
    th = np.array([0.3, 1.2])
    exact = [np.cos(0.3) * 1.2 ** 3, 3 * np.sin(0.3) * 1.2 ** 2]
    c = fd_gradient(f, th, 1e-5)
    fw = fd_gradient(f, th, 1e-7, stencil="forward")
    np.testing.assert_allclose(c, exact, rtol=1e-9)
    np.testing.assert_allclose(fw, exact, rtol=1e-6)
    with pytest.raises(ValueError):
        fd_gradient(f, th, stencil="sideways")


def test_shadow_independent_of_camera(rng):
    spec = SynthSpec()
    sun = sun_vector(*spec.suns[0])
    pts = np.column_stack([rng.uniform(-50, 50, (400, 2)), np.zeros(400)])
    vis = []
    for eye in ([0.0, 0.0, 500.0], [150.0, -80.0, 450.0]):
        o = np.broadcast_to(eye, pts.shape)
        d = (pts - o) / np.linalg.norm(pts - o, axis=1, keepdims=True)
        _, s, label, _ = shade(spec, o, d, sun)
        vis.append(np.where(label == 0, s, np.nan))
    both = ~np.isnan(vis[0]) & ~np.isnan(vis[1])
    assert both.sum() > 300
    np.testing.assert_array_equal(vis[0][both], vis[1][both])
    assert 0 < np.mean(vis[0][both] == 0)
