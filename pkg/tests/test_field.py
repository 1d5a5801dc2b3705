import itertools

import numpy as np
import pytest

from surfnerf import field as fnet
from surfnerf.synth import fd_gradient, grad_rel_error

TINY = dict(depth=2, width=8, skip=1, color_width=8, sun_depth=1, sun_width=8, sky_width=8,
            L_pos=2, L_dir=1)


def _inputs(arch, R=3, N=4, seed=0, dtype=np.float64):
    r = np.random.default_rng(seed)
    x = r.uniform(-1, 1, (R, N, arch.pos_dim)).astype(dtype)
    d = r.uniform(-1, 1, (R, arch.dir_dim)).astype(dtype)
    s = r.uniform(-1, 1, (R, arch.dir_dim)).astype(dtype)
    return x, d, s


def _jiggle(params, seed=1, scale=0.3):
    params.flat += np.random.default_rng(seed).normal(0, scale, params.flat.size)
    return params


def test_init_deterministic_and_zero_bias():
    arch = fnet.ArchConfig(kind="snerf")
    a = fnet.init_params(arch, 5)
    b = fnet.init_params(arch, 5)
    assert a.flat.tobytes() == b.flat.tobytes()
    assert not np.array_equal(a.flat, fnet.init_params(arch, 6).flat)
    for name in a.names():
        W, bias = a[name]
        assert np.all(bias == 0)
        lim = np.sqrt(6 / sum(W.shape))
        assert np.abs(W).max() <= lim


def test_init_weight_mean():
    arch = fnet.ArchConfig(depth=8, width=400, skip=4)
    p = fnet.init_params(arch, 0, np.float64)
    ws, var = [], 0.0
    for name, o, i in arch.layers():
        W, _ = p[name]
        ws.append(W.ravel())
        var += W.size * (6 / (i + o)) / 3
    w = np.concatenate(ws)
    assert w.size >= 1_000_000
    se = np.sqrt(var) / w.size
    assert abs(w.mean()) <= 3 * se


def test_layer_shapes_default():
    arch = fnet.ArchConfig()
    shapes = {n: (o, i) for n, o, i in arch.layers()}
    assert shapes["trunk0"] == (256, 63)
    assert shapes["trunk4"] == (256, 256 + 63)
    assert shapes["color_hidden"] == (128, 256 + 27)
    assert shapes["color_out"] == (3, 128)
    s = {n: (o, i) for n, o, i in fnet.ArchConfig(kind="snerf").layers()}
    assert s["sun0"] == (50, 256 + 27 + 27)
    assert s["sun2"] == (50, 50) and s["sun_out"] == (1, 50)
    assert s["sky_hidden"] == (50, 27) and s["sky_out"] == (3, 50)
    assert s["albedo_hidden"] == (128, 256)


def test_zero_params_nerf():
    arch = fnet.ArchConfig(**TINY)
    p = fnet.ParameterSet(arch, dtype=np.float64)
    x, d, _ = _inputs(arch)
    out = fnet.forward_nerf(p, x, d)
    np.testing.assert_allclose(out.sigma, np.log(2), rtol=1e-15)
    np.testing.assert_array_equal(out.color, 0.5)


def test_zero_params_snerf():
    arch = fnet.ArchConfig(kind="snerf", **TINY)
    p = fnet.ParameterSet(arch, dtype=np.float64)
    out = fnet.forward_snerf(p, *_inputs(arch))
    np.testing.assert_array_equal(out.albedo, 0.5)
    np.testing.assert_array_equal(out.sun, 0.5)
    np.testing.assert_array_equal(out.sky, 0.5)


def test_output_ranges():
    for kind in fnet.KINDS:
        arch = fnet.ArchConfig(kind=kind, **TINY)
        p = _jiggle(fnet.init_params(arch, 0, np.float64), scale=3.0)
        out = fnet.forward(p, *_inputs(arch, R=100, N=100, seed=3))
        assert out.sigma.size == 10_000
        assert np.all(out.sigma >= 0)
        assert np.all((out.color >= 0) & (out.color <= 1))
        if kind == "snerf":
            assert np.all((out.sun >= 0) & (out.sun <= 1))
            assert np.all((out.sky >= 0) & (out.sky <= 1))


def test_sky_depends_on_sun_only():
    arch = fnet.ArchConfig(kind="snerf", **TINY)
    p = _jiggle(fnet.init_params(arch, 0, np.float64))
    x, d, s = _inputs(arch, R=2)
    s[1] = s[0]
    out = fnet.forward(p, x, d, s)
    assert out.sky.shape == (2, 3)
    np.testing.assert_array_equal(out.sky[0], out.sky[1])
    x2, d2, _ = _inputs(arch, R=2, seed=9)
    np.testing.assert_array_equal(fnet.forward(p, x2, d2, s).sky, out.sky)


def test_dimension_mismatch():
    arch = fnet.ArchConfig(**TINY)
    p = fnet.init_params(arch)
    x, d, _ = _inputs(arch)
    with pytest.raises(ValueError):
        fnet.forward(p, x[..., :-1], d)
    with pytest.raises(ValueError):
        fnet.forward(p, x, None)
    with pytest.raises(ValueError):
        fnet.forward_snerf(p, x, d, d)


def test_forward_is_pure():
    arch = fnet.ArchConfig(kind="snerf", **TINY)
    p = _jiggle(fnet.init_params(arch, 0, np.float64))
    before = p.flat.copy()
    ins = _inputs(arch)
    a = fnet.forward(p, *ins)
    b = fnet.forward(p, *ins)
    assert np.array_equal(a.sigma, b.sigma) and np.array_equal(a.sun, b.sun)
    assert np.array_equal(p.flat, before)


def test_trunk_weight_jacobian_h1e3():
    arch = fnet.ArchConfig(depth=4, width=16, skip=2, color_width=8, L_pos=3, L_dir=2)
    p = _jiggle(fnet.init_params(arch, 2, np.float64), scale=0.05)
    x, d, _ = _inputs(arch, R=1, N=1, seed=4)
    W, _ = p["trunk1"]
    i, j = 3, 5
    out = fnet.forward(p, x, d)
    g = fnet.backward(p, out, g_sigma=np.ones((1, 1)))
    analytic = g["trunk1"][0][i, j]

    def sig(wij):
        W[i, j] = wij
        return fnet.forward(p, x, d).sigma[0, 0]

    w0 = W[i, j]
    num = fd_gradient(lambda t: sig(t[0]), [w0], h=1e-3)[0]
    W[i, j] = w0
    assert abs(analytic - num) <= 1e-6 * abs(num)


def _loss_and_grad(p, ins, cots):
    out = fnet.forward(p, *ins)
    val = np.sum(out.sigma * cots["sigma"]) + np.sum(out.color * cots["color"])
    if p.arch.kind == "snerf":
        val = val + np.sum(out.sun * cots["sun"]) + np.sum(out.sky * cots["sky"])
    return val, out


def _cotangents(arch, R, N, dtype, seed=5):
    r = np.random.default_rng(seed)
    return {"sigma": r.normal(size=(R, N)).astype(dtype),
            "color": r.normal(size=(R, N, 3)).astype(dtype),
            "sun": r.normal(size=(R, N)).astype(dtype),
            "sky": r.normal(size=(R, 3)).astype(dtype)}


def _grad(p, out, cots):
    snerf = p.arch.kind == "snerf"
    return fnet.backward(p, out, g_sigma=cots["sigma"], g_color=cots["color"],
                         g_sun=cots["sun"] if snerf else None,
                         g_sky=cots["sky"] if snerf else None)


COMBOS = [dict(kind=k, use_viewdirs=v, sun_head_uses_viewdirs=s, albedo_uses_viewdirs=a)
          for k, v, s, a in itertools.product(fnet.KINDS, (True, False), (True, False),
                                              (False, True))
          if k == "snerf" or (s and not a)]


@pytest.mark.parametrize("flags", COMBOS, ids=lambda f: "-".join(f"{k}={v}" for k, v in f.items()))
def test_gradient_check_64bit(flags):
    arch = fnet.ArchConfig(**{**TINY, **flags})
    p = _jiggle(fnet.init_params(arch, 0, np.float64))
    R, N = 3, 4
    ins = _inputs(arch, R, N)
    cots = _cotangents(arch, R, N, np.float64)
    _, out = _loss_and_grad(p, ins, cots)
    g = _grad(p, out, cots)

    def f(theta):
        q = fnet.ParameterSet(arch, theta)
        ins_ = tuple(a.astype(theta.dtype) for a in ins)
        cots_ = {k: v.astype(theta.dtype) for k, v in cots.items()}
        return _loss_and_grad(q, ins_, cots_)[0]

    num = fd_gradient(f, p.flat, h=1e-5, dtype=np.longdouble)
    assert grad_rel_error(g.flat, num).max() <= 1e-6


def test_gradient_check_32bit():
    arch = fnet.ArchConfig(kind="snerf", **TINY)
    p64 = _jiggle(fnet.init_params(arch, 0, np.float64))
    R, N = 3, 4
    ins = _inputs(arch, R, N)
    cots = _cotangents(arch, R, N, np.float64)
    p32 = p64.astype(np.float32)
    out = fnet.forward(p32, *[a.astype(np.float32) for a in ins])
    g = _grad(p32, out, {k: v.astype(np.float32) for k, v in cots.items()})
    assert g.flat.dtype == np.float32

    def f(theta):
        return _loss_and_grad(fnet.ParameterSet(arch, theta), ins, cots)[0]

    num = fd_gradient(f, p32.flat.astype(np.float64), h=1e-5)
    assert grad_rel_error(g.flat, num, floor=1e-3).max() <= 1e-3


def test_zero_cotangents_zero_gradients():
    arch = fnet.ArchConfig(kind="snerf", **TINY)
    p = _jiggle(fnet.init_params(arch, 0, np.float64))
    out = fnet.forward(p, *_inputs(arch))
    z = _cotangents(arch, 3, 4, np.float64)
    z = {k: np.zeros_like(v) for k, v in z.items()}
    assert np.all(_grad(p, out, z).flat == 0)
    assert np.all(fnet.backward(p, out).flat == 0)


def test_batch_gradient_is_sum():
    arch = fnet.ArchConfig(kind="snerf", **TINY)
    p = _jiggle(fnet.init_params(arch, 0, np.float64))
    ins = _inputs(arch, R=2, N=1)
    cots = _cotangents(arch, 2, 1, np.float64)
    _, out = _loss_and_grad(p, ins, cots)
    both = _grad(p, out, cots)
    parts = p.zeros_like()
    for r in range(2):
        one = tuple(a[r:r + 1] for a in ins)
        c1 = {k: v[r:r + 1] for k, v in cots.items()}
        _, o1 = _loss_and_grad(p, one, c1)
        parts.flat += _grad(p, o1, c1).flat
    np.testing.assert_allclose(both.flat, parts.flat, rtol=1e-12, atol=1e-14)


def test_backward_rejects_foreign_cache():
    a1 = fnet.ArchConfig(**TINY)
    a2 = fnet.ArchConfig(**{**TINY, "L_pos": 3})
    p1 = fnet.init_params(a1)
    out = fnet.forward(p1, *_inputs(a1, dtype=np.float32)[:2])
    with pytest.raises(ValueError):
        fnet.backward(fnet.init_params(a2), out, g_sigma=np.ones((3, 4)))


def test_snerf_like_nerf_renders_the_same():
    flags = dict(TINY, use_viewdirs=True)
    na = fnet.ArchConfig(**flags)
    sa = fnet.ArchConfig(kind="snerf", albedo_uses_viewdirs=True, **flags)
    pn = _jiggle(fnet.init_params(na, 0, np.float64))
    ps = fnet.snerf_like_nerf(pn, sa)
    x, d, s = _inputs(sa)
    on = fnet.forward(pn, x, d)
    os_ = fnet.forward(ps, x, d, s)
    assert np.array_equal(on.sigma, os_.sigma)
    assert np.array_equal(on.color, os_.albedo)
    assert np.all(os_.sun == 1.0)
