"""Training loop, ray batching and view rendering."""
import csv
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import field as fnet
from .encoding import encode
from .geometry import (clip_to_altitude, generate_rays, hierarchical_samples, make_rng,
                       merge_samples, nadir_rays, pixel_grid, points_along, spacings,
                       stratified_samples)
from .optim import AdamState, adam_step
from .render import (LossBreakdown, alpha_from_sigma, composite, composite_backward,
                     expected_altitude, irradiance, irradiance_backward, solar_terms)
from .scene_io import load_image, save_checkpoint

log = logging.getLogger(__name__)

BATCHING = ("all_random", "per_image")
SOLAR_MODES = ("dedicated", "batch")
METRICS_COLUMNS = ("iter", "total_loss", "color_loss", "solar_terms", "lr", "psnr_train_sample")

# RNG streams per iteration
_S_BATCH, _S_COARSE, _S_FINE, _S_SOLAR = range(4)


@dataclass
class TrainConfig:
    model: str = "nerf"
    iterations: int = 100_000
    batch_size: int = 4096
    n_coarse: int = 64
    n_fine: int = 128
    batching: str = "all_random"
    use_viewdirs: bool = True
    L_pos: int = 10
    L_dir: int = 4
    include_identity: bool = True
    lambda_s: float = 0.05
    solar_rays: str = "dedicated"
    solar_batch: int = 1024
    seed: int = 0
    eval_interval: int = 0
    checkpoint_interval: int = 0
    include_augmented: bool = True
    depth: int = 8
    width: int = 256
    skip: int = 4
    color_width: int = 128
    sun_depth: int = 3
    sun_width: int = 50
    sky_width: int = 50
    sun_head_uses_viewdirs: bool = True
    albedo_uses_viewdirs: bool = False
    lr: float = 5e-4
    decay_rate: float = 0.1
    decay_steps: int = None            # None: the run length
    clip_norm: float = None
    jitter: bool = True
    fine_jitter: bool = True
    chunk: int = 1024
    precision: str = "float32"

    def __post_init__(self):
        for k in ("iterations", "batch_size", "solar_batch", "chunk"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be positive")
        if self.n_coarse < 2:
            raise ValueError("n_coarse must be >= 2")
        if self.n_fine < 0:
            raise ValueError("n_fine must be >= 0")
        if self.batching not in BATCHING:
            raise ValueError(f"batching must be one of {BATCHING}")
        if self.solar_rays not in SOLAR_MODES:
            raise ValueError(f"solar_rays must be one of {SOLAR_MODES}")
        if self.model not in fnet.KINDS:
            raise ValueError(f"model must be one of {fnet.KINDS}")
        if self.lambda_s < 0:
            raise ValueError("lambda_s must be >= 0")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    @property
    def arch(self):
        return fnet.ArchConfig(
            kind=self.model, depth=self.depth, width=self.width, skip=self.skip,
            color_width=self.color_width, use_viewdirs=self.use_viewdirs,
            sun_depth=self.sun_depth, sun_width=self.sun_width, sky_width=self.sky_width,
            sun_head_uses_viewdirs=self.sun_head_uses_viewdirs,
            albedo_uses_viewdirs=self.albedo_uses_viewdirs,
            L_pos=self.L_pos, L_dir=self.L_dir, include_identity=self.include_identity)

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# --- scene data -----------------------------------------------------------------

@dataclass
class Bounds:
    """Affine map of scene points to the [-1, 1] cube seen by the encoder."""
    center: np.ndarray
    half: np.ndarray

    def normalize(self, p):
        return (p - self.center) / self.half

    @property
    def unit(self):
        """Length that counts as 1 when densities are integrated: half the
        vertical extent, so the altitude range spans two units."""
        return float(self.half[2])

    def to_json(self):
        return {"center": self.center.tolist(), "half": self.half.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.asarray(d["center"], float), np.asarray(d["half"], float))


@dataclass
class RaySet:
    origins: np.ndarray
    dirs: np.ndarray
    t_near: np.ndarray
    t_far: np.ndarray
    suns: np.ndarray
    colors: np.ndarray = None
    image: np.ndarray = None

    def __len__(self):
        return len(self.origins)

    def take(self, idx):
        g = lambda a: None if a is None else a[idx]
        return RaySet(g(self.origins), g(self.dirs), g(self.t_near), g(self.t_far), g(self.suns),
                      g(self.colors), g(self.image))


def entry_rays(entry, z_bounds, with_colors=True):
    u, v = pixel_grid(entry.width, entry.height)
    o, d = generate_rays(entry, u, v)
    tn, tf = clip_to_altitude(o, d, *z_bounds)
    colors = load_image(entry).reshape(-1, 3) if with_colors else None
    suns = np.broadcast_to(entry.sun_direction, o.shape).copy()
    return RaySet(o, d, tn, tf, suns, colors)


def scene_bounds(raysets, z_bounds, margin=0.02):
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for rs in raysets:
        for t in (rs.t_near, rs.t_far):
            p = rs.origins + t[:, None] * rs.dirs
            lo = np.minimum(lo, p.min(axis=0))
            hi = np.maximum(hi, p.max(axis=0))
    lo[2], hi[2] = z_bounds
    center = (lo + hi) / 2
    half = (hi - lo) / 2 * (1 + margin)
    return Bounds(center, half)


class Dataset:
    """All training rays of a scene plus what is needed to place samples."""

    def __init__(self, manifest, include_augmented=True):
        self.manifest = manifest
        self.z_bounds = manifest.z_bounds
        self.entries = [e for e in manifest.train if include_augmented or not e.augmented]
        if not self.entries:
            raise ValueError("dataset has no training images")
        sets = [entry_rays(e, self.z_bounds) for e in self.entries]
        self.offsets = np.cumsum([0] + [len(s) for s in sets])
        self.rays = RaySet(*(np.concatenate([getattr(s, k) for s in sets])
                             for k in ("origins", "dirs", "t_near", "t_far", "suns", "colors")),
                           image=np.repeat(np.arange(len(sets)), [len(s) for s in sets]))
        self.bounds = scene_bounds(sets, self.z_bounds)
        self.top_lo = self.bounds.center[:2] - self.bounds.half[:2]
        self.top_hi = self.bounds.center[:2] + self.bounds.half[:2]
        self.train_suns = np.array([e.sun_direction for e in self.entries])


def assemble_batch(dataset, config, iteration):
    """Ray indices of one batch.

    ``all_random`` draws uniformly over every (train image, pixel) pair;
    ``per_image`` takes the images round-robin and draws pixels within one.
    """
    rng = make_rng(config.seed, iteration, _S_BATCH)
    if config.batching == "all_random":
        return rng.integers(0, len(dataset.rays), config.batch_size)
    k = iteration % len(dataset.entries)
    lo, hi = dataset.offsets[k], dataset.offsets[k + 1]
    return lo + rng.integers(0, hi - lo, config.batch_size)


def solar_batch(dataset, config, iteration):
    """Rays cast from the top of the sampling volume toward the ground along
    the sun directions of the training images."""
    rng = make_rng(config.seed, iteration, _S_SOLAR)
    n = config.solar_batch
    xy = dataset.top_lo + rng.random((n, 2)) * (dataset.top_hi - dataset.top_lo)
    suns = dataset.train_suns[rng.integers(0, len(dataset.train_suns), n)]
    z_lo, z_hi = dataset.z_bounds
    o = np.column_stack([xy, np.full(n, z_hi)])
    d = -suns
    tn, tf = clip_to_altitude(o, d, z_lo, z_hi)
    return RaySet(o, d, tn, tf, suns), rng


# --- per-chunk work -----------------------------------------------------------------

def _encode_inputs(params, bounds, rays, t):
    arch = params.arch
    dt = params.dtype
    pts = bounds.normalize(points_along(rays.origins, rays.dirs, t))
    x_enc = encode(pts.astype(dt), arch.L_pos, arch.include_identity)
    d_enc = encode(rays.dirs.astype(dt), arch.L_dir, arch.include_identity)
    s_enc = encode(rays.suns.astype(dt), arch.L_dir, arch.include_identity)
    return x_enc, d_enc, s_enc


class _Pass:
    """Field evaluation at one sample set along a chunk of rays."""

    def __init__(self, params, bounds, rays, t, with_color=True, with_sun=True):
        self.params = params
        x_enc, d_enc, s_enc = _encode_inputs(params, bounds, rays, t)
        self.out = fnet.forward(params, x_enc, d_enc, s_enc, with_color=with_color, with_sun=with_sun)
        self.snerf = params.arch.kind == "snerf"
        self.rgb = None
        if with_color:
            self.rgb = self.out.color
            if self.snerf:
                self.light = irradiance(self.out.sun, self.out.sky[:, None, :])
                self.rgb = self.out.color * self.light

    def backward(self, grads, g_sigma, g_rgb=None, g_sun=None):
        out = self.out
        g_color = g_sky = None
        if g_rgb is not None:
            if self.snerf:
                g_color = g_rgb * self.light
                gs, gsky = irradiance_backward(out.sun, out.sky[:, None, :], g_rgb * out.color)
                g_sun = gs if g_sun is None else g_sun + gs
                g_sky = gsky.sum(axis=1)
            else:
                g_color = g_rgb
        fnet.backward(self.params, out, g_sigma=g_sigma, g_color=g_color, g_sun=g_sun,
                      g_sky=g_sky, grads=grads)


def _check_finite(per_ray, rays, what):
    ok = np.isfinite(per_ray)
    if ok.all():
        return
    bad = int(np.flatnonzero(~ok)[0])
    raise FloatingPointError(
        f"non-finite {what} on ray {bad}: origin={rays.origins[bad].tolist()} "
        f"dir={rays.dirs[bad].tolist()} t=[{rays.t_near[bad]}, {rays.t_far[bad]}]")


def _render_chunk(params, bounds, rays, cfg, rand=None):
    """Coarse + fine rendering of a chunk of camera rays.

    ``rand`` holds pre-drawn uniforms ``(u_coarse, u_fine)`` for training or
    is ``None`` for deterministic midpoint sampling.
    """
    nc, nf = cfg.n_coarse, cfg.n_fine
    width = (rays.t_far - rays.t_near) / nc
    if rand is None:
        t_c, d_c = stratified_samples(rays.t_near, rays.t_far, nc)
    else:
        u_c = rand[0]
        t_c = rays.t_near[:, None] + (np.arange(nc) + u_c) * width[:, None]
        d_c = spacings(t_c, width)
    d_c = d_c / bounds.unit
    dt = params.dtype
    pc = _Pass(params, bounds, rays, t_c)
    tr_c = composite(pc.rgb, alpha_from_sigma(pc.out.sigma, d_c.astype(dt)))
    res = {"coarse": (pc, tr_c, t_c, d_c)}
    if nf > 0:
        w = tr_c.w.astype(np.float64)
        _check_finite(w.sum(axis=1), rays, "coarse weights")
        if rand is None:
            t_f = hierarchical_samples(rays.t_near, rays.t_far, w, nf, deterministic=True)
        else:
            u_f = rand[1]
            t_f = hierarchical_samples(rays.t_near, rays.t_far, w, nf, u=u_f)
        t_m, d_m, order = merge_samples(t_c, t_f, width)
        d_m = d_m / bounds.unit
        pf = _Pass(params, bounds, rays, t_f)
        sig = np.take_along_axis(np.concatenate([pc.out.sigma, pf.out.sigma], 1), order, 1)
        rgb = np.take_along_axis(np.concatenate([pc.rgb, pf.rgb], 1), order[..., None], 1)
        tr_f = composite(rgb, alpha_from_sigma(sig, d_m.astype(dt)))
        res["fine"] = (pf, tr_f, t_m, d_m, order, rgb)
    return res


def _train_chunk(params, bounds, rays, cfg, rand, solar_in_batch):
    """Loss and gradients of one chunk of camera rays."""
    grads = params.zeros_like()
    res = _render_chunk(params, bounds, rays, cfg, rand)
    pc, tr_c, t_c, d_c = res["coarse"]
    gt = rays.colors.astype(params.dtype)
    dt = params.dtype
    acc = np.promote_types(dt, np.float64)   # loss sums keep extended precision if used
    diff_c = tr_c.color - gt
    per_ray = np.sum(diff_c.astype(acc) ** 2, axis=1)
    g_sig_c, g_rgb_c = composite_backward(tr_c, d_c.astype(dt), pc.rgb, 2 * diff_c)
    final = tr_c.color
    g_sun_c = None
    solar = LossBreakdown(0.0, lambda_s=cfg.lambda_s)
    if solar_in_batch:
        tr_, ab_, gT, gw, gs = solar_terms(tr_c.T, tr_c.w, pc.out.sun)
        k = cfg.lambda_s / cfg.batch_size
        solar = LossBreakdown(0.0, np.sum(tr_, dtype=acc) / cfg.batch_size,
                              np.sum(ab_, dtype=acc) / cfg.batch_size, cfg.lambda_s)
        g2, _ = composite_backward(tr_c, d_c.astype(dt), g_w=k * gw, g_T=k * gT)
        g_sig_c += g2
        g_sun_c = k * gs
    if "fine" in res:
        pf, tr_f, t_m, d_m, order, rgb_m = res["fine"]
        diff_f = tr_f.color - gt
        per_ray = per_ray + np.sum(diff_f.astype(acc) ** 2, axis=1)
        g_sig_m, g_rgb_m = composite_backward(tr_f, d_m.astype(dt), rgb_m, 2 * diff_f)
        nc = cfg.n_coarse
        g_sig = np.empty_like(g_sig_m)
        np.put_along_axis(g_sig, order, g_sig_m, 1)
        g_rgb = np.empty_like(g_rgb_m)
        np.put_along_axis(g_rgb, order[..., None], g_rgb_m, 1)
        g_sig_c += g_sig[:, :nc]
        g_rgb_c += g_rgb[:, :nc]
        pf.backward(grads, g_sig[:, nc:], g_rgb[:, nc:])
        final = tr_f.color
    pc.backward(grads, g_sig_c, g_rgb_c, g_sun_c)
    _check_finite(per_ray, rays, "loss")
    color = np.sum(per_ray)
    sq = float(np.sum((final.astype(np.float64) - rays.colors) ** 2))
    return grads, LossBreakdown(color, solar.transparency, solar.absorption, cfg.lambda_s), sq


def _solar_chunk(params, bounds, rays, cfg, u, n_total):
    grads = params.zeros_like()
    nc = cfg.n_coarse
    width = (rays.t_far - rays.t_near) / nc
    t = rays.t_near[:, None] + (np.arange(nc) + u) * width[:, None]
    delta = (spacings(t, width) / bounds.unit).astype(params.dtype)
    p = _Pass(params, bounds, rays, t, with_color=False)
    tr = composite(None, alpha_from_sigma(p.out.sigma, delta))
    tr_, ab_, gT, gw, gs = solar_terms(tr.T, tr.w, p.out.sun)
    k = cfg.lambda_s / n_total
    g_sig, _ = composite_backward(tr, delta, g_w=k * gw, g_T=k * gT)
    fnet.backward(params, p.out, g_sigma=g_sig, g_sun=k * gs, grads=grads)
    acc = np.promote_types(params.dtype, np.float64)
    return grads, LossBreakdown(0.0, np.sum(tr_, dtype=acc) / n_total,
                                np.sum(ab_, dtype=acc) / n_total, cfg.lambda_s)


def _workers():
    try:
        return max(1, int(os.environ.get("SURFNERF_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    n = _workers()
    if n == 1 or len(items) == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def compute_step(params, dataset, cfg, iteration):
    """Loss and summed gradients of one iteration, without updating anything.

    Work is split into fixed chunks of ``cfg.chunk`` rays whose results are
    reduced in chunk order, so the outcome does not depend on the number of
    worker threads.
    """
    idx = assemble_batch(dataset, cfg, iteration)
    rays = dataset.rays.take(idx)
    nb = len(idx)
    u_c = make_rng(cfg.seed, iteration, _S_COARSE).random((nb, cfg.n_coarse))
    if not cfg.jitter:
        u_c[:] = 0.5
    u_f = None
    if cfg.n_fine > 0:
        if cfg.fine_jitter:
            u_f = np.sort(make_rng(cfg.seed, iteration, _S_FINE).random((nb, cfg.n_fine)), axis=1)
        else:
            u_f = np.broadcast_to((np.arange(cfg.n_fine) + 0.5) / cfg.n_fine, (nb, cfg.n_fine))
    snerf = cfg.model == "snerf"
    use_solar = snerf and cfg.lambda_s > 0
    in_batch = use_solar and cfg.solar_rays == "batch"
    slices = [slice(i, min(i + cfg.chunk, nb)) for i in range(0, nb, cfg.chunk)]

    def cam(sl):
        return _train_chunk(params, dataset.bounds, rays.take(sl), cfg,
                            (u_c[sl], None if u_f is None else u_f[sl]), in_batch)

    jobs = [lambda sl=sl: cam(sl) for sl in slices]
    if use_solar and cfg.solar_rays == "dedicated":
        srays, srng = solar_batch(dataset, cfg, iteration)
        u_s = srng.random((len(srays), cfg.n_coarse)) if cfg.jitter else np.full(
            (len(srays), cfg.n_coarse), 0.5)
        ns = len(srays)
        for i in range(0, ns, cfg.chunk):
            sl = slice(i, min(i + cfg.chunk, ns))
            jobs.append(lambda sl=sl: _solar_chunk(params, dataset.bounds, srays.take(sl), cfg,
                                                   u_s[sl], ns) + (0.0,))
    results = _map(lambda f: f(), jobs)
    grads = results[0][0]
    loss = results[0][1]
    sq = results[0][2]
    for g, l, s in results[1:]:
        grads.flat += g.flat
        loss = loss + l
        sq += s
    loss.lambda_s = cfg.lambda_s if snerf else 0.0
    mse = sq / (3 * nb)
    return grads, loss, mse


def train_step(params, state, dataset, cfg, iteration):
    """One optimizer iteration. Returns ``(loss, lr, train_psnr)``."""
    with threadpool_limits(limits=1, user_api="blas"):
        grads, loss, mse = compute_step(params, dataset, cfg, iteration)
    lr = state.lr_at()
    adam_step(params.flat, grads.flat, state)
    psnr = float(10 * np.log10(1 / mse)) if mse > 0 else float("inf")
    return loss, lr, psnr


def new_state(params, cfg):
    return AdamState.for_params(params.flat, lr0=cfg.lr, decay_rate=cfg.decay_rate,
                                decay_steps=cfg.decay_steps or cfg.iterations,
                                clip_norm=cfg.clip_norm)


def _keep_heap():
    """Ask glibc to recycle large blocks instead of mmapping fresh pages.

    Training allocates many same-sized multi-MB temporaries per step; with the
    default thresholds each one is page-faulted anew, which costs about a
    quarter of the step time. No-op off glibc.
    """
    try:
        import ctypes
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return
    big = 1 << 30
    libc.mallopt(-1, big)       # M_TRIM_THRESHOLD
    libc.mallopt(-3, big)       # M_MMAP_THRESHOLD
    libc.mallopt(-2, 1 << 26)   # M_TOP_PAD


def _fmt(x):
    return repr(float(x))


def train(manifest, cfg, run_dir=None, params=None, state=None, start=0, dataset=None,
          on_eval=None):
    """Run ``cfg.iterations`` optimizer steps (continuing from ``start``).

    With ``run_dir`` set, writes ``config.json`` before the first step, one
    ``metrics.csv`` row per iteration, periodic checkpoints and, every
    ``eval_interval`` steps, test-view PSNR/SSIM rows to ``eval.csv``.
    Returns ``(params, state, rows)``.
    """
    _keep_heap()
    dataset = dataset or Dataset(manifest, cfg.include_augmented)
    if params is None:
        params = fnet.init_params(cfg.arch, cfg.seed, dtype=cfg.dtype)
    if state is None:
        state = new_state(params, cfg)
    extra = {"bounds": dataset.bounds.to_json(), "config": cfg.to_dict()}
    rows = []
    writer = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
        mode = "a" if start > 0 and (run_dir / "metrics.csv").exists() else "w"
        fh = open(run_dir / "metrics.csv", mode, newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            writer.writerow(METRICS_COLUMNS)
    try:
        for it in range(start, cfg.iterations):
            loss, lr, ps = train_step(params, state, dataset, cfg, it)
            row = (it + 1, loss.total, loss.color, loss.solar, lr, ps)
            rows.append(row)
            if writer is not None:
                writer.writerow([row[0]] + [_fmt(v) for v in row[1:]])
            if (it + 1) % 100 == 0:
                log.info("iter %d loss %.5f psnr %.2f", it + 1, loss.total, ps)
            if run_dir is not None and cfg.checkpoint_interval and (it + 1) % cfg.checkpoint_interval == 0:
                save_checkpoint(params, state, run_dir / "checkpoints" / f"iter_{it + 1:07d}.snrf",
                                it + 1, extra)
            if cfg.eval_interval and (it + 1) % cfg.eval_interval == 0:
                ev = evaluate_views(params, manifest, cfg, dataset.bounds)
                if run_dir is not None:
                    _append_eval(run_dir / "eval.csv", it + 1, ev)
                if on_eval is not None:
                    on_eval(it + 1, ev)
    finally:
        if writer is not None:
            fh.close()
    if run_dir is not None:
        save_checkpoint(params, state, run_dir / "checkpoints" / "final.snrf", cfg.iterations, extra)
    return params, state, rows


def _append_eval(path, it, ev):
    new = not path.exists()
    with open(path, "a", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if new:
            w.writerow(("iter", "view", "psnr", "ssim"))
        for name, (p, s) in ev.items():
            w.writerow((it, name, _fmt(p), _fmt(s)))


# --- rendering ----------------------------------------------------------------

def render_rays(params, bounds, rays, cfg, z_to_alt, alt_min, chunk=4096):
    """Deterministic rendering of arbitrary rays.

    Returns a dict of per-ray arrays: ``color``, ``altitude``, ``empty``,
    ``acc`` and for S-NeRF also ``sun``, ``albedo`` and ``sky``.
    """
    n = len(rays)
    out = {"color": np.zeros((n, 3)), "altitude": np.zeros(n), "empty": np.zeros(n, bool),
           "acc": np.zeros(n)}
    snerf = params.arch.kind == "snerf"
    if snerf:
        out.update(sun=np.zeros(n), albedo=np.zeros((n, 3)), sky=np.zeros((n, 3)))
    with threadpool_limits(limits=1, user_api="blas"):
        for i in range(0, n, chunk):
            sl = slice(i, min(i + chunk, n))
            sub = rays.take(sl)
            res = _render_chunk(params, bounds, sub, cfg)
            if "fine" in res:
                p, tr, t, _, order, _ = res["fine"]
                pc = res["coarse"][0]
                both = lambda a, b: np.take_along_axis(
                    np.concatenate([a, b], 1), order.reshape(order.shape + (1,) * (a.ndim - 2)), 1)
            else:
                pc, tr, t, _ = res["coarse"]
                p = None
                both = lambda a, b: a
            z = sub.origins[:, None, 2] + t * sub.dirs[:, None, 2]
            alt, empty = expected_altitude(tr, z_to_alt(z), alt_min)
            out["color"][sl] = tr.color
            out["altitude"][sl] = alt
            out["empty"][sl] = empty
            out["acc"][sl] = tr.acc
            if snerf:
                s = both(pc.out.sun, None if p is None else p.out.sun)
                out["sun"][sl] = np.sum(tr.w * s, axis=1)
                a = both(pc.out.color, None if p is None else p.out.color)
                out["albedo"][sl] = np.einsum("rn,rnc->rc", tr.w, a)
                out["sky"][sl] = pc.out.sky
    return out


def render_view(params, entry, cfg, bounds, manifest):
    """Image, altitude map and (S-NeRF) sun-visibility and albedo maps for one camera."""
    rays = entry_rays(entry, manifest.z_bounds, with_colors=False)
    r = render_rays(params, bounds, rays, cfg, manifest.z_to_altitude, manifest.alt_min)
    shp = (entry.height, entry.width)
    out = {"image": r["color"].reshape(shp + (3,)), "depth": r["altitude"].reshape(shp),
           "empty": r["empty"].reshape(shp), "acc": r["acc"].reshape(shp)}
    if "sun" in r:
        out["sun"] = r["sun"].reshape(shp)
        out["albedo"] = r["albedo"].reshape(shp + (3,))
    return out


def render_depth_grid(params, grid, cfg, bounds, manifest):
    """Top-down altitude map registered to ``grid`` (a DsmGrid): one
    vertical ray per cell center. Returns ``(altitude, empty)`` shaped like the grid."""
    x, y = grid.cell_centers()
    z_lo, z_hi = manifest.z_bounds
    o, d = nadir_rays(x, y, z_hi + 1.0)
    tn, tf = clip_to_altitude(o, d, z_lo, z_hi)
    suns = np.broadcast_to(np.array([0.0, 0.0, 1.0]), o.shape).copy()
    rays = RaySet(o, d, tn, tf, suns)
    r = render_rays(params, bounds, rays, cfg, manifest.z_to_altitude, manifest.alt_min)
    shp = (grid.nrows, grid.ncols)
    return r["altitude"].reshape(shp), r["empty"].reshape(shp)


def evaluate_views(params, manifest, cfg, bounds, entries=None):
    """PSNR and SSIM per test view: ``{file: (psnr, ssim)}``."""
    from .metrics import psnr, ssim
    res = {}
    for e in entries if entries is not None else manifest.test:
        img = render_view(params, e, cfg, bounds, manifest)["image"]
        gt = load_image(e)
        res[e.file] = (psnr(img, gt), ssim(img, gt))
    return res
