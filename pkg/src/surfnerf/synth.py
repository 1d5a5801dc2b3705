"""Analytic box-and-plane scenes: reference images with hard sun shadows,
ground-truth DSMs, closed-form transmittance and a finite-difference oracle."""
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .geometry import look_at, pixel_grid, generate_rays, sun_vector
from .scene_io import (DsmGrid, ImageEntry, SceneManifest, save_dsm, save_manifest, write_png)

HIT_EPS = 1e-6


@dataclass
class Box:
    lo: tuple
    hi: tuple
    albedo: tuple

    def __post_init__(self):
        self.lo = tuple(float(v) for v in self.lo)
        self.hi = tuple(float(v) for v in self.hi)
        self.albedo = tuple(float(v) for v in self.albedo)
        if not all(a < b for a, b in zip(self.lo, self.hi)):
            raise ValueError("box lo corner must be below hi corner on every axis")


@dataclass
class SynthSpec:
    scene_id: str = "synth"
    extent: float = 50.0                       # ground square is [-extent, extent]^2
    ground_alt: float = 0.0
    ground_albedo: tuple = (0.62, 0.56, 0.45)
    ground_tile: float = 0.0                   # > 0: plaid ground texture with this stripe width
    ground_albedo2: tuple = (0.3, 0.33, 0.28)
    boxes: list = field(default_factory=lambda: [
        Box((-30.0, -25.0, 0.0), (-10.0, -5.0, 10.0), (0.85, 0.35, 0.3)),
        Box((6.0, 4.0, 0.0), (24.0, 24.0, 20.0), (0.35, 0.5, 0.85)),
    ])
    sky: tuple = (0.45, 0.5, 0.65)
    suns: list = field(default_factory=lambda: [(120.0, 55.0), (200.0, 62.0), (265.0, 50.0)])
    n_views: int = 11
    test_views: tuple = (2, 7)
    off_nadir: float = 25.0                    # or a list, cycled over the views
    distance: float = 500.0
    footprint: float = 110.0
    image_size: int = 64
    alt_min: float = -2.0
    alt_max: float = 22.0
    cell_size: float = 1.0
    sigma_box: float = 0.15                    # density used by the quadrature oracle

    def __post_init__(self):
        self.boxes = [b if isinstance(b, Box) else Box(**b) for b in self.boxes]
        self.suns = [tuple(s) for s in self.suns]
        self.test_views = tuple(self.test_views)
        if isinstance(self.off_nadir, (list, tuple)):
            self.off_nadir = [float(a) for a in self.off_nadir]
        if not all(0 <= a <= 35 for a in np.atleast_1d(self.off_nadir)):
            raise ValueError("off-nadir angle must be within [0, 35] degrees")
        for b in self.boxes:
            if any(abs(v) > self.extent for v in b.lo[:2] + b.hi[:2]):
                raise ValueError("box outside the scene square")
            if b.hi[2] > self.alt_max or b.lo[2] < self.alt_min:
                raise ValueError("box outside the altitude bounds")
        for a in list(self.ground_albedo) + list(self.ground_albedo2) + [v for b in self.boxes for v in b.albedo] + list(self.sky):
            if not 0 <= a <= 1:
                raise ValueError("albedos and sky color must be in [0, 1]")
        for i, a in enumerate(self.boxes):
            for b in self.boxes[i + 1:]:
                if all(a.lo[k] < b.hi[k] and b.lo[k] < a.hi[k] for k in range(3)):
                    raise ValueError("boxes overlap")
        if self.n_views - len(self.test_views) < 1 or not self.test_views:
            raise ValueError("need at least one train and one test view")

    @classmethod
    def from_json(cls, path):
        return cls(**json.loads(Path(path).read_text()))

    def to_json(self):
        d = asdict(self)
        d["boxes"] = [asdict(b) for b in self.boxes]
        return d


# --- ray tracing ------------------------------------------------------------

def ray_box(o, d, box):
    """Slab test. Returns (t_enter, t_exit) per ray; a miss has t_enter > t_exit."""
    lo = np.asarray(box.lo)
    hi = np.asarray(box.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
    par = d == 0
    inside = (o >= lo) & (o <= hi)
    enter = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    leave = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    return enter.max(axis=-1), leave.min(axis=-1)


def first_hit(spec, o, d):
    """Nearest surface along each ray: returns (t, label) with label 0 for
    the ground, k + 1 for box k and -1 for a miss."""
    n = o.shape[0]
    t = np.full(n, np.inf)
    label = np.full(n, -1)
    with np.errstate(divide="ignore"):
        tg = (spec.ground_alt - o[:, 2]) / d[:, 2]
    ok = (tg > 0) & np.isfinite(tg)
    t[ok] = tg[ok]
    label[ok] = 0
    for k, b in enumerate(spec.boxes):
        t0, t1 = ray_box(o, d, b)
        hit = (t0 <= t1) & (t1 > 0)
        te = np.where(t0 > 0, t0, t1)
        closer = hit & (te < t)
        t[closer] = te[closer]
        label[closer] = k + 1
    return t, label


def sun_visibility(spec, points, sun):
    """1 where the straight path toward the sun is unobstructed, else 0."""
    sun = np.asarray(sun, dtype=float)
    o = points + HIT_EPS * 10 * sun
    d = np.broadcast_to(sun, o.shape)
    lit = np.ones(len(points))
    for b in spec.boxes:
        t0, t1 = ray_box(o, d, b)
        lit[(t0 <= t1) & (t1 > HIT_EPS)] = 0.0
    return lit


def albedo_of(spec, label, points=None):
    table = np.array([spec.ground_albedo] + [b.albedo for b in spec.boxes])
    out = table[np.maximum(label, 0)]
    if spec.ground_tile > 0 and points is not None:
        xy = np.nan_to_num(np.asarray(points)[..., :2], posinf=0.0, neginf=0.0)
        # irregular plaid: x and y stripes with hashed on/off states, blended
        # additively; no period, so multi-view matching is unambiguous
        k = np.floor(xy / spec.ground_tile)
        f = ((np.sin(k * 12.9898 + np.array([0.0, 78.233])) * 43758.5453) % 1.0 > 0.5).mean(-1, keepdims=True)
        mix = (1 - f) * np.asarray(spec.ground_albedo) + f * np.asarray(spec.ground_albedo2)
        out = np.where((label == 0)[..., None], mix, out)
    return out


def shade(spec, o, d, sun):
    """Per-ray color, sun visibility, hit label and hit altitude."""
    t, label = first_hit(spec, o, d)
    p = o + t[:, None] * d
    s = sun_visibility(spec, p, sun)
    light = s[:, None] + (1 - s[:, None]) * np.asarray(spec.sky)
    color = albedo_of(spec, label, p) * light
    return color, s, label, p[:, 2]


def view_entries(spec):
    """Camera ring: evenly spaced azimuths, all looking at the scene center.
    The off-nadir angle is fixed or cycles through a list."""
    n = spec.image_size
    f = (n / 2) * spec.distance / (spec.footprint / 2)
    out = []
    angles = np.atleast_1d(spec.off_nadir)
    for k in range(spec.n_views):
        az = 2 * np.pi * k / spec.n_views
        off = np.radians(angles[k % len(angles)])
        eye = spec.distance * np.array([np.sin(off) * np.sin(az), np.sin(off) * np.cos(az), np.cos(off)])
        eye[2] += spec.ground_alt
        M = look_at(eye, (0.0, 0.0, spec.ground_alt))
        saz, sel = spec.suns[k % len(spec.suns)]
        out.append(ImageEntry(file=f"img_{k:03d}.png", width=n, height=n, fx=f, fy=f,
                              cx=n / 2, cy=n / 2, camera_to_world=M, sun_azimuth=saz,
                              sun_elevation=sel,
                              split="test" if k in spec.test_views else "train"))
    return out


def render_view(spec, entry):
    """Reference image and per-pixel oracle maps for one camera.

    Returns a dict with ``image`` (H, W, 3), ``sun`` (H, W), ``label`` (H, W)
    and ``altitude`` (H, W).
    """
    u, v = pixel_grid(entry.width, entry.height)
    o, d = generate_rays(entry, u, v)
    color, s, label, alt = shade(spec, o, d, entry.sun_direction)
    shp = (entry.height, entry.width)
    return {"image": color.reshape(shp + (3,)), "sun": s.reshape(shp),
            "label": label.reshape(shp), "altitude": alt.reshape(shp)}


def dsm_grid(spec):
    """Highest surface in each cell (box tops over any overlapped footprint)."""
    n = int(round(2 * spec.extent / spec.cell_size))
    x0 = y0 = -spec.extent
    edges = x0 + np.arange(n + 1) * spec.cell_size
    vals = np.full((n, n), spec.ground_alt)
    for b in spec.boxes:
        cols = (edges[1:] > b.lo[0]) & (edges[:-1] < b.hi[0])
        rows = (edges[1:] > b.lo[1]) & (edges[:-1] < b.hi[1])
        m = rows[:, None] & cols[None, :]
        vals[m] = np.maximum(vals[m], b.hi[2])
    return DsmGrid(n, n, spec.cell_size, x0, y0, vals)


def synth_scene(spec, out_dir):
    """Write PNGs, oracle sun masks, ``scene.json`` and ``dsm.dsm`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = view_entries(spec)
    for e in entries:
        r = render_view(spec, e)
        write_png(out / e.file, r["image"])
        write_png(out / e.file.replace("img_", "sun_"), r["sun"])
        e.root = out
    m = SceneManifest(scene_id=spec.scene_id, images=entries, alt_min=spec.alt_min,
                      alt_max=spec.alt_max, root=out)
    save_manifest(m, out / "scene.json")
    grid = dsm_grid(spec)
    save_dsm(grid, out / "dsm.dsm")
    (out / "synth_spec.json").write_text(json.dumps(spec.to_json(), indent=1))
    return m, grid


# --- density-field oracles ---------------------------------------------------

def density_segments(spec, o, d, t_near, t_far):
    """Box-interior intervals of one ray inside [t_near, t_far], sorted:
    list of (t_a, t_b, albedo)."""
    segs = []
    for b in spec.boxes:
        t0, t1 = ray_box(o[None], d[None], b)
        a, z = max(t0[0], t_near), min(t1[0], t_far)
        if a < z:
            segs.append((a, z, np.asarray(b.albedo)))
    return sorted(segs, key=lambda s: s[0])


def analytic_transmittance(spec, o, d, t_near, t):
    """exp(-sigma_box * length of [t_near, t] inside boxes) for a single ray."""
    t = np.asarray(t, dtype=float)
    depth = np.zeros_like(t)
    for a, z, _ in density_segments(spec, o, d, t_near, np.inf):
        depth += np.clip(np.minimum(t, z) - a, 0, None)
    return np.exp(-spec.sigma_box * depth)


def analytic_radiance(spec, o, d, t_near, t_far):
    """Closed-form emission-absorption integral for the piecewise-constant field."""
    I = np.zeros(3)
    T = 1.0
    for a, z, c in density_segments(spec, o, d, t_near, t_far):
        k = np.exp(-spec.sigma_box * (z - a))
        I += T * (1 - k) * c
        T *= k
    return I


def density_at(spec, points):
    """Piecewise-constant density and color at sample points (..., 3)."""
    pts = np.asarray(points, dtype=float)
    sigma = np.zeros(pts.shape[:-1])
    color = np.zeros(pts.shape)
    for b in spec.boxes:
        inside = np.all((pts > np.asarray(b.lo)) & (pts < np.asarray(b.hi)), axis=-1)
        sigma[inside] = spec.sigma_box
        color[inside] = b.albedo
    return sigma, color


def fd_gradient(f, theta, h=1e-3, stencil="central", dtype=np.float64):
    """Numerical gradient of scalar ``f`` at the 1-D array ``theta``.

    ``dtype=np.longdouble`` evaluates ``f`` in extended precision, which
    pushes the roundoff floor of the difference quotient well below the
    truncation error of a small step.
    """
    if stencil not in ("central", "forward"):
        raise ValueError(f"unknown stencil {stencil!r}")
    theta = np.array(theta, dtype=dtype)
    g = np.zeros_like(theta)
    f0 = f(theta) if stencil == "forward" else None
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        fp = f(theta)
        if stencil == "central":
            theta[i] = old - h
            g[i] = (fp - f(theta)) / (2 * h)
        else:
            g[i] = (fp - f0) / h
        theta[i] = old
    return g


def grad_rel_error(analytic, numeric, floor=1e-6):
    """Entry-wise ``|a - n| / max(|a|, |n|, floor * max|n|)``.

    The floor keeps entries that are tiny compared with the largest gradient
    from being judged by their own (roundoff-dominated) magnitude.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * np.abs(n).max())
    return np.abs(a - n) / np.where(scale > 0, scale, 1.0)
