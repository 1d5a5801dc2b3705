"""Pinhole rays, altitude clipping, stratified and hierarchical sampling."""
import numpy as np

EPS_PAD = 0.01
MIN_DIR_Z = 1e-9


def make_rng(seed, iteration=0, stream=0):
    """Counter-based generator for one (seed, iteration, stream) triple.

    Draws are consumed in ray-major order, so ray ``r`` always sees the same
    numbers no matter how a batch is later split into chunks.
    """
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, int(stream), int(iteration)]))


def sun_vector(azimuth_deg, elevation_deg):
    """Unit vector from the scene toward the sun.

    Frame: +x east, +y north, +z up; azimuth clockwise from north.
    """
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    return np.stack([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)], axis=-1)


def look_at(eye, target, up=(0.0, 1.0, 0.0)):
    """Camera-to-world matrix for a camera at ``eye`` looking at ``target`` (camera looks down -z)."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, (1.0, 0.0, 0.0))
    right /= np.linalg.norm(right)
    cam_up = np.cross(right, fwd)
    M = np.eye(4)
    M[:3, 0] = right
    M[:3, 1] = cam_up
    M[:3, 2] = -fwd
    M[:3, 3] = eye
    return M


def pixel_grid(width, height):
    """All pixel (u, v) pairs of an image, row-major."""
    v, u = np.mgrid[0:height, 0:width]
    return u.ravel(), v.ravel()


def generate_rays(entry, u, v):
    """Ray origins and unit directions through the centers of pixels (u, v).

    ``u`` is the column and ``v`` the row, both integer pixel indices.
    """
    u = np.asarray(u)
    v = np.asarray(v)
    if np.any(u < 0) or np.any(u >= entry.width) or np.any(v < 0) or np.any(v >= entry.height):
        raise ValueError("pixel coordinates outside the image")
    d_cam = np.stack([(u + 0.5 - entry.cx) / entry.fx,
                      -(v + 0.5 - entry.cy) / entry.fy,
                      -np.ones(u.shape)], axis=-1)
    M = np.asarray(entry.camera_to_world, dtype=float)
    d = d_cam @ M[:3, :3].T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(M[:3, 3], d.shape).copy()
    return o, d


def project(entry, points):
    """Continuous pixel coordinates (u, v) of world points, with pixel centers
    at integer values so that it inverts :func:`generate_rays`."""
    M = np.asarray(entry.camera_to_world, dtype=float)
    p_cam = (np.asarray(points, dtype=float) - M[:3, 3]) @ M[:3, :3]
    z = -p_cam[..., 2]
    u = entry.fx * p_cam[..., 0] / z + entry.cx - 0.5
    v = -entry.fy * p_cam[..., 1] / z + entry.cy - 0.5
    return u, v


def clip_to_altitude(origins, dirs, z_min, z_max):
    """Ray parameters where each ray enters and leaves the slab ``z_min <= z <= z_max``.

    Returns ``(t_near, t_far)``; ``t_near`` is clamped at 0 for rays starting
    inside the slab.
    """
    origins = np.atleast_2d(origins)
    dz = np.atleast_2d(dirs)[:, 2]
    if np.any(np.abs(dz) < MIN_DIR_Z):
        raise ValueError("ray parallel to the ground plane cannot be clipped to an altitude range")
    t_hi = (z_max - origins[:, 2]) / dz
    t_lo = (z_min - origins[:, 2]) / dz
    t_near = np.maximum(np.minimum(t_hi, t_lo), 0.0)
    t_far = np.maximum(t_hi, t_lo)
    if np.any(t_far <= t_near):
        raise ValueError("ray does not cross the altitude range")
    return t_near, t_far


def stratified_samples(t_near, t_far, n, jitter=False, rng=None):
    """One sample per equal bin of ``[t_near, t_far]``.

    Returns ``(t, delta)`` of shape (R, n). Without jitter the samples sit at
    bin midpoints. ``delta`` is the gap to the next sample; the last one gets
    the bin width.
    """
    if n < 2:
        raise ValueError("need at least 2 coarse samples per ray")
    t_near = np.atleast_1d(np.asarray(t_near, dtype=float))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=float))
    width = (t_far - t_near) / n
    if jitter:
        if rng is None:
            raise ValueError("jittered sampling needs an rng")
        off = rng.random((t_near.size, n))
    else:
        off = np.full((t_near.size, n), 0.5)
    t = t_near[:, None] + (np.arange(n) + off) * width[:, None]
    return t, spacings(t, width)


def spacings(t, last):
    delta = np.empty_like(t)
    delta[:, :-1] = np.diff(t, axis=1)
    last = np.broadcast_to(np.asarray(last, dtype=float).reshape(-1), (t.shape[0],))
    delta[:, -1] = last
    # coincident samples get a negligible positive gap
    return np.maximum(delta, 1e-6 * last[:, None])


def hierarchical_samples(t_near, t_far, weights, n_fine, rng=None, deterministic=False, u=None):
    """Inverse-transform samples from the piecewise-constant PDF over the
    coarse bins, proportional to ``weights + EPS_PAD``. Returns sorted (R, n_fine).

    The uniforms come from ``u`` (sorted, (R, n_fine)) when given, else from
    ``(k + 0.5) / n_fine`` when ``deterministic``, else from ``rng``.
    """
    w = np.asarray(weights, dtype=float) + EPS_PAD
    if np.any(w < 0):
        raise ValueError("negative sampling weights")
    R, nc = w.shape
    t_near = np.atleast_1d(np.asarray(t_near, dtype=float))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=float))
    pdf = w / w.sum(axis=1, keepdims=True)
    cdf = np.zeros((R, nc + 1))
    np.cumsum(pdf, axis=1, out=cdf[:, 1:])
    cdf[:, -1] = 1.0
    if u is not None:
        u = np.asarray(u, dtype=float)
    elif deterministic:
        u = np.broadcast_to((np.arange(n_fine) + 0.5) / n_fine, (R, n_fine))
    else:
        if rng is None:
            raise ValueError("random fine sampling needs an rng")
        u = np.sort(rng.random((R, n_fine)), axis=1)
    idx = (u[:, :, None] >= cdf[:, None, 1:-1]).sum(axis=2)
    lo = np.take_along_axis(cdf, idx, axis=1)
    p = np.take_along_axis(pdf, idx, axis=1)
    frac = np.clip((u - lo) / p, 0.0, 1.0)
    width = ((t_far - t_near) / nc)[:, None]
    return t_near[:, None] + (idx + frac) * width


def merge_samples(t_coarse, t_fine, bin_width):
    """Sorted union of coarse and fine samples.

    Returns ``(t, delta, order)`` where ``order`` indexes into
    ``concatenate([t_coarse, t_fine], axis=1)``.
    """
    both = np.concatenate([t_coarse, t_fine], axis=1)
    order = np.argsort(both, axis=1, kind="stable")
    t = np.take_along_axis(both, order, axis=1)
    return t, spacings(t, bin_width), order


def points_along(origins, dirs, t):
    return origins[:, None, :] + t[..., None] * dirs[:, None, :]


def nadir_rays(x, y, z_top):
    """Straight-down rays starting at altitude ``z_top`` above points (x, y)."""
    x = np.ravel(x)
    o = np.stack([x, np.ravel(y), np.full(x.shape, float(z_top))], axis=-1)
    d = np.zeros_like(o)
    d[:, 2] = -1.0
    return o, d
