"""Zoom-and-crop view augmentation with optional Gaussian blur."""
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .scene_io import SceneManifest, load_image, save_manifest, write_png


@dataclass(frozen=True)
class AugmentSpec:
    zoom_factor: float = 2.0
    out_width: int = None      # None keeps the source size
    out_height: int = None
    blur_sigma: float = 0.0

    def __post_init__(self):
        if self.zoom_factor < 1:
            raise ValueError("zoom factor must be >= 1")
        if self.blur_sigma < 0:
            raise ValueError("blur sigma must be >= 0")


def gaussian_kernel(sigma, radius=None):
    """Normalized 1-D Gaussian taps on ``[-radius, radius]`` (default ``ceil(3 sigma)``)."""
    if radius is None:
        radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(pixels, sigma):
    """Separable Gaussian blur over the two leading axes with reflect padding."""
    if sigma < 0:
        raise ValueError("blur sigma must be >= 0")
    img = np.asarray(pixels, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    r = k.size // 2
    out = img
    for axis in (0, 1):
        pad = [(0, 0)] * img.ndim
        pad[axis] = (r, r)
        p = np.pad(out, pad, mode="reflect")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, w in enumerate(k):
            acc += w * np.take(p, np.arange(i, i + n), axis=axis)
        out = acc
    return out


def bilinear(img, x, y):
    """Sample ``img`` (H, W, C) at continuous index coordinates, clamping at the border."""
    h, w = img.shape[:2]
    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(int), w - 2) if w > 1 else np.zeros_like(x, dtype=int)
    y0 = np.minimum(np.floor(y).astype(int), h - 2) if h > 1 else np.zeros_like(y, dtype=int)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def zoom_and_crop(entry, pixels, spec):
    """Magnify the center of an image by ``spec.zoom_factor``.

    The focal lengths scale with the zoom and the principal point moves so
    that every output pixel looks along the same ray as the source location
    it was resampled from. Returns ``(pixels, entry)``.
    """
    z = spec.zoom_factor
    W, H = entry.width, entry.height
    w = spec.out_width or W
    h = spec.out_height or H
    if w > W or h > H:
        raise ValueError("output larger than the source image")
    if w / z > W or h / z > H:
        raise ValueError("crop window exceeds the source image")
    u, v = np.meshgrid(np.arange(w), np.arange(h))
    # continuous source position (pixel centers at +0.5), then index space
    sx = W / 2 + (u + 0.5 - w / 2) / z - 0.5
    sy = H / 2 + (v + 0.5 - h / 2) / z - 0.5
    img = np.asarray(pixels, dtype=np.float64)
    out = bilinear(img, sx, sy)
    if spec.blur_sigma > 0:
        out = gaussian_blur(out, spec.blur_sigma)
    stem = Path(entry.file).stem
    new = replace(entry, file=f"{stem}_zoom{z:g}.png", width=w, height=h,
                  fx=entry.fx * z, fy=entry.fy * z,
                  cx=w / 2 + z * (entry.cx - W / 2), cy=h / 2 + z * (entry.cy - H / 2),
                  camera_to_world=entry.camera_to_world.copy(), split="train", augmented=True)
    return out, new


def augment_manifest(manifest, out_dir, zoom, count=1, blur_sigma=0.0):
    """Add ``count`` zoom levels, evenly spaced in (1, zoom], per train image.

    New PNGs and an updated ``scene.json`` go to ``out_dir``; the original
    entries point back at their files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = []
    for e in manifest.images:
        images.append(replace(e, file=str(Path(e.path).resolve()), root=out))
    for e in manifest.train:
        if e.augmented:
            continue
        pix = load_image(e)
        for k in range(1, count + 1):
            zk = 1 + (zoom - 1) * k / count
            new_pix, new = zoom_and_crop(e, pix, AugmentSpec(zk, blur_sigma=blur_sigma))
            new.root = out
            write_png(out / new.file, new_pix)
            images.append(new)
    m = SceneManifest(manifest.scene_id, images, manifest.alt_min, manifest.alt_max,
                      manifest.scene_origin, manifest.scene_scale, root=out)
    save_manifest(m, out / "scene.json")
    return m
