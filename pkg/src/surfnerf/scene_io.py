"""Scene manifests, PNG rasters, DSM grids and training checkpoints."""
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import png

from .geometry import sun_vector

SPLITS = ("train", "test")


class ManifestError(ValueError):
    """Invalid scene manifest; the message starts with the offending field path."""

    def __init__(self, where, msg):
        super().__init__(f"{where}: {msg}")
        self.where = where


class FormatError(ValueError):
    """Corrupt or mismatched binary file."""


@dataclass
class ImageEntry:
    file: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    camera_to_world: np.ndarray
    sun_azimuth: float
    sun_elevation: float
    split: str = "train"
    augmented: bool = False
    root: Path = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.camera_to_world = np.asarray(self.camera_to_world, dtype=float).reshape(4, 4)

    @property
    def path(self):
        p = Path(self.file)
        return p if (p.is_absolute() or self.root is None) else Path(self.root) / p

    @property
    def sun_direction(self):
        return sun_vector(self.sun_azimuth, self.sun_elevation)

    def to_json(self):
        return {
            "file": str(self.file), "width": int(self.width), "height": int(self.height),
            "fx": float(self.fx), "fy": float(self.fy), "cx": float(self.cx), "cy": float(self.cy),
            "camera_to_world": self.camera_to_world.tolist(),
            "sun_azimuth": float(self.sun_azimuth), "sun_elevation": float(self.sun_elevation),
            "split": self.split, "augmented": bool(self.augmented),
        }

    def __eq__(self, other):
        if not isinstance(other, ImageEntry):
            return NotImplemented
        return self.to_json() == other.to_json()


@dataclass
class SceneManifest:
    scene_id: str
    images: list
    alt_min: float
    alt_max: float
    scene_origin: tuple = (0.0, 0.0, 0.0)
    scene_scale: float = 1.0
    root: Path = field(default=None, repr=False, compare=False)

    def split(self, name):
        return [e for e in self.images if e.split == name]

    @property
    def train(self):
        return self.split("train")

    @property
    def test(self):
        return self.split("test")

    def altitude_to_z(self, alt):
        """Scene-unit z coordinate of an altitude in meters."""
        return self.scene_origin[2] + np.asarray(alt) / self.scene_scale

    def z_to_altitude(self, z):
        return (np.asarray(z) - self.scene_origin[2]) * self.scene_scale

    @property
    def z_bounds(self):
        return float(self.altitude_to_z(self.alt_min)), float(self.altitude_to_z(self.alt_max))

    def to_json(self):
        return {
            "scene_id": self.scene_id,
            "alt_min": float(self.alt_min), "alt_max": float(self.alt_max),
            "scene_origin": [float(v) for v in self.scene_origin],
            "scene_scale": float(self.scene_scale),
            "images": [e.to_json() for e in self.images],
        }


_ENTRY_FIELDS = {
    "file": str, "width": int, "height": int, "fx": float, "fy": float, "cx": float, "cy": float,
    "camera_to_world": list, "sun_azimuth": float, "sun_elevation": float, "split": str,
}


def _num(v, kind, where):
    if kind is str:
        if not isinstance(v, str):
            raise ManifestError(where, "expected a string")
        return v
    if kind is list:
        return v
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ManifestError(where, "expected a number")
    if kind is int and int(v) != v:
        raise ManifestError(where, "expected an integer")
    return kind(v)


def parse_entry(d, where="images[?]", root=None, probe=True):
    if not isinstance(d, dict):
        raise ManifestError(where, "expected an object")
    vals = {}
    for k, kind in _ENTRY_FIELDS.items():
        if k not in d:
            raise ManifestError(f"{where}.{k}", "missing field")
        vals[k] = _num(d[k], kind, f"{where}.{k}")
    M = np.asarray(vals["camera_to_world"], dtype=float) if _is_4x4(vals["camera_to_world"]) else None
    if M is None:
        raise ManifestError(f"{where}.camera_to_world", "expected a 4x4 array of numbers")
    R = M[:3, :3]
    if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-5:
        raise ManifestError(f"{where}.camera_to_world", "rotation block is not orthonormal")
    if vals["fx"] <= 0 or vals["fy"] <= 0:
        raise ManifestError(f"{where}.fx", "focal lengths must be positive")
    if vals["width"] < 1 or vals["height"] < 1:
        raise ManifestError(f"{where}.width", "image dimensions must be positive")
    if not 0 < vals["sun_elevation"] <= 90:
        raise ManifestError(f"{where}.sun_elevation", "must be in (0, 90] degrees")
    if vals["split"] not in SPLITS:
        raise ManifestError(f"{where}.split", f"must be one of {SPLITS}")
    e = ImageEntry(camera_to_world=M, augmented=bool(d.get("augmented", False)), root=root,
                   **{k: v for k, v in vals.items() if k != "camera_to_world"})
    if probe:
        if not e.path.is_file():
            raise ManifestError(f"{where}.file", f"image file not found: {e.path}")
        try:
            r = png.Reader(filename=str(e.path))
            r.preamble()
            w, h = r.width, r.height
        except png.Error as exc:
            raise ManifestError(f"{where}.file", f"cannot decode {e.path}: {exc}") from exc
        if (w, h) != (e.width, e.height):
            raise ManifestError(f"{where}.file",
                                f"image is {w}x{h}, manifest declares {e.width}x{e.height}")
    return e


def _is_4x4(v):
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        return False
    return a.shape == (4, 4) and np.all(np.isfinite(a))


def manifest_from_dict(d, root=None, probe=True):
    if not isinstance(d, dict):
        raise ManifestError("$", "expected a JSON object")
    for k in ("scene_id", "images", "alt_min", "alt_max"):
        if k not in d:
            raise ManifestError(k, "missing field")
    alt_min = _num(d["alt_min"], float, "alt_min")
    alt_max = _num(d["alt_max"], float, "alt_max")
    if alt_min >= alt_max:
        raise ManifestError("alt_min", "altitude bounds inverted (alt_min >= alt_max)")
    origin = d.get("scene_origin", [0.0, 0.0, 0.0])
    if not (isinstance(origin, list) and len(origin) == 3):
        raise ManifestError("scene_origin", "expected 3 numbers")
    origin = tuple(_num(v, float, f"scene_origin[{i}]") for i, v in enumerate(origin))
    scale = _num(d.get("scene_scale", 1.0), float, "scene_scale")
    if scale <= 0:
        raise ManifestError("scene_scale", "must be positive")
    if not isinstance(d["images"], list):
        raise ManifestError("images", "expected a list")
    images = [parse_entry(e, f"images[{i}]", root, probe) for i, e in enumerate(d["images"])]
    m = SceneManifest(scene_id=_num(d["scene_id"], str, "scene_id"), images=images,
                      alt_min=alt_min, alt_max=alt_max, scene_origin=origin,
                      scene_scale=scale, root=root)
    if not m.train:
        raise ManifestError("images", "no train image")
    if not m.test:
        raise ManifestError("images", "no test image")
    return m


def load_manifest(path, probe=True):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scene manifest not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError("$", f"invalid JSON in {path}: {exc}") from exc
    return manifest_from_dict(d, root=path.parent, probe=probe)


def save_manifest(manifest, path):
    _atomic_write(Path(path), json.dumps(manifest.to_json(), indent=1).encode())


def _atomic_write(path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- images -----------------------------------------------------------------

def read_png(path):
    """RGB pixels in [0, 1] as float64 (H, W, 3). 8- and 16-bit files."""
    try:
        w, h, rows, info = png.Reader(filename=str(path)).asDirect()
        a = np.vstack([np.asarray(r, dtype=np.float64) for r in rows])
    except png.Error as exc:
        raise ValueError(f"cannot decode {path}: {exc}") from exc
    a = a.reshape(h, w, info["planes"]) / (2 ** info["bitdepth"] - 1)
    if info["planes"] in (1, 2):
        a = np.repeat(a[..., :1], 3, axis=2)
    return np.ascontiguousarray(a[..., :3])


def write_png(path, pixels, bitdepth=8):
    """Write (H, W, 3) or (H, W) values in [0, 1] with rounding."""
    a = np.clip(np.asarray(pixels, dtype=np.float64), 0, 1)
    top = 2 ** bitdepth - 1
    q = np.rint(a * top).astype(np.uint16 if bitdepth > 8 else np.uint8)
    h, w = q.shape[:2]
    greyscale = q.ndim == 2
    rows = q.reshape(h, -1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        png.Writer(w, h, greyscale=greyscale, bitdepth=bitdepth).write(f, rows.tolist())


def load_image(entry):
    pix = read_png(entry.path)
    if pix.shape[:2] != (entry.height, entry.width):
        raise ValueError(f"{entry.path}: image is {pix.shape[1]}x{pix.shape[0]}, "
                         f"manifest declares {entry.width}x{entry.height}")
    return pix


# --- DSM --------------------------------------------------------------------

DSM_MAGIC = b"DSM1"
_DSM_HEADER = struct.Struct("<4sII4dI")  # 48 bytes; trailing u32 reserved


@dataclass
class DsmGrid:
    """Altitude raster. Row 0 is the southern (``y0``) edge; cell (r, c) has
    its center at ``(x0 + (c + .5) cell_size, y0 + (r + .5) cell_size)``."""

    ncols: int
    nrows: int
    cell_size: float
    x0: float
    y0: float
    values: np.ndarray
    nodata: float = -9999.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32).reshape(self.nrows, self.ncols)
        ok = np.isfinite(self.values) | (self.values == np.float32(self.nodata))
        if not np.all(ok):
            raise ValueError("DSM values must be finite or nodata")

    def cell_centers(self):
        c = self.x0 + (np.arange(self.ncols) + 0.5) * self.cell_size
        r = self.y0 + (np.arange(self.nrows) + 0.5) * self.cell_size
        x, y = np.meshgrid(c, r)
        return x, y

    @property
    def valid(self):
        return self.values != np.float32(self.nodata)

    def __eq__(self, other):
        if not isinstance(other, DsmGrid):
            return NotImplemented
        return ((self.ncols, self.nrows, self.cell_size, self.x0, self.y0, self.nodata)
                == (other.ncols, other.nrows, other.cell_size, other.x0, other.y0, other.nodata)
                and self.values.tobytes() == other.values.tobytes())


def save_dsm(grid, path):
    head = _DSM_HEADER.pack(DSM_MAGIC, grid.ncols, grid.nrows, grid.cell_size, grid.x0, grid.y0,
                            grid.nodata, 0)
    _atomic_write(Path(path), head + grid.values.astype("<f4").tobytes())


def load_dsm(path):
    data = Path(path).read_bytes()
    if len(data) < _DSM_HEADER.size:
        raise FormatError(f"{path}: truncated DSM header")
    magic, ncols, nrows, cs, x0, y0, nodata, _ = _DSM_HEADER.unpack_from(data)
    if magic != DSM_MAGIC:
        raise FormatError(f"{path}: bad DSM magic {magic!r}")
    payload = data[_DSM_HEADER.size:]
    if len(payload) != 4 * ncols * nrows:
        raise FormatError(f"{path}: DSM payload has {len(payload)} bytes, "
                          f"expected {4 * ncols * nrows}")
    vals = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(nrows, ncols)
    return DsmGrid(ncols, nrows, cs, x0, y0, vals, nodata)


# --- checkpoints --------------------------------------------------------------

CKPT_MAGIC = b"SNRF"
CKPT_VERSION = 1
_CKPT_FIXED = struct.Struct("<4sI16sIQQ")


def arch_hash(arch):
    layers = json.dumps(arch.layers()).encode()
    return hashlib.sha256(layers).digest()[:16]


def save_checkpoint(params, state, path, iteration=None, extra=None):
    """Write parameters and Adam moments as little-endian float32.

    Layout: magic, version, 16-byte architecture hash, header length,
    iteration, parameter count, JSON header, then parameters, first moments
    and second moments in canonical order.
    """
    arch = params.arch
    it = state.t if iteration is None else iteration
    header = {
        "kind": arch.kind, "arch": arch.to_dict(),
        "adam": {"t": state.t, "lr0": state.lr0, "decay_rate": state.decay_rate,
                 "decay_steps": state.decay_steps, "beta1": state.beta1, "beta2": state.beta2,
                 "eps": state.eps, "clip_norm": state.clip_norm},
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    n = params.flat.size
    fixed = _CKPT_FIXED.pack(CKPT_MAGIC, CKPT_VERSION, arch_hash(arch), len(hbytes), it, n)
    body = b"".join(np.asarray(a, dtype="<f4").tobytes() for a in (params.flat, state.m, state.v))
    _atomic_write(Path(path), fixed + hbytes + body)


def load_checkpoint(path, arch=None):
    """Returns ``(params, state, iteration, extra)``; params are float32.

    With ``arch`` given, a checkpoint written for any other architecture is
    rejected.
    """
    from .field import ArchConfig, ParameterSet
    from .optim import AdamState

    data = Path(path).read_bytes()
    if len(data) < _CKPT_FIXED.size:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, version, ahash, hlen, it, n = _CKPT_FIXED.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = _CKPT_FIXED.size
    try:
        header = json.loads(data[off:off + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    stored = ArchConfig(**header["arch"])
    if arch_hash(stored) != ahash:
        raise FormatError(f"{path}: architecture hash does not match header")
    if arch is not None and arch_hash(arch) != ahash:
        raise FormatError(f"{path}: checkpoint architecture differs from the requested one")
    if n != stored.n_params():
        raise FormatError(f"{path}: parameter count {n} does not match the architecture")
    body = data[off + hlen:]
    if len(body) != 3 * 4 * n:
        raise FormatError(f"{path}: payload has {len(body)} bytes, expected {12 * n}")
    arrs = np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(3, n)
    params = ParameterSet(stored, arrs[0].copy())
    a = header["adam"]
    state = AdamState(m=arrs[1].copy(), v=arrs[2].copy(), **a)
    return params, state, it, header.get("extra", {})
