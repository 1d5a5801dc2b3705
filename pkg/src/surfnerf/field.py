"""Fully connected radiance fields with hand-written forward and backward passes.

Two model kinds share one trunk:

* ``nerf``  -> density and view-dependent color.
* ``snerf`` -> density, albedo, sun visibility and a sky color that depends
  only on the sun direction.

Inputs are laid out per ray: encoded positions ``(R, N, P)`` and per-ray
encoded directions ``(R, D)``. Per-ray inputs enter their layers through a
column block of the weight matrix, so they are multiplied once per ray
instead of once per sample.
"""
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expit

from .encoding import encoded_dim

KINDS = ("nerf", "snerf")


@dataclass(frozen=True)
class ArchConfig:
    kind: str = "nerf"
    depth: int = 8
    width: int = 256
    skip: int = 4
    color_width: int = 128
    use_viewdirs: bool = True
    sun_depth: int = 3
    sun_width: int = 50
    sky_width: int = 50
    sun_head_uses_viewdirs: bool = True
    albedo_uses_viewdirs: bool = False
    L_pos: int = 10
    L_dir: int = 4
    include_identity: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        for name in ("depth", "width", "color_width", "sun_depth", "sun_width", "sky_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def pos_dim(self):
        return encoded_dim(3, self.L_pos, self.include_identity)

    @property
    def dir_dim(self):
        return encoded_dim(3, self.L_dir, self.include_identity)

    @property
    def color_sees_dirs(self):
        if self.kind == "nerf":
            return self.use_viewdirs
        return self.use_viewdirs and self.albedo_uses_viewdirs

    @property
    def sun_sees_dirs(self):
        return self.use_viewdirs and self.sun_head_uses_viewdirs

    def to_dict(self):
        return asdict(self)

    def layers(self):
        """Canonical (name, out, in) list; this order is the checkpoint order."""
        P, D, W = self.pos_dim, self.dir_dim, self.width
        out = []
        for i in range(self.depth):
            n_in = P if i == 0 else W
            if i == self.skip and i > 0:
                n_in += P
            out.append((f"trunk{i}", W, n_in))
        out.append(("sigma", 1, W))
        out.append(("feature", W, W))
        head = "color" if self.kind == "nerf" else "albedo"
        out.append((f"{head}_hidden", self.color_width, W + (D if self.color_sees_dirs else 0)))
        out.append((f"{head}_out", 3, self.color_width))
        if self.kind == "snerf":
            n_in = W + D + (D if self.sun_sees_dirs else 0)
            for i in range(self.sun_depth):
                out.append((f"sun{i}", self.sun_width, n_in))
                n_in = self.sun_width
            out.append(("sun_out", 1, self.sun_width))
            out.append(("sky_hidden", self.sky_width, D))
            out.append(("sky_out", 3, self.sky_width))
        return out

    def n_params(self):
        return sum(o * i + o for _, o, i in self.layers())


class ParameterSet:
    """All weights and biases of one network backed by a single flat vector.

    ``self[name]`` gives ``(W, b)`` views with ``W`` shaped ``(out, in)``;
    writing through the views writes the flat vector.
    """

    def __init__(self, arch, flat=None, dtype=np.float32):
        self.arch = arch
        n = arch.n_params()
        if flat is None:
            flat = np.zeros(n, dtype=dtype)
        flat = np.asarray(flat)
        if flat.shape != (n,):
            raise ValueError(f"parameter vector has {flat.size} entries, architecture needs {n}")
        self.flat = flat
        self._views = {}
        k = 0
        for name, o, i in arch.layers():
            W = flat[k:k + o * i].reshape(o, i)
            k += o * i
            b = flat[k:k + o]
            k += o
            self._views[name] = (W, b)

    def __getitem__(self, name):
        return self._views[name]

    def __contains__(self, name):
        return name in self._views

    def names(self):
        return list(self._views)

    @property
    def dtype(self):
        return self.flat.dtype

    def zeros_like(self):
        return ParameterSet(self.arch, np.zeros_like(self.flat))

    def copy(self):
        return ParameterSet(self.arch, self.flat.copy())

    def astype(self, dtype):
        return ParameterSet(self.arch, self.flat.astype(dtype))


def init_params(arch, seed=0, dtype=np.float32):
    """Glorot-uniform weights, zero biases, drawn in canonical layer order."""
    rng = np.random.default_rng(seed)
    params = ParameterSet(arch, dtype=dtype)
    for name, o, i in arch.layers():
        lim = np.sqrt(6.0 / (i + o))
        W, _ = params[name]
        W[...] = rng.uniform(-lim, lim, size=(o, i))
    return params


def snerf_like_nerf(nerf_params, snerf_arch, sun_logit=40.0):
    """S-NeRF parameters that render exactly like ``nerf_params``.

    Trunk, density and color weights are copied into the trunk and albedo
    head; the sun head outputs a constant logit large enough that the
    visibility is 1.0 in floating point, so the irradiance is exactly one and
    the sky never contributes. The architectures must agree on everything the
    shared layers see (in particular whether the color head takes view
    directions).
    """
    src = nerf_params.arch
    if src.kind != "nerf" or snerf_arch.kind != "snerf":
        raise ValueError("need nerf parameters and an snerf architecture")
    out = init_params(snerf_arch, 0, dtype=nerf_params.dtype)
    rename = {"color_hidden": "albedo_hidden", "color_out": "albedo_out"}
    for name in nerf_params.names():
        W, b = nerf_params[name]
        W2, b2 = out[rename.get(name, name)]
        if W.shape != W2.shape:
            raise ValueError(f"layer {name}: shape {W.shape} vs {W2.shape}")
        W2[...] = W
        b2[...] = b
    W, b = out["sun_out"]
    W[...] = 0
    b[...] = sun_logit
    return out


def softplus(x):
    return np.logaddexp(0, x)


def _affine(inp, W, b):
    z = inp @ W.T
    z += b
    return z


def _relu(x):
    return np.maximum(x, 0, out=x)


@dataclass
class FieldOutput:
    sigma: np.ndarray              # (R, N)
    color: np.ndarray              # (R, N, 3); albedo for snerf
    sun: np.ndarray = None         # (R, N) snerf only
    sky: np.ndarray = None         # (R, 3) snerf only
    cache: dict = None

    @property
    def albedo(self):
        return self.color


def _check(params, x_enc, d_enc, sun_enc, need_color, need_sun):
    arch = params.arch
    if x_enc.ndim != 3 or x_enc.shape[-1] != arch.pos_dim:
        raise ValueError(f"encoded positions must be (R, N, {arch.pos_dim}), got {x_enc.shape}")
    R = x_enc.shape[0]
    needs_d = (need_color and arch.color_sees_dirs) or (need_sun and arch.sun_sees_dirs)
    if needs_d:
        if d_enc is None or d_enc.shape != (R, arch.dir_dim):
            raise ValueError(f"encoded view directions must be ({R}, {arch.dir_dim})")
    if need_sun and (sun_enc is None or sun_enc.shape != (R, arch.dir_dim)):
        raise ValueError(f"encoded sun directions must be ({R}, {arch.dir_dim})")


def forward(params, x_enc, d_enc=None, sun_enc=None, with_color=True, with_sun=True):
    """Evaluate the field. Dispatches on ``params.arch.kind``.

    ``with_color=False`` skips the color/albedo head and ``with_sun=False``
    the sun/sky heads (their outputs are then ``None`` and their gradients
    zero); solar correction rays only need density and visibility.
    """
    arch = params.arch
    dt = params.dtype
    snerf = arch.kind == "snerf"
    with_sun = with_sun and snerf
    x_enc = np.asarray(x_enc, dtype=dt)
    d_enc = None if d_enc is None else np.asarray(d_enc, dtype=dt)
    sun_enc = None if sun_enc is None else np.asarray(sun_enc, dtype=dt)
    _check(params, x_enc, d_enc, sun_enc, with_color, with_sun)
    R, N, P = x_enc.shape
    S = R * N
    X = x_enc.reshape(S, P)
    c = {"R": R, "N": N, "X": X, "d": d_enc, "sun": sun_enc,
         "with_color": with_color, "with_sun": with_sun, "trunk_in": [], "trunk_h": []}

    h = X
    for i in range(arch.depth):
        W, b = params[f"trunk{i}"]
        c["trunk_in"].append(h)
        if i == arch.skip and i > 0:
            # encoded position re-enters through the first P weight columns
            z = _affine(h, W[:, P:], b)
            z += X @ W[:, :P].T
        else:
            z = _affine(h, W, b)
        h = _relu(z)
        c["trunk_h"].append(h)

    W, b = params["sigma"]
    sig_raw = _affine(h, W, b)[:, 0]
    sigma = softplus(sig_raw)
    c["sig_raw"] = sig_raw

    W, b = params["feature"]
    feat = _affine(h, W, b)
    c["feat"] = feat
    Wd = arch.width

    color = None
    if with_color:
        head = "color" if arch.kind == "nerf" else "albedo"
        W, b = params[f"{head}_hidden"]
        z = _affine(feat, W[:, :Wd], b)
        if arch.color_sees_dirs:
            z = z.reshape(R, N, -1)
            z += (d_enc @ W[:, Wd:].T)[:, None, :]
            z = z.reshape(S, -1)
        hc = _relu(z)
        W, b = params[f"{head}_out"]
        color = expit(_affine(hc, W, b))
        c["hc"] = hc
        c["color"] = color
        color = color.reshape(R, N, 3)

    sun = sky = None
    if with_sun:
        W, b = params["sun0"]
        D = arch.dir_dim
        z = _affine(feat, W[:, :Wd], b)
        per_ray = sun_enc @ W[:, Wd:Wd + D].T
        if arch.sun_sees_dirs:
            per_ray = per_ray + d_enc @ W[:, Wd + D:].T
        z = (z.reshape(R, N, -1) + per_ray[:, None, :]).reshape(S, -1)
        hs = _relu(z)
        c["sun_h"] = [hs]
        for i in range(1, arch.sun_depth):
            W, b = params[f"sun{i}"]
            hs = _relu(_affine(hs, W, b))
            c["sun_h"].append(hs)
        W, b = params["sun_out"]
        s = expit(_affine(hs, W, b)[:, 0])
        c["s"] = s
        sun = s.reshape(R, N)

        W, b = params["sky_hidden"]
        hk = _relu(_affine(sun_enc, W, b))
        W, b = params["sky_out"]
        sky = expit(_affine(hk, W, b))
        c["sky_h"] = hk
        c["sky"] = sky

    return FieldOutput(sigma=sigma.reshape(R, N), color=color, sun=sun, sky=sky, cache=c)


def forward_nerf(params, x_enc, d_enc=None):
    if params.arch.kind != "nerf":
        raise ValueError("forward_nerf needs a nerf architecture")
    return forward(params, x_enc, d_enc)


def forward_snerf(params, x_enc, d_enc, sun_enc):
    if params.arch.kind != "snerf":
        raise ValueError("forward_snerf needs an snerf architecture")
    return forward(params, x_enc, d_enc, sun_enc)


def backward(params, out, g_sigma=None, g_color=None, g_sun=None, g_sky=None, grads=None,
             want_input_grad=False):
    """Reverse pass of :func:`forward`.

    Cotangents have the shapes of the matching ``FieldOutput`` arrays; any of
    them may be ``None`` (treated as zero). Gradients are summed over all
    samples and added into ``grads`` (a ParameterSet), which is returned. With
    ``want_input_grad`` the cotangent of the encoded positions is returned too.
    """
    arch = params.arch
    c = out.cache
    if c is None or c["X"].shape[1] != arch.pos_dim:
        raise ValueError("forward cache does not match these parameters")
    dt = params.dtype
    R, N = c["R"], c["N"]
    S = R * N
    if grads is None:
        grads = params.zeros_like()
    Wd = arch.width
    D = arch.dir_dim
    d_enc, sun_enc = c["d"], c["sun"]

    ones = np.ones(S, dtype=dt)

    def bsum(g_z):
        # column sums via BLAS; much faster than a strided reduction
        return ones[:g_z.shape[0]] @ g_z

    def lin(name, g_z, inp):
        W, b = params[name]
        gW, gb = grads[name]
        gW += g_z.T @ inp
        gb += bsum(g_z)
        return W

    def relu_back(g, h):
        return np.multiply(g, h > 0, out=g)

    g_feat = np.zeros((S, Wd), dtype=dt)

    if g_color is not None and c["with_color"]:
        head = "color" if arch.kind == "nerf" else "albedo"
        col = c["color"]
        g_o = np.asarray(g_color, dtype=dt).reshape(S, 3) * col * (1 - col)
        W = lin(f"{head}_out", g_o, c["hc"])
        g_z = relu_back(g_o @ W, c["hc"])
        W, b = params[f"{head}_hidden"]
        gW, gb = grads[f"{head}_hidden"]
        gW[:, :Wd] += g_z.T @ c["feat"]
        gb += bsum(g_z)
        if arch.color_sees_dirs:
            g_ray = g_z.reshape(R, N, -1).sum(axis=1)
            gW[:, Wd:] += g_ray.T @ d_enc
        g_feat += g_z @ W[:, :Wd]

    if c["with_sun"]:
        if g_sky is not None:
            sky = c["sky"]
            g_o = np.asarray(g_sky, dtype=dt) * sky * (1 - sky)
            W = lin("sky_out", g_o, c["sky_h"])
            g_z = relu_back(g_o @ W, c["sky_h"])
            lin("sky_hidden", g_z, sun_enc)
        if g_sun is not None:
            s = c["s"]
            g_o = (np.asarray(g_sun, dtype=dt).reshape(S) * s * (1 - s))[:, None]
            hs = c["sun_h"]
            W = lin("sun_out", g_o, hs[-1])
            g_h = g_o @ W
            for i in range(arch.sun_depth - 1, 0, -1):
                g_z = relu_back(g_h, hs[i])
                W = lin(f"sun{i}", g_z, hs[i - 1])
                g_h = g_z @ W
            g_z = relu_back(g_h, hs[0])
            W, b = params["sun0"]
            gW, gb = grads["sun0"]
            gW[:, :Wd] += g_z.T @ c["feat"]
            gb += bsum(g_z)
            g_ray = g_z.reshape(R, N, -1).sum(axis=1)
            gW[:, Wd:Wd + D] += g_ray.T @ sun_enc
            if arch.sun_sees_dirs:
                gW[:, Wd + D:] += g_ray.T @ d_enc
            g_feat += g_z @ W[:, :Wd]

    h = c["trunk_h"][-1]
    W = lin("feature", g_feat, h)
    g_h = g_feat @ W
    if g_sigma is not None:
        g_raw = (np.asarray(g_sigma, dtype=dt).reshape(S) * expit(c["sig_raw"]))[:, None]
        W = lin("sigma", g_raw, h)
        g_h += g_raw * W[0]   # outer product; BLAS is slow for rank one

    X = c["X"]
    g_X = np.zeros_like(X) if want_input_grad else None
    P = arch.pos_dim
    for i in range(arch.depth - 1, -1, -1):
        g_z = relu_back(g_h, c["trunk_h"][i])
        inp = c["trunk_in"][i]
        W, b = params[f"trunk{i}"]
        gW, gb = grads[f"trunk{i}"]
        gb += bsum(g_z)
        if i == arch.skip and i > 0:
            gW[:, :P] += g_z.T @ X
            gW[:, P:] += g_z.T @ inp
            if want_input_grad:
                g_X += g_z @ W[:, :P]
            g_h = g_z @ W[:, P:]
        elif i == 0:
            gW += g_z.T @ inp
            if want_input_grad:
                g_X += g_z @ W
        else:
            gW += g_z.T @ inp
            g_h = g_z @ W
    if want_input_grad:
        return grads, g_X.reshape(R, N, P)
    return grads
