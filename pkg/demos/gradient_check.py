"""Hand-written backprop vs central differences on a toy network.

Runs one training-loss evaluation for NeRF and for S-NeRF (with the solar
terms switched on) and compares every parameter gradient.

    python demos/gradient_check.py
"""
import tempfile

import numpy as np

from surfnerf import field as fnet
from surfnerf.synth import SynthSpec, fd_gradient, grad_rel_error, synth_scene
from surfnerf.trainer import Dataset, TrainConfig, compute_step

with tempfile.TemporaryDirectory() as tmp:
    m, _ = synth_scene(SynthSpec(image_size=16), tmp)
    ds = Dataset(m)

    for model in ("nerf", "snerf"):
        cfg = TrainConfig(model=model, depth=2, width=8, skip=1, color_width=8, sun_depth=1,
                          sun_width=8, sky_width=8, batch_size=3, n_coarse=8, n_fine=0,
                          lambda_s=1.0, solar_batch=3, precision="float64")
        p = fnet.init_params(cfg.arch, 1, dtype=np.float64)
        p.flat += np.random.default_rng(0).normal(0, 0.3, p.flat.size)
        grad, loss, _ = compute_step(p, ds, cfg, 0)

        f = lambda th: compute_step(fnet.ParameterSet(cfg.arch, th), ds, cfg, 0)[1].total
        num = fd_gradient(f, p.flat, 1e-5, dtype=np.longdouble)
        err = grad_rel_error(grad.flat, num)
        print(f"{model:5s}  {p.flat.size} params  loss {loss.total:.4f}  "
              f"max rel err {err.max():.1e}  median {np.median(err):.1e}")
