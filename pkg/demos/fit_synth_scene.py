"""Fit NeRF and S-NeRF to the synthetic box scene and look at what they learned.

Small networks and a few thousand iterations, so this finishes in minutes on a
laptop core. Writes renders, sun maps and a top-down depth map to ``--out``.

    python demos/fit_synth_scene.py --iterations 2000 --out /tmp/fit
"""
import argparse
from pathlib import Path

import numpy as np

from surfnerf.metrics import altitude_mae, psnr
from surfnerf.scene_io import load_dsm, load_image, write_png
from surfnerf.synth import SynthSpec, render_view as oracle_view, synth_scene
from surfnerf.trainer import Dataset, TrainConfig, render_depth_grid, render_view, train

ap = argparse.ArgumentParser()
ap.add_argument("--iterations", type=int, default=2000)
ap.add_argument("--out", default="fit_out")
args = ap.parse_args()
out = Path(args.out)

spec = SynthSpec()
manifest, _ = synth_scene(spec, out / "scene")
dsm = load_dsm(out / "scene" / "dsm.dsm")
ds = Dataset(manifest)
small = dict(depth=4, width=32, skip=2, color_width=32, sun_depth=3, sun_width=32, sky_width=32,
             batch_size=1024, n_coarse=32, n_fine=32, lr=1e-3, iterations=args.iterations)

for model in ("nerf", "snerf"):
    cfg = TrainConfig(model=model, **small)
    params, _, rows = train(manifest, cfg, run_dir=out / model, dataset=ds)
    print(f"\n{model}: final train loss {rows[-1][1]:.4f}")

    for e in manifest.test:
        r = render_view(params, e, cfg, ds.bounds, manifest)
        stem = e.file[:-4]
        write_png(out / model / f"{stem}.png", np.clip(r["image"], 0, 1))
        print(f"  {e.file}: PSNR {psnr(r['image'], load_image(e)):.2f} dB")
        if model == "snerf":
            truth = oracle_view(spec, e)
            ground = truth["label"] == 0
            agree = np.mean((r["sun"] >= 0.5)[ground] == (truth["sun"] >= 0.5)[ground])
            print(f"  {e.file}: sun map agrees with the true shadows on {agree:.1%} of ground")
            write_png(out / model / f"{stem}_sun.png", r["sun"])
            write_png(out / model / f"{stem}_albedo.png", np.clip(r["albedo"], 0, 1))

    alt, empty = render_depth_grid(params, dsm, cfg, ds.bounds, manifest)
    mae, used, _ = altitude_mae(alt, dsm, empty)
    print(f"  top-down altitude MAE {mae:.2f} m over {used} cells")
    lo, hi = manifest.alt_min, manifest.alt_max
    write_png(out / model / "depth.png", np.clip((alt - lo) / (hi - lo), 0, 1))
