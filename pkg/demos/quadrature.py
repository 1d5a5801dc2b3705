"""Discrete compositing against the closed-form radiance of the box scene.

The synthetic scene is piecewise constant (boxes of fixed density and color in
empty air), so the volume rendering integral has an exact answer along any ray.
Stratified midpoints converge to it at first order in the sample spacing.

    python demos/quadrature.py
"""
import numpy as np

from surfnerf.geometry import clip_to_altitude, generate_rays, pixel_grid, points_along, \
    stratified_samples
from surfnerf.render import alpha_from_sigma, composite
from surfnerf.synth import SynthSpec, analytic_radiance, density_at, ray_box, view_entries

spec = SynthSpec()
e = view_entries(spec)[0]
u, v = pixel_grid(e.width, e.height)
o, d = generate_rays(e, u, v)

# keep rays that actually pass through a box
hit = np.zeros(len(o), bool)
for b in spec.boxes:
    t0, t1 = ray_box(o, d, b)
    hit |= t0 <= t1
o, d = o[hit][:200], d[hit][:200]
tn, tf = clip_to_altitude(o, d, spec.alt_min, spec.alt_max)
exact = np.array([analytic_radiance(spec, o[i], d[i], tn[i], tf[i]) for i in range(len(o))])

print(f"{len(o)} rays through the boxes")
print("   N   mean err    max err")
prev = None
for n in (16, 32, 64, 128, 256, 512, 1024):
    t, delta = stratified_samples(tn, tf, n)
    sigma, color = density_at(spec, points_along(o, d, t))
    out = composite(color, alpha_from_sigma(sigma, delta))
    err = np.abs(out.color - exact).max(axis=1)
    note = "" if prev is None else f"   ratio {err.mean() / prev:.2f}"
    print(f"{n:4d}  {err.mean():.2e}  {err.max():.2e}{note}")
    prev = err.mean()
    # weights plus leftover transmittance always account for the whole ray
    assert np.allclose(out.acc + out.T_final, 1.0)
