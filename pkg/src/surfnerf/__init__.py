"""Satellite NeRF / S-NeRF in plain numpy.

Modules: scene_io, augment, geometry, encoding, field, render, optim, trainer,
metrics, synth and cli.
"""
__version__ = "0.1.0"
