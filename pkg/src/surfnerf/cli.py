"""Command line entry point: ``surfnerf <train|render|depth|eval|augment|synth>``.

Exit status is 0 on success, 2 for bad configuration or flags and 1 for
missing or malformed data.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import field as fnet
from .augment import augment_manifest
from .metrics import EvalReport, altitude_mae, psnr, ssim
from .scene_io import (DsmGrid, FormatError, ManifestError, load_checkpoint, load_dsm,
                       load_image, load_manifest, read_png, save_dsm, write_png)
from .synth import SynthSpec, synth_scene
from .trainer import Bounds, TrainConfig, render_depth_grid, render_view, train

log = logging.getLogger("surfnerf")


class ConfigError(Exception):
    pass


# flag name -> TrainConfig field
_OVERRIDES = {"seed": "seed", "iterations": "iterations", "model": "model",
              "lambda_s": "lambda_s", "batching": "batching", "l_pos": "L_pos",
              "l_dir": "L_dir"}


def train_config(args):
    """Config file (if any) with command line flags layered on top."""
    d = {}
    if getattr(args, "config", None):
        p = Path(args.config)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        d = json.loads(p.read_text())
        if not isinstance(d, dict):
            raise ConfigError(f"{p}: expected a JSON object")
    for flag, key in _OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    if getattr(args, "no_viewdirs", False):
        d["use_viewdirs"] = False
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def _checkpoint_path(p):
    p = Path(p)
    if p.is_dir():
        p = p / "checkpoints" / "final.snrf"
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return p


def load_model(path):
    """``(params, cfg, bounds)`` from a checkpoint file or run directory."""
    p = _checkpoint_path(path)
    params, _, _, extra = load_checkpoint(p)
    if "config" not in extra or "bounds" not in extra:
        raise FormatError(f"{p}: checkpoint lacks config/bounds metadata")
    cfg = TrainConfig.from_dict(extra["config"])
    if fnet.ParameterSet(cfg.arch).flat.size != params.flat.size:
        raise FormatError(f"{p}: stored config does not match the stored architecture")
    return params, cfg, Bounds.from_json(extra["bounds"])


def _select(manifest, views):
    if views == "test":
        return manifest.test
    if views == "train":
        return manifest.train
    if views == "all":
        return manifest.images
    names = set(views.split(","))
    picked = [e for e in manifest.images if e.file in names]
    missing = names - {e.file for e in picked}
    if missing:
        raise ManifestError("views", f"not in manifest: {sorted(missing)}")
    return picked


def depth_png(alt, alt_min, alt_max):
    """Fixed gray ramp: alt_min -> 0, alt_max -> 255."""
    g = (np.asarray(alt, dtype=float) - alt_min) / (alt_max - alt_min)
    return np.clip(g, 0.0, 1.0)


def _grid_for(args, manifest, bounds):
    if args.grid:
        ref = load_dsm(args.grid)
        return replace(ref, values=np.zeros_like(ref.values))
    ref = manifest.root / "dsm.dsm" if manifest.root else None
    if ref is not None and ref.exists():
        g = load_dsm(ref)
        return replace(g, values=np.zeros_like(g.values))
    # cover the training volume footprint
    lo = bounds.center[:2] - bounds.half[:2]
    hi = bounds.center[:2] + bounds.half[:2]
    cs = args.cell_size
    n = np.maximum(1, np.ceil((hi - lo) / cs)).astype(int)
    return DsmGrid(int(n[0]), int(n[1]), cs, float(lo[0]), float(lo[1]),
                   np.zeros((n[1], n[0]), np.float32))


# --- subcommands -------------------------------------------------------------

def cmd_train(args):
    cfg = train_config(args)
    manifest = load_manifest(args.scene)
    out = Path(args.out)
    train(manifest, cfg, run_dir=out)
    print(f"trained {cfg.iterations} iterations -> {out}")
    return 0


def cmd_render(args):
    params, cfg, bounds = load_model(args.checkpoint)
    manifest = load_manifest(args.scene)
    out = Path(args.out)
    (out / "renders").mkdir(parents=True, exist_ok=True)
    for e in _select(manifest, args.views):
        r = render_view(params, e, cfg, bounds, manifest)
        stem = Path(e.file).stem
        write_png(out / "renders" / f"{stem}.png", r["image"])
        if "sun" in r:
            write_png(out / "renders" / f"{stem}_sun.png", r["sun"])
            write_png(out / "renders" / f"{stem}_albedo.png", r["albedo"])
        print(out / "renders" / f"{stem}.png")
    return 0


def cmd_depth(args):
    params, cfg, bounds = load_model(args.checkpoint)
    manifest = load_manifest(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = _grid_for(args, manifest, bounds)
    alt, empty = render_depth_grid(params, grid, cfg, bounds, manifest)
    vals = np.where(empty, grid.nodata, alt).astype(np.float32)
    save_dsm(replace(grid, values=vals), out / "depth.dsm")
    # north up in the picture: row 0 of the grid is the south edge
    write_png(out / "depth.png", depth_png(alt, manifest.alt_min, manifest.alt_max)[::-1])
    print(out / "depth.dsm")
    return 0


def _eval_pairs(args):
    rep = EvalReport()
    for pred, gt in zip(args.pred, args.gt):
        a, b = read_png(pred), read_png(gt)
        if a.shape != b.shape:
            raise FormatError(f"{pred}: shape {a.shape} differs from {gt}: {b.shape}")
        name = Path(pred).name
        rep.psnr[name] = psnr(a, b)
        rep.ssim[name] = ssim(a, b)
        rep.files[name] = str(Path(pred).resolve())
    return rep


def cmd_eval(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.pred or args.gt:
        if len(args.pred) != len(args.gt):
            raise ConfigError("--pred and --gt need the same number of images")
        rep = _eval_pairs(args)
    else:
        if not (args.checkpoint and args.scene):
            raise ConfigError("eval needs --checkpoint and --scene, or --pred/--gt pairs")
        params, cfg, bounds = load_model(args.checkpoint)
        manifest = load_manifest(args.scene)
        rep = EvalReport()
        (out / "renders").mkdir(exist_ok=True)
        for e in _select(manifest, args.views):
            img = render_view(params, e, cfg, bounds, manifest)["image"]
            gt = load_image(e)
            rep.psnr[e.file] = psnr(img, gt)
            rep.ssim[e.file] = ssim(img, gt)
            p = out / "renders" / Path(e.file).name
            write_png(p, img)
            rep.files[e.file] = str(p.resolve())
        dsm_path = Path(args.dsm) if args.dsm else (manifest.root / "dsm.dsm")
        if args.dsm and not dsm_path.exists():
            raise FileNotFoundError(f"DSM not found: {dsm_path}")
        if dsm_path.exists():
            ref = load_dsm(dsm_path)
            alt, empty = render_depth_grid(params, ref, cfg, bounds, manifest)
            mae, used, excl = altitude_mae(alt, ref, empty)
            rep.depth_mae, rep.dsm_cells_used, rep.dsm_cells_excluded = mae, used, excl
            rep.files["dsm"] = str(dsm_path.resolve())
    (out / "report.json").write_text(json.dumps(rep.to_json(), indent=1))
    for k, v in rep.psnr.items():
        print(f"{k}: psnr {v:.3f} ssim {rep.ssim[k]:.4f}")
    if rep.depth_mae is not None:
        print(f"depth MAE {rep.depth_mae:.3f} m over {rep.dsm_cells_used} cells")
    return 0


def cmd_augment(args):
    if args.zoom < 1:
        raise ConfigError("--zoom must be >= 1")
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    m = augment_manifest(load_manifest(args.scene), args.out, args.zoom, args.count,
                         args.blur_sigma)
    print(f"{sum(e.augmented for e in m.images)} augmented images -> {args.out}")
    return 0


def cmd_synth(args):
    spec = SynthSpec()
    if args.config:
        p = Path(args.config)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            spec = SynthSpec.from_json(p)
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(f"{p}: {e}") from e
    synth_scene(spec, args.out)
    print(Path(args.out) / "scene.json")
    return 0


# --- parser --------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="surfnerf", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a NeRF or S-NeRF on a scene")
    t.add_argument("--scene", required=True, help="scene.json")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--config", help="JSON training config; flags override it")
    t.add_argument("--seed", type=int)
    t.add_argument("--iterations", type=int)
    t.add_argument("--model", choices=fnet.KINDS)
    t.add_argument("--lambda-s", type=float, dest="lambda_s", help="solar correction weight")
    t.add_argument("--batching", choices=("all_random", "per_image"))
    t.add_argument("--no-viewdirs", action="store_true", help="drop view direction inputs")
    t.add_argument("--l-pos", type=int, dest="l_pos", help="position frequencies")
    t.add_argument("--l-dir", type=int, dest="l_dir", help="direction frequencies")
    t.set_defaults(fn=cmd_train)

    def model_args(p):
        p.add_argument("--checkpoint", help="checkpoint file or run directory")
        p.add_argument("--scene", help="scene.json")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="accepted for symmetry; rendering is deterministic")

    r = sub.add_parser("render", help="render views of a trained model")
    model_args(r)
    r.add_argument("--views", default="test", help="test, train, all or comma separated file names")
    r.set_defaults(fn=cmd_render)

    d = sub.add_parser("depth", help="top-down altitude map as .dsm and PNG")
    model_args(d)
    d.add_argument("--grid", help="DSM whose grid geometry to use (default: the scene's dsm.dsm)")
    d.add_argument("--cell-size", type=float, default=1.0, dest="cell_size",
                   help="cell size when no reference grid exists")
    d.set_defaults(fn=cmd_depth)

    e = sub.add_parser("eval", help="PSNR/SSIM and depth MAE into report.json")
    model_args(e)
    e.add_argument("--views", default="test", help="test, train, all or comma separated file names")
    e.add_argument("--dsm", help="reference DSM (default: the scene's dsm.dsm if present)")
    e.add_argument("--pred", nargs="*", default=[], help="predicted PNGs, paired with --gt")
    e.add_argument("--gt", nargs="*", default=[], help="ground-truth PNGs")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("augment", help="add zoomed copies of the training images")
    a.add_argument("--scene", required=True, help="scene.json")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--zoom", type=float, default=2.0, help="largest zoom factor")
    a.add_argument("--count", type=int, default=1, help="zoom levels per image")
    a.add_argument("--blur-sigma", type=float, default=0.0, dest="blur_sigma")
    a.add_argument("--seed", type=int, help="accepted for symmetry; augmentation is deterministic")
    a.set_defaults(fn=cmd_augment)

    s = sub.add_parser("synth", help="write the synthetic box scene")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--spec", "--config", dest="config", help="JSON scene spec")
    s.add_argument("--seed", type=int, help="accepted for symmetry; the scene is deterministic")
    s.set_defaults(fn=cmd_synth)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"surfnerf {args.command}: config error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ManifestError, FormatError) as e:
        print(f"surfnerf {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
