"""Command-line entry point: generate | train | render | eval | bench."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .dataset import DatasetError, ensure_error_maps, generate_dataset, load_dataset, orbit_cameras
from .field import load_checkpoint
from .imageio import PFMError, depth_to_gray, write_pfm, write_png
from .metrics import evaluate
from .plotting import bench_figure, curve_figure
from .renderer import render_image
from .sampling import Strategy
from .scene import get_scene
from .trainer import train

log = logging.getLogger("rgbdnerf")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

BENCH_NAMES = {
    Strategy.STRATIFIED: "Stratified",
    Strategy.GAUSSIAN: "Gaussian",
    Strategy.ADAPTIVE: "Adaptive",
    Strategy.GLOBAL: "NeRF",
}
BENCH_COLUMNS = ("strategy", "psnr", "ssim", "abs_rel", "wall_time", "network_evals")

SECTIONS = {
    "generate": ("paths", "dataset", "general"),
    "train": ("paths", "sampling", "train", "general"),
    "render": ("paths", "sampling", "render", "general"),
    "eval": ("paths", "sampling", "render", "general"),
    "bench": ("paths", "sampling", "train", "bench", "general"),
}


class UsageError(Exception):
    pass


def _add_flags(p: argparse.ArgumentParser, sections):
    for f in fields(RunConfig):
        if f.metadata["section"] not in sections:
            continue
        flag = "--" + f.name.replace("_", "-")
        help = f"{f.metadata['help']} [key: {f.name}; default: {f.default}]"
        kw = dict(dest=f.name, default=argparse.SUPPRESS, help=help)
        if f.type in ("bool", bool):
            p.add_argument(flag, action=argparse.BooleanOptionalAction, **kw)
        else:
            typ = {"int": int, "float": float}.get(f.type.split(" ")[0], str)
            p.add_argument(flag, type=typ, metavar=f.name.upper(), **kw)
    p.add_argument("--config", help="flat JSON file of configuration keys (below flags in precedence)")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgbdnerf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    docs = {
        "generate": "synthesize a procedural RGB-D dataset",
        "train": "train a radiance field with depth-guided sampling",
        "render": "render color, depth and depth visualisation images",
        "eval": "score held-out views (PSNR, SSIM, AbsRel)",
        "bench": "train and compare all sampling strategies",
    }
    for name, sections in SECTIONS.items():
        _add_flags(sub.add_parser(name, help=docs[name], description=docs[name]), sections)
    return parser


def resolve(args) -> RunConfig:
    skip = {"command", "config", "print_config", "verbose"}
    overrides = {k: v for k, v in vars(args).items() if k not in skip}
    try:
        return RunConfig.from_sources(args.config, overrides)
    except (ConfigError, TypeError) as e:
        raise UsageError(str(e)) from e


def _require(cfg, *keys):
    for k in keys:
        if getattr(cfg, k) is None:
            raise UsageError(f"--{k.replace('_', '-')} is required")


# ---------------------------------------------------------------------------


def cmd_generate(cfg: RunConfig) -> int:
    _require(cfg, "out")
    spec = cfg.scene
    if spec.endswith(".json"):
        try:
            spec = json.loads(Path(spec).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read scene file {cfg.scene}: {e}") from e
    try:
        scene = get_scene(spec, glossy=cfg.glossy)
    except (ValueError, KeyError) as e:
        raise UsageError(f"invalid scene: {e}") from e
    ds = generate_dataset(
        scene, cfg.train_views, cfg.test_views, cfg.radius, cfg.elevation, cfg.res, cfg.seed,
        cfg.out, cfg.fov, cfg.depth_noise, cfg.near, cfg.far,
    )
    print(f"manifest: {Path(cfg.out) / 'manifest.json'}")
    print(f"frames: {len(ds.frames)} ({len(ds.indices('train'))} train, {len(ds.indices('test'))} test)")
    return EXIT_OK


def _eval_fn(ds, scfg, workers):
    if not ds.indices("test"):
        return None

    def fn(params):
        r = evaluate(params, ds, "test", scfg, workers=workers)
        return {"psnr": r.psnr, "ssim": r.ssim, "abs_rel": r.abs_rel}

    return fn


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "dataset", "out")
    ds = load_dataset(cfg.dataset)
    scfg = cfg.sampling()
    if scfg.strategy is Strategy.ADAPTIVE:
        ensure_error_maps(ds, cfg.e_max_fill)
    tcfg = cfg.training()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    res = train(ds, tcfg, scfg, out, resume=cfg.resume, eval_fn=_eval_fn(ds, scfg, cfg.workers))
    if res.log:
        last = res.log[-1]
        print(f"final: loss_color={last.loss_color:.6f} loss_depth={last.loss_depth:.6f} "
              f"loss_total={last.loss_total:.6f} psnr_batch={last.psnr_batch:.2f}")
    if res.evals:
        print(f"held-out: {json.dumps(res.evals[-1])}")
    p = res.phases
    print(f"wall time: {res.wall_s:.1f} s (sampling {p.sampling:.1f}, field {p.field:.1f}, "
          f"composite {p.composite:.1f}, optimizer {p.optimizer:.1f}); network evals: {res.network_evals}")
    print(f"checkpoint: {out / 'checkpoint.nrdf'}")
    return EXIT_OK


def _load_params(cfg):
    _require(cfg, "checkpoint")
    return load_checkpoint(cfg.checkpoint)


def cmd_render(cfg: RunConfig) -> int:
    _require(cfg, "dataset", "out")
    params = _load_params(cfg)
    ds = load_dataset(cfg.dataset)
    scfg = cfg.sampling()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    if cfg.orbit:
        c0 = ds.frames[0].camera.position
        radius = float(np.linalg.norm(c0))
        elevation = math.degrees(math.asin(c0[1] / radius))
        for k, cam in enumerate(orbit_cameras(ds.intrinsics, cfg.orbit, radius, elevation)):
            jobs.append((f"orbit_{k:03d}", cam, None))
    else:
        indices = [cfg.view] if cfg.view is not None else ds.indices(cfg.split)
        for i in indices:
            if not 0 <= i < len(ds.frames):
                raise UsageError(f"--view {i} out of range (dataset has {len(ds.frames)} frames)")
        if scfg.strategy is Strategy.ADAPTIVE:
            ensure_error_maps(ds, cfg.e_max_fill)
        for i in indices:
            f = ds.frames[i]
            jobs.append((f"view_{i:03d}", f.camera, (f.depth, ds.error_maps.get(i))))
    for name, cam, depth_src in jobs:
        if depth_src is None and scfg.uses_depth:
            log.warning("%s has no sensor depth; every ray falls back to global sampling", name)
        color, depth, _ = render_image(params, cam, depth_src, scfg, ds.near, ds.far, cfg.workers)
        write_png(out / f"{name}.png", color)
        write_pfm(out / f"{name}_depth.pfm", depth)
        write_png(out / f"{name}_depth.png", depth_to_gray(depth, ds.near, ds.far))
    print(f"rendered {len(jobs)} view(s) to {out}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    _require(cfg, "dataset", "out")
    params = _load_params(cfg)
    ds = load_dataset(cfg.dataset)
    scfg = cfg.sampling()
    if scfg.strategy is Strategy.ADAPTIVE:
        ensure_error_maps(ds, cfg.e_max_fill)
    report = evaluate(params, ds, cfg.split, scfg, out_dir=cfg.out, workers=cfg.workers)
    paths = report.write(cfg.out)
    print(f"psnr={report.psnr:.3f} ssim={report.ssim:.4f} abs_rel={report.abs_rel:.5f} lpips=n/a")
    print(f"report: {paths[0]} {paths[1]}")
    return EXIT_OK


def run_bench(ds, cfg: RunConfig, out: Path):
    """Train every requested strategy under one budget; returns result rows."""
    rows, curves = [], {}
    tcfg = cfg.training()
    for name in cfg.strategies.split(","):
        strategy = Strategy.parse(name.strip())
        label = BENCH_NAMES[strategy]
        n = cfg.baseline_samples if strategy is Strategy.GLOBAL and cfg.baseline_samples else cfg.n_samples
        row = {"strategy": label, "n_samples": n}
        try:
            scfg = cfg.sampling(strategy, n)
            if strategy is Strategy.ADAPTIVE:
                ensure_error_maps(ds, cfg.e_max_fill)
            res = train(ds, tcfg, scfg, out / label.lower(), eval_fn=_eval_fn(ds, scfg, cfg.workers))
            report = evaluate(res.params, ds, "test", scfg, out_dir=out / label.lower() / "eval", workers=cfg.workers)
            report.write(out / label.lower() / "eval")
            row.update(psnr=report.psnr, ssim=report.ssim, abs_rel=report.abs_rel,
                       wall_time=res.wall_s, network_evals=res.network_evals)
            curves[label] = res.evals
        except Exception as e:  # one failed row must not sink the others
            log.exception("bench row %s failed", label)
            row.update(psnr=None, ssim=None, abs_rel=None, wall_time=None, network_evals=None, error=str(e))
        rows.append(row)
    return rows, curves


def cmd_bench(cfg: RunConfig) -> int:
    _require(cfg, "dataset", "out")
    ds = load_dataset(cfg.dataset)
    if not ds.indices("test"):
        raise UsageError("bench needs a dataset with test views")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, curves = run_bench(ds, cfg, out)
    with open(out / "bench.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow(["" if r.get(c) is None else r[c] for c in BENCH_COLUMNS])
    (out / "bench.json").write_text(json.dumps({"config": cfg.to_dict(), "rows": rows, "curves": curves}, indent=2) + "\n")
    bench_figure(rows, out / "bench.png")
    if any(curves.values()):
        curve_figure(curves, out / "psnr_vs_time.png")
    for r in rows:
        if r.get("error"):
            print(f"{r['strategy']:>10}: FAILED ({r['error']})")
        else:
            print(f"{r['strategy']:>10}: psnr={r['psnr']:.2f} ssim={r['ssim']:.3f} abs_rel={r['abs_rel']:.4f} "
                  f"time={r['wall_time']:.1f}s evals={r['network_evals']}")
    print(f"table: {out / 'bench.csv'}")
    return EXIT_RUNTIME if any(r.get("error") for r in rows) else EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "render": cmd_render, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on malformed flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        if args.print_config:
            print(json.dumps(cfg.to_dict(), indent=2))
            return EXIT_OK
        return COMMANDS[args.command](cfg)
    except UsageError as e:
        print(f"rgbdnerf {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, DatasetError, PFMError, FloatingPointError) as e:
        print(f"rgbdnerf {args.command}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
