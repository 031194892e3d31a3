"""Image and depth quality metrics, and per-split evaluation reports."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

PSNR_CAP = 99.0


def psnr(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(mse))


def _gaussian_kernel(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_valid(img, k):
    # separable correlation, 'valid' region only
    n = len(k)
    h, w = img.shape
    rows = sum(k[i] * img[:, i : w - n + 1 + i] for i in range(n))
    return sum(k[i] * rows[i : h - n + 1 + i, :] for i in range(n))


def ssim(pred, gt, win=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0) -> float:
    """Single-scale SSIM with a Gaussian window, averaged over channels."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if pred.shape[0] < win or pred.shape[1] < win:
        raise ValueError(f"image must be at least {win}x{win} for SSIM")
    if pred.ndim == 2:
        pred, gt = pred[..., None], gt[..., None]
    k = _gaussian_kernel(win, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for c in range(pred.shape[2]):
        x, y = pred[..., c], gt[..., c]
        mx, my = _filter_valid(x, k), _filter_valid(y, k)
        sxx = _filter_valid(x * x, k) - mx * mx
        syy = _filter_valid(y * y, k) - my * my
        sxy = _filter_valid(x * y, k) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def abs_rel(pred_depth, gt_depth) -> float:
    pred, gt = np.asarray(pred_depth, dtype=np.float64), np.asarray(gt_depth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    valid = gt > 0
    if not valid.any():
        raise ValueError("abs_rel needs at least one pixel with valid ground-truth depth")
    return float(np.mean(np.abs(pred[valid] - gt[valid]) / gt[valid]))


@dataclass
class ViewMetrics:
    view: int
    psnr: float
    ssim: float
    abs_rel: float
    valid_depth: int


@dataclass
class EvalReport:
    split: str
    views: list = field(default_factory=list)
    wall_s: float = 0.0

    def mean(self, key) -> float:
        return float(np.mean([getattr(v, key) for v in self.views]))

    @property
    def psnr(self):
        return self.mean("psnr")

    @property
    def ssim(self):
        return self.mean("ssim")

    @property
    def abs_rel(self):
        return self.mean("abs_rel")

    def to_dict(self):
        return {
            "split": self.split,
            "views": [asdict(v) for v in self.views],
            "mean": {"psnr": self.psnr, "ssim": self.ssim, "abs_rel": self.abs_rel, "lpips": "n/a"},
            "valid_depth_pixels": int(sum(v.valid_depth for v in self.views)),
            "wall_s": self.wall_s,
        }

    def write(self, out_dir, stem="report"):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        with open(out / f"{stem}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["view", "psnr", "ssim", "abs_rel"])
            for v in self.views:
                w.writerow([v.view, f"{v.psnr:.6f}", f"{v.ssim:.6f}", f"{v.abs_rel:.6f}"])
            w.writerow(["mean", f"{self.psnr:.6f}", f"{self.ssim:.6f}", f"{self.abs_rel:.6f}"])
        return out / f"{stem}.json", out / f"{stem}.csv"


def evaluate(params, dataset, split="test", cfg=None, out_dir=None, render_fn=None, workers=1) -> EvalReport:
    """Render every view of ``split`` and score it against ground truth.

    ``render_fn(frame_index) -> (color, z_depth, acc)`` overrides the default
    depth-guided renderer (used e.g. to score ground truth against itself).
    With ``out_dir`` set, predictions and a comparison figure are written.
    """
    from .imageio import depth_to_gray, write_pfm, write_png
    from .renderer import render_image
    from .sampling import Strategy

    idx = dataset.indices(split)
    if not idx:
        raise ValueError(f"split {split!r} has no views")
    if render_fn is None:
        if cfg is not None and cfg.strategy is Strategy.ADAPTIVE and not all(i in dataset.error_maps for i in idx):
            from .dataset import ensure_error_maps

            ensure_error_maps(dataset)

        def render_fn(i):
            f = dataset.frames[i]
            return render_image(params, f.camera, (f.depth, dataset.error_maps.get(i)), cfg, dataset.near, dataset.far, workers)

    t0 = time.perf_counter()
    report = EvalReport(split)
    panels = []
    for k, i in enumerate(idx):
        f = dataset.frames[i]
        color, depth, _ = render_fn(i)
        report.views.append(ViewMetrics(i, psnr(color, f.color), ssim(color, f.color), abs_rel(depth, f.depth), int((f.depth > 0).sum())))
        panels.append((f, color, depth))
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_png(out / f"{split}_{k:03d}_pred.png", color)
            write_pfm(out / f"{split}_{k:03d}_depth.pfm", depth)
            write_png(out / f"{split}_{k:03d}_depth.png", depth_to_gray(depth, dataset.near, dataset.far))
    report.wall_s = time.perf_counter() - t0
    if out_dir is not None:
        from .plotting import comparison_figure

        comparison_figure(panels, dataset.near, dataset.far, Path(out_dir) / f"{split}_comparison.png")
    return report
