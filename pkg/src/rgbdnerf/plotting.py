"""Matplotlib figures written next to the CSV/JSON reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .imageio import depth_to_gray  # noqa: E402

STRATEGY_COLORS = {"Stratified": "#4c72b0", "Gaussian": "#dd8452", "Adaptive": "#55a868", "NeRF": "#c44e52"}


def comparison_figure(panels, near, far, path, max_rows=4):
    """Ground truth vs prediction, color and depth, one row per view."""
    panels = panels[:max_rows]
    fig, axes = plt.subplots(len(panels), 4, figsize=(8, 2.1 * len(panels)), squeeze=False)
    titles = ("GT image", "predicted image", "GT depth", "predicted depth")
    for r, (frame, color, depth) in enumerate(panels):
        imgs = (
            frame.color,
            np.clip(color, 0, 1),
            depth_to_gray(frame.depth, near, far),
            depth_to_gray(depth, near, far),
        )
        for c, img in enumerate(imgs):
            ax = axes[r, c]
            ax.imshow(img, cmap="gray" if img.ndim == 2 else None, vmin=0, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(titles[c], fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def bench_figure(rows, path):
    """Bar charts of PSNR, AbsRel and training time per strategy."""
    ok = [r for r in rows if r.get("psnr") is not None]
    if not ok:
        return
    names = [r["strategy"] for r in ok]
    colors = [STRATEGY_COLORS.get(n, "gray") for n in names]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    for ax, key, label in zip(axes, ("psnr", "abs_rel", "wall_time"), ("PSNR [dB]", "AbsRel", "train time [s]")):
        ax.bar(names, [r[key] for r in ok], color=colors)
        ax.set_ylabel(label)
        ax.tick_params(axis="x", labelrotation=30)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def curve_figure(curves, path, key="psnr"):
    """Held-out metric against training wall time, one line per run."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name, evals in curves.items():
        if evals:
            ax.plot([e["train_s"] for e in evals], [e[key] for e in evals], marker="o", ms=3, label=name,
                    color=STRATEGY_COLORS.get(name))
    ax.set_xlabel("training time [s]")
    ax.set_ylabel(key)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
