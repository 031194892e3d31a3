"""Joint color + depth optimisation of the radiance field with Adam."""

from __future__ import annotations

import json
import logging
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .field import DEFAULT_TRUNK, EncodingConfig, FieldParams, field_backward, field_forward, field_init, load_checkpoint, save_checkpoint
from .geometry import generate_rays, pixel_grid
from .renderer import composite, composite_backward
from .sampling import SamplingConfig, Strategy, sample_rays

log = logging.getLogger(__name__)


def sub_seed(seed: int, purpose: str) -> int:
    """Derive an independent seed for one consumer of randomness."""
    return zlib.crc32(f"{seed}:{purpose}".encode())


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 20000
    batch_rays: int = 1024
    lr: float = 5e-4
    lr_decay: float = 0.1  # lr reaches lr * lr_decay at the last iteration
    lambda_depth: float = 0.1
    acc_mask_threshold: float = 0.0
    seed: int = 0
    eval_every: int = 0
    ckpt_every: int = 0
    workers: int = 1
    trunk: tuple = DEFAULT_TRUNK
    L_pos: int = 6
    L_dir: int = 4

    def __post_init__(self):
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if self.batch_rays < 1:
            raise ValueError("batch_rays must be >= 1")
        if not self.lr > 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("need lr > 0 and 0 < lr_decay <= 1")
        if self.lambda_depth < 0:
            raise ValueError("lambda_depth must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def lr_at(self, step: int) -> float:
        if self.iters == 0:
            return self.lr
        return self.lr * self.lr_decay ** (step / self.iters)


# ---------------------------------------------------------------------------
# losses


def color_loss(pred, gt) -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    return float(np.mean((pred.astype(np.float64) - gt) ** 2))


def depth_loss(pred_depth, pred_acc, sensor_depth, valid_mask, acc_threshold=0.0) -> float:
    """Mean squared depth error over rays with valid sensor depth.

    ``sensor_depth`` is already converted to distance along the ray.
    """
    pred, sensor = np.asarray(pred_depth, dtype=np.float64), np.asarray(sensor_depth, dtype=np.float64)
    mask = np.asarray(valid_mask, dtype=bool)
    if acc_threshold > 0:
        mask = mask & (np.asarray(pred_acc) > acc_threshold)
    if pred.shape != sensor.shape or mask.shape != pred.shape:
        raise ValueError("depth arrays must share a shape")
    if not mask.any():
        return 0.0
    return float(np.mean((pred[mask] - sensor[mask]) ** 2))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: FieldParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like())

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.step, self.beta1, self.beta2, self.eps)

    def save(self, path) -> None:
        arrays = {f"m{i}": a for i, a in enumerate(self.m)} | {f"v{i}": a for i, a in enumerate(self.v)}
        np.savez(path, step=np.int64(self.step), **arrays)

    @classmethod
    def load(cls, path) -> "AdamState":
        with np.load(path) as z:
            n = sum(1 for k in z.files if k.startswith("m"))
            return cls([z[f"m{i}"] for i in range(n)], [z[f"v{i}"] for i in range(n)], int(z["step"]))


def adam_step(params: FieldParams, grads, state: AdamState, lr_t: float) -> None:
    """In-place bias-corrected Adam update of ``params`` and ``state``."""
    if len(grads) != len(params.arrays):
        raise ValueError("gradient list does not match parameters")
    for k, g in enumerate(grads):
        if g.shape != params.arrays[k].shape:
            raise ValueError(f"gradient {k} has shape {g.shape}, expected {params.arrays[k].shape}")
        if not np.isfinite(g).all():
            bad = int((~np.isfinite(g)).sum())
            raise FloatingPointError(f"non-finite gradient in parameter array {k} ({bad} entries) at step {state.step}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for p, g, m, v in zip(params.arrays, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (lr_t * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


# ---------------------------------------------------------------------------
# ray batches


@dataclass
class RayTable:
    """Flattened per-pixel ray data for every training frame."""

    origins: np.ndarray
    dirs: np.ndarray
    rgb: np.ndarray
    depth_t: np.ndarray  # sensor depth as ray distance, 0 where invalid
    error: np.ndarray | None
    frame: np.ndarray
    n_frames: int

    @classmethod
    def from_dataset(cls, dataset, split="train", error_maps=None) -> "RayTable":
        idx = dataset.indices(split)
        if not idx:
            raise ValueError(f"dataset has no {split!r} frames")
        parts = {k: [] for k in ("o", "d", "rgb", "depth", "err", "frame")}
        for k, i in enumerate(idx):
            f = dataset.frames[i]
            px, py = pixel_grid(f.camera)
            o, d, scale = generate_rays(f.camera, px, py)
            parts["o"].append(o.reshape(-1, 3))
            parts["d"].append(d.reshape(-1, 3))
            parts["rgb"].append(f.color.reshape(-1, 3))
            parts["depth"].append((f.depth * scale).reshape(-1))
            parts["frame"].append(np.full(f.depth.size, k))
            if error_maps is not None:
                parts["err"].append(np.asarray(error_maps[i].e).reshape(-1))
        cat = lambda key: np.concatenate(parts[key])  # noqa: E731
        return cls(cat("o"), cat("d"), cat("rgb"), cat("depth"), cat("err") if error_maps is not None else None, cat("frame"), len(idx))

    def __len__(self):
        return len(self.depth_t)


@dataclass
class RayBatch:
    origins: np.ndarray
    dirs: np.ndarray
    rgb: np.ndarray
    depth_t: np.ndarray
    error: np.ndarray | None
    valid: np.ndarray
    frame: np.ndarray

    def __len__(self):
        return len(self.valid)

    def shard(self, sl: slice) -> "RayBatch":
        return RayBatch(
            self.origins[sl], self.dirs[sl], self.rgb[sl], self.depth_t[sl],
            None if self.error is None else self.error[sl], self.valid[sl], self.frame[sl],
        )


def sample_ray_batch(table: RayTable, batch_rays: int, rng) -> RayBatch:
    """Uniform draw (with replacement) over all (frame, pixel) pairs."""
    sel = rng.integers(0, len(table), size=batch_rays)
    depth = table.depth_t[sel]
    return RayBatch(
        table.origins[sel], table.dirs[sel], table.rgb[sel], depth,
        None if table.error is None else table.error[sel], depth > 0, table.frame[sel],
    )


# ---------------------------------------------------------------------------
# one optimisation step


@dataclass
class LossBreakdown:
    iter: int
    loss_color: float
    loss_depth: float
    loss_total: float
    psnr_batch: float
    wall_ms: float


@dataclass
class PhaseTimes:
    sampling: float = 0.0
    field: float = 0.0
    composite: float = 0.0
    optimizer: float = 0.0

    def add(self, other: "PhaseTimes"):
        for k, v in asdict(other).items():
            setattr(self, k, getattr(self, k) + v)


def _shard_gradients(params, batch: RayBatch, t, far, n_total, n_valid, lambda_depth, acc_thr):
    """Loss sums and parameter gradients for one shard of rays."""
    times = PhaseTimes()
    dtype = params.dtype
    b, n = t.shape
    tic = time.perf_counter()
    o = batch.origins.astype(dtype)
    d = batch.dirs.astype(dtype)
    pts = o[:, None, :] + t[..., None] * d[:, None, :]
    out, cache = field_forward(params, pts, d)
    density, rgb = out.density.reshape(b, n), out.rgb.reshape(b, n, 3)
    times.field += time.perf_counter() - tic

    tic = time.perf_counter()
    res = composite(t, density, rgb, far)
    err_c = res.color - batch.rgb
    mask = batch.valid if acc_thr <= 0 else batch.valid & (res.acc > acc_thr)
    err_d = np.where(mask, res.depth - batch.depth_t, 0.0)
    sums = (float(np.sum(err_c.astype(np.float64) ** 2)), float(np.sum(err_d.astype(np.float64) ** 2)))
    d_color = (2.0 / (3 * n_total)) * err_c
    d_depth = (lambda_depth * 2.0 / max(n_valid, 1)) * err_d
    d_density, d_rgb = composite_backward(t, density, rgb, far, d_color.astype(dtype), d_depth.astype(dtype), np.zeros(b, dtype), res)
    times.composite += time.perf_counter() - tic

    tic = time.perf_counter()
    grads = field_backward(params, cache, d_density.reshape(-1), d_rgb.reshape(-1, 3))
    times.field += time.perf_counter() - tic
    return sums, grads, times


def loss_and_gradients(params, batch: RayBatch, t, far, lambda_depth, acc_mask_threshold=0.0):
    """Loss terms and exact gradients of ``loss_total`` for fixed sample distances.

    Returns ``(loss_total, loss_color, loss_depth, grads)``.
    """
    n_total = len(batch)
    n_valid = int(batch.valid.sum())
    (sse_c, sse_d), grads, _ = _shard_gradients(params, batch, t, far, n_total, n_valid, lambda_depth, acc_mask_threshold)
    loss_c = sse_c / (3 * n_total)
    loss_d = sse_d / n_valid if n_valid else 0.0
    return loss_c + lambda_depth * loss_d, loss_c, loss_d, grads


def train_step(params, adam: AdamState, batch: RayBatch, cfg: TrainConfig, scfg: SamplingConfig, rng, near, far, pool=None, iteration=None):
    """Sample, render, backpropagate and apply one Adam update.

    Returns ``(LossBreakdown, PhaseTimes)``.
    """
    start = time.perf_counter()
    times = PhaseTimes()
    tic = time.perf_counter()
    t, _ = sample_rays(near, far, batch.depth_t, batch.error, scfg, rng)
    t = t.astype(params.dtype)
    times.sampling += time.perf_counter() - tic

    n_total = len(batch)
    mask = batch.valid
    n_valid = int(mask.sum())
    workers = cfg.workers if pool is not None else 1
    bounds = np.linspace(0, n_total, workers + 1).astype(int)
    shards = [slice(bounds[k], bounds[k + 1]) for k in range(workers) if bounds[k + 1] > bounds[k]]

    def run(sl):
        return _shard_gradients(params, batch.shard(sl), t[sl], far, n_total, n_valid, cfg.lambda_depth, cfg.acc_mask_threshold)

    results = list(pool.map(run, shards)) if pool is not None and len(shards) > 1 else [run(s) for s in shards]

    # reduce in shard order so the sum does not depend on thread timing
    grads = results[0][1]
    sse_c, sse_d = results[0][0]
    times.add(results[0][2])
    for sums, g, tm in results[1:]:
        sse_c += sums[0]
        sse_d += sums[1]
        for a, b in zip(grads, g):
            a += b
        times.add(tm)

    step = adam.step if iteration is None else iteration
    tic = time.perf_counter()
    adam_step(params, grads, adam, cfg.lr_at(step))
    times.optimizer += time.perf_counter() - tic

    loss_c = sse_c / (3 * n_total)
    loss_d = sse_d / n_valid if n_valid else 0.0
    psnr_b = 99.0 if loss_c == 0 else min(99.0, -10 * math.log10(loss_c))
    wall = (time.perf_counter() - start) * 1000
    return LossBreakdown(step, loss_c, loss_d, loss_c + cfg.lambda_depth * loss_d, psnr_b, wall), times


# ---------------------------------------------------------------------------
# training loop


CHECKPOINT = "checkpoint.nrdf"
ADAM_STATE = "adam.npz"
PROGRESS = "progress.json"


@dataclass
class TrainResult:
    params: FieldParams
    adam: AdamState
    log: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    wall_s: float = 0.0
    phases: PhaseTimes = field(default_factory=PhaseTimes)
    network_evals: int = 0


def save_training_state(run_dir, params, adam, iteration):
    run_dir = Path(run_dir)
    save_checkpoint(run_dir / CHECKPOINT, params)
    adam.save(run_dir / ADAM_STATE)
    (run_dir / PROGRESS).write_text(json.dumps({"iter": iteration}) + "\n")


def load_training_state(run_dir):
    run_dir = Path(run_dir)
    params = load_checkpoint(run_dir / CHECKPOINT)
    adam = AdamState.load(run_dir / ADAM_STATE)
    it = json.loads((run_dir / PROGRESS).read_text())["iter"]
    return params, adam, it


def train(
    dataset,
    cfg: TrainConfig,
    scfg: SamplingConfig,
    run_dir=None,
    resume=False,
    eval_fn=None,
    params: FieldParams | None = None,
    stop_at: int | None = None,
) -> TrainResult:
    """Run ``cfg.iters`` steps (or up to ``stop_at``) of joint color+depth training.

    Args:
        run_dir: if given, receives the NDJSON step log, eval log, run
            header and checkpoints (every ``cfg.ckpt_every`` steps and at
            the end).
        resume: continue from the training state saved in ``run_dir``.
        eval_fn: ``eval_fn(params) -> dict`` called every ``cfg.eval_every``
            steps; its wall time is excluded from training time.
    """
    start_iter = 0
    if resume:
        params, adam, start_iter = load_training_state(run_dir)
    else:
        if params is None:
            params = field_init(cfg.trunk, EncodingConfig(cfg.L_pos, cfg.L_dir), sub_seed(cfg.seed, "init"))
        adam = AdamState.zeros_like(params)
    end = cfg.iters if stop_at is None else min(stop_at, cfg.iters)

    error_maps = None
    if scfg.strategy is Strategy.ADAPTIVE:
        if not dataset.error_maps:
            from .dataset import ensure_error_maps

            ensure_error_maps(dataset)
        error_maps = dataset.error_maps
    table = RayTable.from_dataset(dataset, "train", error_maps)

    result = TrainResult(params, adam)
    log_f = eval_f = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        mode = "a" if resume else "w"
        log_f = open(run_dir / "train_log.jsonl", mode)
        eval_f = open(run_dir / "eval_log.jsonl", mode)
        if not resume:
            header = {
                "train": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
                "sampling": {k: (v.value if isinstance(v, Strategy) else v) for k, v in asdict(scfg).items()},
                "adam": {"beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
                "lr_schedule": "lr * lr_decay ** (step / iters)",
                "n_params": params.num_params(),
                "workers": cfg.workers,
            }
            (run_dir / "run.json").write_text(json.dumps(header, indent=2) + "\n")

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    train_time = 0.0
    try:
        for it in range(start_iter, end):
            rng = np.random.default_rng([sub_seed(cfg.seed, "train"), it])
            tic = time.perf_counter()
            batch = sample_ray_batch(table, cfg.batch_rays, rng)
            lb, times = train_step(params, adam, batch, cfg, scfg, rng, dataset.near, dataset.far, pool, it)
            train_time += time.perf_counter() - tic
            result.phases.add(times)
            result.network_evals += cfg.batch_rays * scfg.n_samples
            result.log.append(lb)
            if log_f is not None:
                log_f.write(json.dumps(asdict(lb)) + "\n")
            done = it + 1
            if eval_fn is not None and cfg.eval_every and (done % cfg.eval_every == 0 or done == end):
                rec = {"iter": done, "train_s": train_time} | dict(eval_fn(params))
                result.evals.append(rec)
                if eval_f is not None:
                    eval_f.write(json.dumps(rec) + "\n")
                    eval_f.flush()
                log.info("iter %d: %s", done, rec)
            if run_dir is not None and cfg.ckpt_every and done % cfg.ckpt_every == 0:
                save_training_state(run_dir, params, adam, done)
        if run_dir is not None:
            save_training_state(run_dir, params, adam, end)
    except OSError as e:
        raise OSError(f"failed to write training state: {e}") from e
    finally:
        if pool is not None:
            pool.shutdown()
        for f in (log_f, eval_f):
            if f is not None:
                f.close()
    result.wall_s = train_time
    return result
