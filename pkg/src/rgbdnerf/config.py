"""Flat run configuration: defaults < JSON config file < command-line flags."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .field import EncodingConfig
from .sampling import SamplingConfig, Strategy
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _opt(default, help, section):
    from dataclasses import field

    return field(default=default, metadata={"help": help, "section": section})


@dataclass
class RunConfig:
    # paths
    dataset: str | None = _opt(None, "dataset directory (holds manifest.json)", "paths")
    out: str | None = _opt(None, "output directory", "paths")
    checkpoint: str | None = _opt(None, "field checkpoint (.nrdf) to load", "paths")
    # dataset generation
    scene: str = _opt("cube", "built-in scene name (cube, spheres) or path to a scene JSON file", "dataset")
    train_views: int = _opt(8, "number of training views", "dataset")
    test_views: int = _opt(4, "number of held-out views", "dataset")
    res: int = _opt(100, "image width and height in pixels", "dataset")
    radius: float = _opt(3.0, "camera orbit radius", "dataset")
    elevation: float = _opt(30.0, "camera elevation in degrees", "dataset")
    fov: float = _opt(50.0, "horizontal field of view in degrees", "dataset")
    depth_noise: float = _opt(0.0, "std-dev of Gaussian noise added to training depth", "dataset")
    glossy: bool = _opt(False, "add a Phong highlight so color depends on view direction", "dataset")
    near: float = _opt(0.5, "near scene bound (ray distance)", "dataset")
    far: float = _opt(6.0, "far scene bound (ray distance)", "dataset")
    # sampling
    strategy: str = _opt("gaussian", "ray sampling: global, stratified, gaussian, adaptive", "sampling")
    n_samples: int = _opt(16, "samples per ray", "sampling")
    delta: float = _opt(0.15, "half-width of the stratified-local window", "sampling")
    sigma: float = _opt(0.05, "std-dev of Gaussian sampling", "sampling")
    sigma_min: float = _opt(0.01, "adaptive: smallest std-dev", "sampling")
    sigma_max: float = _opt(0.5, "adaptive: largest std-dev", "sampling")
    k_error: float = _opt(1.0, "adaptive: std-dev gain per unit depth error", "sampling")
    e_max_fill: float = _opt(0.5, "depth error assigned where no other view sees the pixel", "sampling")
    # training
    iters: int = _opt(20000, "training iterations", "train")
    batch_rays: int = _opt(1024, "rays per iteration", "train")
    lr: float = _opt(5e-4, "initial learning rate", "train")
    lr_decay: float = _opt(0.1, "learning-rate factor reached at the last iteration", "train")
    lambda_depth: float = _opt(0.1, "depth-loss weight", "train")
    eval_every: int = _opt(0, "evaluate held-out views every N iterations (0 = off)", "train")
    ckpt_every: int = _opt(1000, "checkpoint every N iterations (0 = only at the end)", "train")
    resume: bool = _opt(False, "resume from the training state in --out", "train")
    trunk_width: int = _opt(128, "hidden units per trunk layer", "train")
    trunk_depth: int = _opt(4, "number of trunk layers", "train")
    L_pos: int = _opt(6, "positional-encoding octaves for positions", "train")
    L_dir: int = _opt(4, "positional-encoding octaves for view directions", "train")
    # render / eval
    view: int | None = _opt(None, "dataset frame index to render", "render")
    orbit: int = _opt(0, "render N poses at even azimuths on the dataset orbit", "render")
    split: str = _opt("test", "dataset split to evaluate or render", "render")
    # bench
    strategies: str = _opt("stratified,gaussian,adaptive,global", "comma-separated strategies for bench", "bench")
    baseline_samples: int | None = _opt(None, "samples per ray for the global baseline (default: n_samples)", "bench")
    # general
    seed: int = _opt(0, "master random seed", "general")
    workers: int = _opt(1, "worker threads for training shards and rendering", "general")

    # ------------------------------------------------------------------

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_sources(cls, config_file=None, overrides=None) -> "RunConfig":
        values = {}
        if config_file is not None:
            try:
                data = json.loads(Path(config_file).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read config file {config_file}: {e}") from e
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a flat JSON object")
            unknown = set(data) - set(cls.keys())
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            values.update(data)
        values.update(overrides or {})
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def sampling(self, strategy=None, n_samples=None) -> SamplingConfig:
        return SamplingConfig(
            Strategy.parse(strategy or self.strategy),
            n_samples or self.n_samples,
            self.delta,
            self.sigma,
            self.sigma_min,
            self.sigma_max,
            self.k_error,
        )

    def training(self) -> TrainConfig:
        return TrainConfig(
            iters=self.iters,
            batch_rays=self.batch_rays,
            lr=self.lr,
            lr_decay=self.lr_decay,
            lambda_depth=self.lambda_depth,
            seed=self.seed,
            eval_every=self.eval_every,
            ckpt_every=self.ckpt_every,
            workers=self.workers,
            trunk=(self.trunk_width,) * self.trunk_depth,
            L_pos=self.L_pos,
            L_dir=self.L_dir,
        )

    def validate(self) -> None:
        """Check every key against its owning module before any work starts."""
        try:
            self.sampling()
            self.training()
            EncodingConfig(self.L_pos, self.L_dir)
            for s in self.strategies.split(","):
                Strategy.parse(s.strip())
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from e
        checks = [
            (self.train_views >= 1, "train_views must be >= 1"),
            (self.test_views >= 0, "test_views must be >= 0"),
            (self.res >= 2, "res must be >= 2"),
            (0 < self.fov < 180, "fov must lie in (0, 180) degrees"),
            (self.depth_noise >= 0, "depth_noise must be >= 0"),
            (0 < self.near < self.far, "need 0 < near < far"),
            (self.radius > self.near, "radius must exceed near"),
            (self.e_max_fill >= 0, "e_max_fill must be >= 0"),
            (self.orbit >= 0, "orbit must be >= 0"),
            (self.trunk_width >= 1 and self.trunk_depth >= 1, "trunk must have >= 1 layer of >= 1 unit"),
            (self.split in ("train", "test"), "split must be 'train' or 'test'"),
            (self.baseline_samples is None or self.baseline_samples >= 2, "baseline_samples must be >= 2"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.keys()}
