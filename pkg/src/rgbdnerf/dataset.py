"""RGB-D datasets: procedural generation, manifest I/O and error-map caching."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Camera, CameraIntrinsics, Pose, look_at
from .imageio import read_pfm, read_png, write_pfm, write_png
from .sampling import DepthErrorMap, compute_depth_error_maps
from .scene import SceneSpec, render_ground_truth

MANIFEST = "manifest.json"


class DatasetError(ValueError):
    pass


@dataclass
class RgbdFrame:
    color: np.ndarray
    depth: np.ndarray
    camera: Camera
    split: str = "train"

    def __post_init__(self):
        h, w = self.camera.height, self.camera.width
        if self.color.shape != (h, w, 3) or self.depth.shape != (h, w):
            raise DatasetError(
                f"frame arrays {self.color.shape}/{self.depth.shape} do not match camera {w}x{h}"
            )
        if not (np.isfinite(self.depth).all() and (self.depth >= 0).all()):
            raise DatasetError("depth must be finite and non-negative")


@dataclass
class RgbdDataset:
    frames: list
    near: float = 0.5
    far: float = 6.0
    root: Path | None = None
    error_maps: dict = field(default_factory=dict)  # frame index -> DepthErrorMap

    def __post_init__(self):
        if not self.near < self.far:
            raise DatasetError("need near < far")

    def indices(self, split: str) -> list:
        return [i for i, f in enumerate(self.frames) if f.split == split]

    def split(self, name: str) -> list:
        return [self.frames[i] for i in self.indices(name)]

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.frames[0].camera.intrinsics


# ---------------------------------------------------------------------------
# generation


def orbit_cameras(intr: CameraIntrinsics, n: int, radius: float, elevation_deg: float, offset_deg: float = 0.0):
    """Cameras on a circle at fixed elevation, evenly spaced azimuths, all
    looking at the origin with +Y up."""
    el = math.radians(elevation_deg)
    cams = []
    for k in range(n):
        az = math.radians(offset_deg + 360.0 * k / n)
        pos = radius * np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
        cams.append(Camera(intr, look_at(pos)))
    return cams


def generate_dataset(
    scene: SceneSpec,
    n_train: int = 8,
    n_test: int = 4,
    radius: float = 3.0,
    elevation_deg: float = 30.0,
    resolution: int = 100,
    seed: int = 0,
    out_dir=None,
    fov_deg: float = 50.0,
    depth_noise: float = 0.0,
    near: float = 0.5,
    far: float = 6.0,
) -> RgbdDataset:
    """Render train/test RGB-D views of ``scene`` and optionally save them.

    Test cameras sit at azimuths offset from the training ring. Gaussian
    noise of std ``depth_noise`` is added to foreground depth of training
    views only; test depth stays clean so it can serve as ground truth.
    """
    if n_train < 1:
        raise DatasetError("n_train must be >= 1")
    if n_test < 0:
        raise DatasetError("n_test must be >= 0")
    if not radius > near:
        raise DatasetError("camera radius must exceed the near bound")
    intr = CameraIntrinsics.from_fov(resolution, resolution, math.radians(fov_deg))
    rng = np.random.default_rng(seed)
    frames = []
    train_cams = orbit_cameras(intr, n_train, radius, elevation_deg)
    test_cams = orbit_cameras(intr, n_test, radius, elevation_deg, 180.0 / max(n_test, 1) + 90.0 / n_train)
    for split, cams in (("train", train_cams), ("test", test_cams)):
        for cam in cams:
            color, depth = render_ground_truth(scene, cam, far=far)
            if split == "train" and depth_noise > 0:
                fg = depth > 0
                noisy = depth + rng.normal(0.0, depth_noise, depth.shape)
                depth = np.where(fg, np.maximum(noisy, 1e-3), 0.0)
            frames.append(RgbdFrame(color, depth.astype(np.float32).astype(np.float64), cam, split))
    ds = RgbdDataset(frames, near, far)
    if out_dir is not None:
        save_dataset(ds, out_dir)
    return ds


# ---------------------------------------------------------------------------
# manifest I/O


def _frame_names(ds: RgbdDataset):
    counters = {}
    for f in ds.frames:
        k = counters.get(f.split, 0)
        counters[f.split] = k + 1
        yield f"{f.split}_{k:03d}"


def save_dataset(ds: RgbdDataset, out_dir) -> Path:
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "depth").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {out}: {e}") from e
    k = ds.intrinsics
    entries = []
    for frame, name in zip(ds.frames, _frame_names(ds)):
        img_rel, depth_rel = f"images/{name}.png", f"depth/{name}.pfm"
        write_png(out / img_rel, frame.color)
        write_pfm(out / depth_rel, frame.depth)
        entries.append(
            {
                "file_path": img_rel,
                "depth_path": depth_rel,
                "transform_matrix": [float(x) for x in frame.camera.pose.matrix().reshape(-1)],
                "split": frame.split,
            }
        )
    manifest = {
        "fl_x": k.fl_x,
        "fl_y": k.fl_y,
        "cx": k.cx,
        "cy": k.cy,
        "w": k.width,
        "h": k.height,
        "near": ds.near,
        "far": ds.far,
        "frames": entries,
    }
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    ds.root = out
    return path


_TOP_FIELDS = {"fl_x": float, "fl_y": float, "cx": float, "cy": float, "w": int, "h": int, "near": float, "far": float}
_FRAME_FIELDS = ("file_path", "depth_path", "transform_matrix", "split")


def _validate(m, path):
    if not isinstance(m, dict):
        raise DatasetError(f"{path}: manifest must be a JSON object")
    for key, typ in _TOP_FIELDS.items():
        if key not in m:
            raise DatasetError(f"{path}: missing required field {key!r}")
        if not isinstance(m[key], (int, float)) or isinstance(m[key], bool):
            raise DatasetError(f"{path}: field {key!r} must be a number")
        if typ is int and int(m[key]) != m[key]:
            raise DatasetError(f"{path}: field {key!r} must be an integer")
    if "frames" not in m:
        raise DatasetError(f"{path}: missing required field 'frames'")
    if not isinstance(m["frames"], list) or not m["frames"]:
        raise DatasetError(f"{path}: field 'frames' must be a non-empty list")
    for i, fr in enumerate(m["frames"]):
        for key in _FRAME_FIELDS:
            if key not in fr:
                raise DatasetError(f"{path}: frames[{i}] missing required field {key!r}")
        tm = fr["transform_matrix"]
        if not isinstance(tm, list) or len(tm) != 16:
            raise DatasetError(f"{path}: frames[{i}].transform_matrix must hold 16 numbers")
        if fr["split"] not in ("train", "test"):
            raise DatasetError(f"{path}: frames[{i}].split must be 'train' or 'test'")


def load_dataset(root) -> RgbdDataset:
    root = Path(root)
    path = root / MANIFEST
    if not path.is_file():
        raise DatasetError(f"{path}: manifest not found")
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: invalid JSON ({e})") from e
    _validate(m, path)
    intr = CameraIntrinsics(float(m["fl_x"]), float(m["fl_y"]), float(m["cx"]), float(m["cy"]), int(m["w"]), int(m["h"]))
    frames = []
    for i, fr in enumerate(m["frames"]):
        img_path, depth_path = root / fr["file_path"], root / fr["depth_path"]
        for p in (img_path, depth_path):
            if not p.is_file():
                raise DatasetError(f"{path}: frames[{i}] references missing file {p}")
        color = read_png(img_path)
        depth = read_pfm(depth_path).astype(np.float64)
        cam = Camera(intr, Pose.from_matrix(fr["transform_matrix"]))
        frames.append(RgbdFrame(color, depth, cam, fr["split"]))
    return RgbdDataset(frames, float(m["near"]), float(m["far"]), root)


# ---------------------------------------------------------------------------
# error maps


def error_map_path(root, index: int) -> Path:
    return Path(root) / f"error_{index:04d}.pfm"


def ensure_error_maps(ds: RgbdDataset, e_max_fill=0.5, cache=True, recompute=False) -> dict:
    """Error maps for every frame, judged against the training views.

    Loaded from / written to ``error_####.pfm`` beside the manifest when
    the dataset has a root directory.
    """
    train_idx = ds.indices("train")
    refs = [(ds.frames[j].camera, ds.frames[j].depth) for j in train_idx]
    maps = {}
    todo = []
    for i in range(len(ds.frames)):
        p = error_map_path(ds.root, i) if ds.root is not None else None
        if cache and p is not None and p.is_file() and not recompute:
            maps[i] = DepthErrorMap(read_pfm(p).astype(np.float64), e_max_fill)
        else:
            todo.append(i)
    for i in todo:
        frame = ds.frames[i]
        others = [r for j, r in zip(train_idx, refs) if j != i]
        if others:
            (emap,) = compute_depth_error_maps([(frame.camera, frame.depth)], others, e_max_fill)
        else:
            emap = DepthErrorMap(np.full(frame.depth.shape, float(e_max_fill)), e_max_fill)
        # match the float32 precision of the on-disk cache
        emap.e = emap.e.astype(np.float32).astype(np.float64)
        maps[i] = emap
        if cache and ds.root is not None:
            write_pfm(error_map_path(ds.root, i), emap.e)
    ds.error_maps = maps
    return maps
