"""Depth-guided placement of samples along camera rays.

Four strategies share one interface: the global stratified baseline over
[t_near, t_far], stratified sampling in a window around the sensed surface,
Gaussian sampling centred on the sensed surface, and adaptive Gaussian
sampling whose spread follows a multiview depth-consistency error.

Scalar helpers operate on one ray; ``sample_rays`` is the vectorized path
used by training and rendering.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .geometry import backproject_points, pixel_grid, project_points


class Strategy(str, enum.Enum):
    GLOBAL = "global"
    STRATIFIED = "stratified"
    GAUSSIAN = "gaussian"
    ADAPTIVE = "adaptive"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        aliases = {"nerf": "global", "globalstratified": "global", "stratifiedlocal": "stratified"}
        key = str(value).lower().replace("_", "").replace("-", "")
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown sampling strategy {value!r}") from None


@dataclass(frozen=True)
class SamplingConfig:
    strategy: Strategy = Strategy.GAUSSIAN
    n_samples: int = 16
    delta: float = 0.15
    sigma_fixed: float = 0.05
    sigma_min: float = 0.01
    sigma_max: float = 0.5
    k_error: float = 1.0
    perturb: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if not self.sigma_fixed >= 0:
            raise ValueError("sigma_fixed must be >= 0")
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ValueError("need 0 < sigma_min <= sigma_max")
        if not self.k_error >= 0:
            raise ValueError("k_error must be >= 0")

    @property
    def uses_depth(self) -> bool:
        return self.strategy is not Strategy.GLOBAL


@dataclass
class RaySamples:
    t: np.ndarray
    from_depth: bool
    strategy: Strategy = Strategy.GLOBAL


@dataclass
class DepthErrorMap:
    e: np.ndarray
    e_max_fill: float = 0.5


# ---------------------------------------------------------------------------
# vectorized core; every array argument has a leading ray axis


def _stratified(lo, hi, n, rng, perturb):
    lo = np.asarray(lo, dtype=np.float64)[..., None]
    hi = np.asarray(hi, dtype=np.float64)[..., None]
    if perturb:
        u = rng.random(lo.shape[:-1] + (n,))
    else:
        u = np.full(lo.shape[:-1] + (n,), 0.5)
    # bins [lo + i*w, lo + (i+1)*w); keep draws strictly inside the bin
    return np.minimum(lo + (np.arange(n) + u) * ((hi - lo) / n), hi)


def _normal_quantiles(n):
    dist = NormalDist()
    return np.array([dist.inv_cdf((i + 0.5) / n) for i in range(n)])


def _gaussian(mean, sigma, n, t_near, t_far, rng, perturb):
    mean = np.asarray(mean, dtype=np.float64)[..., None]
    sigma = np.asarray(sigma, dtype=np.float64)[..., None]
    if perturb:
        z = rng.standard_normal(np.broadcast_shapes(mean.shape, sigma.shape)[:-1] + (n,))
    else:
        z = _normal_quantiles(n)
    t = np.clip(mean + sigma * z, np.asarray(t_near)[..., None], np.asarray(t_far)[..., None])
    return np.sort(t, axis=-1)


def sigma_from_error(e, cfg: SamplingConfig):
    """Gaussian spread for a depth-consistency error ``e`` (affine, clamped)."""
    e = np.asarray(e, dtype=np.float64)
    if np.any(e < 0):
        raise ValueError("depth error must be non-negative")
    s = np.clip(cfg.sigma_min + cfg.k_error * e, cfg.sigma_min, cfg.sigma_max)
    return float(s) if s.ndim == 0 else s


def valid_depth(depth) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return np.isfinite(depth) & (depth > 0)


def sample_rays(t_near, t_far, depth_t, error, cfg: SamplingConfig, rng):
    """Sample a batch of rays.

    Args:
        t_near, t_far: scene bounds per ray (scalars broadcast).
        depth_t: sensed surface distance along each ray; invalid entries
            (<= 0 or non-finite) fall back to global stratified sampling.
            Ignored (may be None) for the global strategy.
        error: per-ray depth error for the adaptive strategy, or None.

    Returns:
        ``(t, from_depth)`` with shapes (B, n) and (B,).
    """
    n = cfg.n_samples
    if depth_t is None:
        shape = np.broadcast_shapes(np.shape(t_near), np.shape(t_far))
        depth_t = np.zeros(shape)
    depth_t = np.asarray(depth_t, dtype=np.float64)
    t_near = np.broadcast_to(np.asarray(t_near, dtype=np.float64), depth_t.shape)
    t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), depth_t.shape)

    t_global = _stratified(t_near, t_far, n, rng, cfg.perturb)
    if cfg.strategy is Strategy.GLOBAL:
        return t_global, np.zeros(depth_t.shape, dtype=bool)

    ok = valid_depth(depth_t)
    d = np.where(ok, depth_t, 1.0)
    if cfg.strategy is Strategy.STRATIFIED:
        lo = np.maximum(t_near, d - cfg.delta)
        hi = np.minimum(t_far, d + cfg.delta)
        ok &= lo < hi
        t_local = _stratified(np.where(ok, lo, t_near), np.where(ok, hi, t_far), n, rng, cfg.perturb)
    else:
        if cfg.strategy is Strategy.ADAPTIVE:
            if error is None:
                raise ValueError("adaptive sampling needs per-ray depth errors")
            sigma = sigma_from_error(np.asarray(error, dtype=np.float64), cfg)
        else:
            sigma = cfg.sigma_fixed
        t_local = _gaussian(d, sigma, n, t_near, t_far, rng, cfg.perturb)
    return np.where(ok[..., None], t_local, t_global), ok


# ---------------------------------------------------------------------------
# single-ray API


def sample_stratified_global(t_near, t_far, n, rng=None, perturb=True) -> RaySamples:
    if not t_near < t_far:
        raise ValueError("need t_near < t_far")
    t = _stratified(t_near, t_far, n, rng, perturb)
    return RaySamples(t, False, Strategy.GLOBAL)


def sample_stratified_local(depth_t, delta, n, t_near, t_far, rng=None, perturb=True) -> RaySamples:
    if not depth_t > 0:
        raise ValueError("depth_t must be positive")
    lo, hi = max(t_near, depth_t - delta), min(t_far, depth_t + delta)
    if not lo < hi:
        return sample_stratified_global(t_near, t_far, n, rng, perturb)
    return RaySamples(_stratified(lo, hi, n, rng, perturb), True, Strategy.STRATIFIED)


def sample_gaussian(depth_t, sigma, n, t_near, t_far, rng=None, perturb=True) -> RaySamples:
    if not depth_t > 0:
        raise ValueError("depth_t must be positive")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return RaySamples(_gaussian(depth_t, sigma, n, t_near, t_far, rng, perturb), True, Strategy.GAUSSIAN)


def sample_ray(ray, pixel_depth, pixel_error, cfg: SamplingConfig, rng=None) -> RaySamples:
    """Sample one ray given the sensor z-depth (and error) at its pixel."""
    n, near, far = cfg.n_samples, ray.t_near, ray.t_far
    if cfg.strategy is Strategy.GLOBAL or pixel_depth is None or not valid_depth(pixel_depth):
        return sample_stratified_global(near, far, n, rng, cfg.perturb)
    depth_t = float(pixel_depth) * ray.depth_scale
    if cfg.strategy is Strategy.STRATIFIED:
        return sample_stratified_local(depth_t, cfg.delta, n, near, far, rng, cfg.perturb)
    if cfg.strategy is Strategy.ADAPTIVE:
        sigma = cfg.sigma_max if pixel_error is None else sigma_from_error(pixel_error, cfg)
        out = sample_gaussian(depth_t, sigma, n, near, far, rng, cfg.perturb)
        out.strategy = Strategy.ADAPTIVE
        return out
    return sample_gaussian(depth_t, cfg.sigma_fixed, n, near, far, rng, cfg.perturb)


# ---------------------------------------------------------------------------
# multiview depth error maps


def _lookup(depth, u, v, mode):
    """Sample ``depth`` at continuous pixel coords; returns (values, ok)."""
    h, w = depth.shape
    if mode == "nearest":
        iu = np.clip(np.floor(u).astype(np.int64), 0, w - 1)
        iv = np.clip(np.floor(v).astype(np.int64), 0, h - 1)
        val = depth[iv, iu]
        return val, val > 0
    # bilinear over pixel centres; every tap must carry valid depth
    x = np.clip(u - 0.5, 0, w - 1)
    y = np.clip(v - 0.5, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2 if w > 1 else 0)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2 if h > 1 else 0)
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    d00, d01 = depth[y0, x0], depth[y0, x1]
    d10, d11 = depth[y1, x0], depth[y1, x1]
    val = (d00 * (1 - fx) + d01 * fx) * (1 - fy) + (d10 * (1 - fx) + d11 * fx) * fy
    ok = (d00 > 0) & (d01 > 0) & (d10 > 0) & (d11 > 0)
    return val, ok


def pairwise_residual(cam_i, depth_i, cam_j, depth_j, lookup="bilinear"):
    """|z_j(X) - depth_j(proj_j(X))| for every valid pixel X of view i.

    Returns ``(residual, mask)`` on view i's grid; mask marks pixels where
    view j provided evidence.
    """
    depth_i = np.asarray(depth_i, dtype=np.float64)
    px, py = pixel_grid(cam_i)
    valid = valid_depth(depth_i)
    resid = np.zeros(depth_i.shape)
    mask = np.zeros(depth_i.shape, dtype=bool)
    if not valid.any():
        return resid, mask
    pts = backproject_points(cam_i, px[valid], py[valid], depth_i[valid])
    u, v, z, inside = project_points(cam_j, pts)
    val = np.zeros_like(u)
    ok = inside.copy()
    if ok.any():
        val[ok], ok_j = _lookup(np.asarray(depth_j, dtype=np.float64), u[ok], v[ok], lookup)
        ok[ok] = ok_j
    r = np.where(ok, np.abs(np.where(ok, z, 0.0) - val), 0.0)
    resid[valid] = r
    mask[valid] = ok
    return resid, mask


def compute_depth_error_maps(frames, references=None, e_max_fill=0.5, lookup="bilinear"):
    """Per-view multiview depth error maps.

    Args:
        frames: sequence of ``(camera, depth)`` pairs to build maps for.
        references: views providing cross-view evidence; defaults to
            ``frames`` (each view is never compared with itself).
        e_max_fill: value for pixels with invalid depth or no evidence.
        lookup: ``"bilinear"`` or ``"nearest"`` depth lookup in the other view.
    """
    if not frames:
        raise ValueError("need at least one frame")
    same = references is None
    refs = frames if same else references
    out = []
    for i, (cam_i, depth_i) in enumerate(frames):
        depth_i = np.asarray(depth_i, dtype=np.float64)
        total = np.zeros(depth_i.shape)
        count = np.zeros(depth_i.shape)
        for j, (cam_j, depth_j) in enumerate(refs):
            if same and j == i:
                continue
            r, m = pairwise_residual(cam_i, depth_i, cam_j, depth_j, lookup)
            total += r
            count += m
        e = np.full(depth_i.shape, float(e_max_fill))
        has = count > 0
        e[has] = total[has] / count[has]
        out.append(DepthErrorMap(e, float(e_max_fill)))
    return out
