"""Alpha compositing of field samples into pixel color, depth and opacity."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .field import FieldParams, field_backward, field_forward
from .geometry import Camera, Ray, generate_rays, pixel_grid
from .sampling import RaySamples, SamplingConfig, sample_rays

DELTA_FLOOR = 1e-6
ACC_FLOOR = 1e-6


@dataclass
class RenderResult:
    """Composited outputs; every field carries the leading ray axes."""

    color: np.ndarray
    depth: np.ndarray
    acc: np.ndarray
    weights: np.ndarray
    transmittance: np.ndarray
    residual: np.ndarray  # transmittance past the last sample
    deltas: np.ndarray


def _deltas(t, t_far):
    d = np.empty_like(t)
    d[..., :-1] = t[..., 1:] - t[..., :-1]
    d[..., -1] = np.maximum(np.asarray(t_far, dtype=t.dtype) - t[..., -1], DELTA_FLOOR)
    return d


def composite(t, density, rgb, t_far) -> RenderResult:
    """Front-to-back compositing on a black background.

    Shapes: t and density (..., n), rgb (..., n, 3), t_far broadcastable
    to (...).
    """
    t = np.asarray(t)
    if np.any(np.diff(t, axis=-1) < 0):
        raise ValueError("sample distances must be ascending")
    density = np.asarray(density)
    rgb = np.asarray(rgb)
    delta = _deltas(t, t_far)
    x = density * delta
    csum = np.cumsum(x, axis=-1)
    # exclusive prefix sums; subtracting x from csum would break monotonicity by an ulp
    excl = np.concatenate([np.zeros_like(csum[..., :1]), csum[..., :-1]], axis=-1)
    trans = np.exp(-excl)
    residual = np.exp(-csum[..., -1])
    alpha = -np.expm1(-x)
    w = trans * alpha
    acc = w.sum(axis=-1)
    color = np.einsum("...n,...nc->...c", w, rgb)
    depth = (w * t).sum(axis=-1) / np.maximum(acc, ACC_FLOOR)
    # the quotient can round an ulp past the sample range; the exact value cannot
    depth = np.where(acc > ACC_FLOOR, np.clip(depth, t[..., 0], t[..., -1]), depth)
    return RenderResult(color, depth, acc, w, trans, residual, delta)


def composite_backward(t, density, rgb, t_far, d_color, d_depth, d_acc, result: RenderResult | None = None):
    """Gradients of <d_color, color> + <d_depth, depth> + <d_acc, acc>.

    Returns ``(d_density, d_rgb)`` shaped like ``density`` and ``rgb``.
    """
    t = np.asarray(t)
    rgb = np.asarray(rgb)
    r = result if result is not None else composite(t, density, rgb, t_far)
    d_color = np.asarray(d_color)
    d_depth = np.asarray(d_depth)[..., None]
    d_acc = np.asarray(d_acc)[..., None]
    w = r.weights

    acc = r.acc[..., None]
    acc_m = np.maximum(acc, ACC_FLOOR)
    depth_term = (t - np.where(acc > ACC_FLOOR, r.depth[..., None], 0.0)) / acc_m
    g = np.einsum("...c,...nc->...n", d_color, rgb) + d_acc + d_depth * depth_term

    # d/dx_i: g_i T_{i+1} - sum_{k>i} g_k w_k
    trans_next = np.concatenate([r.transmittance[..., 1:], r.residual[..., None]], axis=-1)
    gw = g * w
    tail = np.cumsum(gw[..., ::-1], axis=-1)[..., ::-1] - gw
    d_x = g * trans_next - tail
    d_density = d_x * r.deltas
    d_rgb = w[..., None] * d_color[..., None, :]
    return d_density, d_rgb


@dataclass
class RenderCache:
    field_cache: object
    t: np.ndarray
    density: np.ndarray
    rgb: np.ndarray
    t_far: np.ndarray
    result: RenderResult


def render_rays(params: FieldParams, origins, dirs, t, t_far):
    """Evaluate the field along B rays at distances ``t`` (B, n) and composite."""
    dtype = params.dtype
    origins = np.asarray(origins, dtype=dtype)
    dirs = np.asarray(dirs, dtype=dtype)
    t = np.asarray(t, dtype=dtype)
    b, n = t.shape
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    out, fcache = field_forward(params, pts, dirs)
    density = out.density.reshape(b, n)
    rgb = out.rgb.reshape(b, n, 3)
    t_far = np.broadcast_to(np.asarray(t_far, dtype=dtype), (b,))
    result = composite(t, density, rgb, t_far)
    return result, RenderCache(fcache, t, density, rgb, t_far, result)


def render_rays_backward(params: FieldParams, cache: RenderCache, d_color, d_depth, d_acc=None, grads=None):
    """Backpropagate pixel-level gradients into the field parameters."""
    if d_acc is None:
        d_acc = np.zeros_like(cache.result.acc)
    d_density, d_rgb = composite_backward(
        cache.t, cache.density, cache.rgb, cache.t_far, d_color, d_depth, d_acc, cache.result
    )
    return field_backward(params, cache.field_cache, d_density.reshape(-1), d_rgb.reshape(-1, 3), grads)


def render_ray(params: FieldParams, ray: Ray, samples: RaySamples):
    """Render one ray; returns ``(RenderResult, RenderCache)`` for that ray."""
    t = np.asarray(samples.t, dtype=np.float64).reshape(1, -1)
    if t.min() < ray.t_near - 1e-9 or t.max() > ray.t_far + 1e-9:
        raise ValueError("samples outside the ray bounds")
    return render_rays(params, ray.origin[None], ray.direction[None], t, ray.t_far)


def render_image(
    params: FieldParams,
    camera: Camera,
    depth_source=None,
    cfg: SamplingConfig | None = None,
    near: float = 0.5,
    far: float = 6.0,
    workers: int = 1,
    chunk_rows: int = 8,
):
    """Render a full view deterministically.

    Args:
        depth_source: optional ``(depth_map, error_map)``; the error map
            (a ``DepthErrorMap`` or array) may be None unless the strategy
            is adaptive. Without it every ray uses global sampling.

    Returns:
        ``(color (H, W, 3), z-depth (H, W), acc (H, W))``. Depth is planar
        z-depth so it compares directly against sensor depth maps.
    """
    cfg = dataclasses.replace(cfg or SamplingConfig(), perturb=False)
    h, w = camera.height, camera.width
    px, py = pixel_grid(camera)
    origins, dirs, scale = generate_rays(camera, px, py)
    depth_t = err = None
    if depth_source is not None:
        depth_map, err_map = depth_source
        depth_t = np.asarray(depth_map, dtype=np.float64) * scale
        if err_map is not None:
            err = getattr(err_map, "e", err_map)
    if not cfg.uses_depth:
        depth_t = None

    color = np.zeros((h, w, 3))
    depth = np.zeros((h, w))
    acc = np.zeros((h, w))

    def work(r0):
        rows = slice(r0, min(r0 + chunk_rows, h))
        o = origins[rows].reshape(-1, 3)
        d = dirs[rows].reshape(-1, 3)
        dt = np.zeros(len(o)) if depth_t is None else depth_t[rows].reshape(-1)
        e = None if err is None else np.asarray(err)[rows].reshape(-1)
        t, _ = sample_rays(near, far, dt, e, cfg, None)
        res, _ = render_rays(params, o, d, t, far)
        shape = (rows.stop - rows.start, w)
        color[rows] = res.color.reshape(shape + (3,))
        depth[rows] = res.depth.reshape(shape) / scale[rows]
        acc[rows] = res.acc.reshape(shape)

    starts = range(0, h, chunk_rows)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, starts))
    else:
        for r0 in starts:
            work(r0)
    return color, depth, acc
