"""Analytic ray-traced scenes used to synthesize RGB-D ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Camera, Ray, generate_rays, pixel_grid

EPS = 1e-9


@dataclass(frozen=True)
class Solid:
    rgb: tuple

    def __call__(self, points):
        return np.broadcast_to(np.asarray(self.rgb, dtype=np.float64), points.shape).copy()


@dataclass(frozen=True)
class Checker:
    """3D checkerboard; cells are phase-shifted by half a cell so that
    faces lying on cell boundaries do not flicker between colors."""

    rgb_a: tuple
    rgb_b: tuple
    scale: float = 0.4

    def __call__(self, points):
        cells = np.floor(points / self.scale + 0.5).astype(np.int64).sum(axis=-1)
        pick = (cells % 2 == 0)[..., None]
        return np.where(pick, np.asarray(self.rgb_a, float), np.asarray(self.rgb_b, float))


def _vec(v):
    return np.asarray(v, dtype=np.float64).reshape(3)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    albedo: object = Solid((0.8, 0.8, 0.8))

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be > 0")

    def intersect(self, o, d):
        oc = o - _vec(self.center)
        b = np.einsum("ij,ij->i", oc, d)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius**2
        disc = b * b - c
        hit = disc >= 0
        s = np.sqrt(np.where(hit, disc, 0.0))
        t0, t1 = -b - s, -b + s
        t = np.where(t0 > EPS, t0, np.where(t1 > EPS, t1, np.inf))
        t = np.where(hit, t, np.inf)
        return t

    def normal(self, p):
        n = p - _vec(self.center)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box."""

    center: tuple
    half_extents: tuple
    albedo: object = Solid((0.8, 0.8, 0.8))

    def __post_init__(self):
        if np.any(_vec(self.half_extents) <= 0):
            raise ValueError("box half-extents must be > 0")

    def intersect(self, o, d):
        c, h = _vec(self.center), _vec(self.half_extents)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            ta = (c - h - o) * inv
            tb = (c + h - o) * inv
        # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
        par = d == 0
        inside = (o >= c - h) & (o <= c + h)
        lo = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb))
        hi = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb))
        t_enter = lo.max(axis=-1)
        t_exit = hi.min(axis=-1)
        ok = t_enter <= t_exit
        t = np.where(t_enter > EPS, t_enter, np.where(t_exit > EPS, t_exit, np.inf))
        return np.where(ok, t, np.inf)

    def normal(self, p):
        local = (p - _vec(self.center)) / _vec(self.half_extents)
        axis = np.abs(local).argmax(axis=-1)
        n = np.zeros_like(p)
        idx = np.arange(len(p))
        n[idx, axis] = np.sign(local[idx, axis])
        return n


@dataclass(frozen=True)
class Plane:
    """Plane through ``point`` with unit ``normal``; ``half_size`` bounds it
    to a square patch (None = infinite)."""

    point: tuple
    normal_vec: tuple
    albedo: object = Solid((0.8, 0.8, 0.8))
    half_size: float | None = None

    def _basis(self):
        n = _vec(self.normal_vec)
        n = n / np.linalg.norm(n)
        a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
        u = np.cross(n, a)
        u /= np.linalg.norm(u)
        return n, u, np.cross(n, u)

    def intersect(self, o, d):
        n, u, v = self._basis()
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((_vec(self.point) - o) @ n) / denom
        t = np.where((np.abs(denom) > EPS) & (t > EPS), t, np.inf)
        if self.half_size is not None:
            p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d - _vec(self.point)
            out = (np.abs(p @ u) > self.half_size) | (np.abs(p @ v) > self.half_size)
            t = np.where(out, np.inf, t)
        return t

    def normal(self, p):
        n, _, _ = self._basis()
        return np.broadcast_to(n, p.shape).copy()


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple
    light_dir: tuple = (-0.3, -1.0, -0.5)
    ambient: float = 0.3
    glossy: bool = False

    def __post_init__(self):
        ld = _vec(self.light_dir)
        object.__setattr__(self, "light_dir", tuple(ld / np.linalg.norm(ld)))
        if not 0 <= self.ambient <= 1:
            raise ValueError("ambient must lie in [0, 1]")


@dataclass
class Hits:
    t: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray
    prim: np.ndarray  # index of the primitive hit, -1 on miss

    @property
    def hit(self):
        return self.prim >= 0


def trace(scene: SceneSpec, origins, dirs) -> Hits:
    """Nearest positive hit for each of N rays."""
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    o = np.ascontiguousarray(np.broadcast_to(o, d.shape))
    n = len(d)
    best = np.full(n, np.inf)
    prim = np.full(n, -1)
    for k, p in enumerate(scene.primitives):
        t = p.intersect(o, d)
        closer = t < best
        best[closer] = t[closer]
        prim[closer] = k
    normal = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    for k, p in enumerate(scene.primitives):
        sel = prim == k
        if not sel.any():
            continue
        pts = o[sel] + best[sel, None] * d[sel]
        nk = p.normal(pts)
        # two-sided surfaces: face the incoming ray
        flip = np.einsum("ij,ij->i", nk, d[sel]) > 0
        if isinstance(p, Plane):
            nk[flip] *= -1
        normal[sel] = nk
        albedo[sel] = p.albedo(pts)
    best[prim < 0] = np.inf
    return Hits(best, normal, albedo, prim)


def intersect_scene(ray: Ray, scene: SceneSpec):
    """Nearest hit as ``(t, normal, albedo)`` or None on a miss."""
    h = trace(scene, ray.origin[None], ray.direction[None])
    if not h.hit[0]:
        return None
    return float(h.t[0]), h.normal[0], h.albedo[0]


def shade(hit, scene: SceneSpec, view_dir=None):
    """Lambertian + ambient shading; ``hit`` is ``(t, normal, albedo)`` with
    optional leading batch axes on normal/albedo. A Phong highlight
    (exponent 16) is added when the scene is glossy and ``view_dir`` given."""
    _, normal, albedo = hit
    normal = np.asarray(normal, dtype=np.float64)
    light = -_vec(scene.light_dir)
    lambert = np.maximum(0.0, normal @ light)
    rgb = np.asarray(albedo) * (scene.ambient + (1 - scene.ambient) * lambert)[..., None]
    if scene.glossy and view_dir is not None:
        refl = 2 * (normal @ light)[..., None] * normal - light
        spec = np.maximum(0.0, np.einsum("...i,...i->...", refl, -np.asarray(view_dir))) ** 16
        rgb = rgb + 0.5 * spec[..., None]
    return np.clip(rgb, 0.0, 1.0)


def render_ground_truth(scene: SceneSpec, camera: Camera, far: float | None = None, with_ids=False):
    """Color (H, W, 3) and z-depth (H, W) images; misses are black with depth 0.

    Hits farther than ``far`` along the ray count as misses.
    """
    px, py = pixel_grid(camera)
    o, d, scale = generate_rays(camera, px, py)
    h = trace(scene, o, d)
    hit = h.hit
    if far is not None:
        hit &= h.t <= far
    rgb = shade((h.t, h.normal, h.albedo), scene, d.reshape(-1, 3))
    rgb[~hit] = 0.0
    depth = np.where(hit, h.t / scale.reshape(-1), 0.0)
    shape = (camera.height, camera.width)
    color = rgb.reshape(shape + (3,))
    depth = depth.reshape(shape)
    if with_ids:
        return color, depth, np.where(hit, h.prim, -1).reshape(shape)
    return color, depth


# ---------------------------------------------------------------------------
# built-in scenes and JSON (de)serialization


def cube_scene(glossy=False) -> SceneSpec:
    box = Box((0.0, 0.0, 0.0), (0.8, 0.8, 0.8), Checker((0.85, 0.25, 0.2), (0.95, 0.9, 0.8), 0.4))
    ground = Plane((0.0, -0.8, 0.0), (0.0, 1.0, 0.0), Solid((0.45, 0.5, 0.6)), half_size=2.0)
    return SceneSpec((box, ground), glossy=glossy)


def spheres_scene(glossy=False) -> SceneSpec:
    prims = (
        Sphere((-0.5, -0.2, 0.0), 0.6, Solid((0.2, 0.5, 0.9))),
        Sphere((0.6, -0.4, 0.3), 0.4, Checker((0.9, 0.8, 0.2), (0.3, 0.7, 0.3), 0.3)),
        Plane((0.0, -0.8, 0.0), (0.0, 1.0, 0.0), Solid((0.6, 0.6, 0.6)), half_size=2.0),
    )
    return SceneSpec(prims, glossy=glossy)


SCENES = {"cube": cube_scene, "spheres": spheres_scene}


def _albedo_from(d):
    if d is None:
        return Solid((0.8, 0.8, 0.8))
    if "checker" in d:
        c = d["checker"]
        return Checker(tuple(c["rgb_a"]), tuple(c["rgb_b"]), float(c.get("scale", 0.4)))
    return Solid(tuple(d["rgb"]))


def scene_from_dict(d) -> SceneSpec:
    """Build a scene from a JSON-style dict.

    Example: {"primitives": [{"type": "sphere", "center": [0,0,0],
    "radius": 1, "albedo": {"rgb": [1,0,0]}}], "light_dir": [0,-1,0]}
    """
    prims = []
    for p in d["primitives"]:
        kind = p["type"].lower()
        alb = _albedo_from(p.get("albedo"))
        if kind == "sphere":
            prims.append(Sphere(tuple(p["center"]), float(p["radius"]), alb))
        elif kind == "box":
            prims.append(Box(tuple(p["center"]), tuple(p["half_extents"]), alb))
        elif kind == "plane":
            hs = p.get("half_size")
            prims.append(Plane(tuple(p["point"]), tuple(p["normal"]), alb, None if hs is None else float(hs)))
        else:
            raise ValueError(f"unknown primitive type {p['type']!r}")
    return SceneSpec(
        tuple(prims),
        tuple(d.get("light_dir", (-0.3, -1.0, -0.5))),
        float(d.get("ambient", 0.3)),
        bool(d.get("glossy", False)),
    )


def get_scene(name_or_dict, glossy=False) -> SceneSpec:
    if isinstance(name_or_dict, dict):
        return scene_from_dict(name_or_dict)
    try:
        return SCENES[name_or_dict](glossy=glossy)
    except KeyError:
        raise ValueError(f"unknown scene {name_or_dict!r}; choose from {sorted(SCENES)}") from None
