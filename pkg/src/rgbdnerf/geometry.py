"""Pinhole cameras, ray generation and (back)projection.

Conventions: camera-to-world poses, right-handed, the camera looks along -Z
with +Y up. Depth is planar z-depth along the optical axis, not ray length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    fl_x: float
    fl_y: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fl_x > 0 and self.fl_y > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fl_x}, {self.fl_y}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x: float) -> "CameraIntrinsics":
        """Square pixels, centered principal point, horizontal fov in radians."""
        fl = 0.5 * width / np.tan(0.5 * fov_x)
        return cls(fl, fl, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1) > 1e-6:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """self * other (apply other first)."""
        r = self.rotation @ other.rotation
        # re-orthonormalize so long chains stay within tolerance
        u, _, vt = np.linalg.svd(r)
        return Pose(u @ vt, self.rotation @ other.translation + self.translation)


def look_at(position, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> Pose:
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    z_axis = -forward / np.linalg.norm(forward)
    x_axis = np.cross(up, z_axis)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    return Pose(np.stack([x_axis, y_axis, z_axis], axis=1), position)


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    pose: Pose = field(default_factory=Pose.identity)

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    @property
    def position(self) -> np.ndarray:
        return self.pose.translation


@dataclass(frozen=True)
class Ray:
    """A single ray.

    ``depth_scale`` converts a sensor z-depth at this pixel into distance
    along the (unit) direction: ``t = z * depth_scale``.
    """

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float
    depth_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.t_near < self.t_far:
            raise ValueError(f"need 0 < t_near < t_far, got {self.t_near}, {self.t_far}")
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


def _check_pixel(camera: Camera, px, py):
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    if np.any(px < 0) or np.any(px >= camera.width) or np.any(py < 0) or np.any(py >= camera.height):
        raise ValueError("pixel coordinates out of image bounds")
    return px, py


def camera_dirs(camera: Camera, px, py) -> np.ndarray:
    """Camera-frame directions with z = -1 (unnormalized), shape (..., 3)."""
    k = camera.intrinsics
    x = (px - k.cx) / k.fl_x
    y = -(py - k.cy) / k.fl_y
    return np.stack([x, y, -np.ones_like(x)], axis=-1)


def generate_rays(camera: Camera, px, py):
    """Vectorized ray generation.

    Returns ``(origins, directions, depth_scale)`` with shapes (..., 3),
    (..., 3) and (...). ``depth_scale`` is the norm of the z=-1 camera
    direction, i.e. ray distance per unit of z-depth.
    """
    px, py = _check_pixel(camera, px, py)
    d_cam = camera_dirs(camera, px, py)
    norm = np.linalg.norm(d_cam, axis=-1)
    dirs = (d_cam / norm[..., None]) @ camera.pose.rotation.T
    origins = np.broadcast_to(camera.pose.translation, dirs.shape)
    return origins, dirs, norm


def generate_ray(camera: Camera, px: float, py: float, t_near: float = 0.5, t_far: float = 6.0) -> Ray:
    o, d, s = generate_rays(camera, px, py)
    return Ray(np.array(o), d, t_near, t_far, float(s))


def pixel_grid(camera: Camera):
    """Pixel-center coordinates (H, W) for a full image."""
    j, i = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
    return i + 0.5, j + 0.5


BEHIND = "behind"
OUTSIDE = "outside"


def project_points(camera: Camera, points):
    """Vectorized projection.

    Returns ``(u, v, z, ok)``; ``ok`` is False for points behind the camera
    or outside the image, where u, v, z are undefined (NaN).
    """
    points = np.asarray(points, dtype=np.float64)
    k = camera.intrinsics
    p_cam = (points - camera.pose.translation) @ camera.pose.rotation
    z = -p_cam[..., 2]
    front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.where(front, z, np.nan)
        u = k.cx + k.fl_x * p_cam[..., 0] / zs
        v = k.cy - k.fl_y * p_cam[..., 1] / zs
    inside = front & (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    return u, v, zs, inside


def project(camera: Camera, point):
    """Project one world point to ``(u, v, z)``, or ``BEHIND`` / ``OUTSIDE``."""
    u, v, z, ok = project_points(camera, np.asarray(point, dtype=np.float64)[None])
    if not np.isfinite(z[0]):
        return BEHIND
    if not ok[0]:
        return OUTSIDE
    return float(u[0]), float(v[0]), float(z[0])


def backproject_points(camera: Camera, px, py, depth) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    d_cam = camera_dirs(camera, np.asarray(px, dtype=np.float64), np.asarray(py, dtype=np.float64))
    return camera.pose.translation + (d_cam * depth[..., None]) @ camera.pose.rotation.T


def backproject(camera: Camera, px: float, py: float, depth: float) -> np.ndarray:
    """World point seen at pixel (px, py) with planar z-depth ``depth``."""
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    _check_pixel(camera, px, py)
    return backproject_points(camera, px, py, depth)
