"""Pinhole intrinsics and random look-at camera poses."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .transforms import Transform


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 262.5
    fy: float = 262.5
    cx: float = 159.5
    cy: float = 119.5
    width: int = 320
    height: int = 240

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, points):
        """Camera-frame points to continuous pixel coordinates ``(u, v)`` and depth ``z``."""
        p = np.atleast_2d(points)
        z = p[:, 2]
        return self.fx * p[:, 0] / z + self.cx, self.fy * p[:, 1] / z + self.cy, z

    def backproject(self, u, v, z):
        u, v, z = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float), np.asarray(z, float))
        return np.stack([(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z], axis=-1)

    def pixel_rays(self):
        """(H, W, 3) camera-frame ray directions with unit z component."""
        u, v = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return self.backproject(u, v, 1.0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class CameraBounds:
    radius: tuple = (0.5, 1.0)
    polar_deg: tuple = (5.0, 70.0)
    azimuth_deg: tuple = (0.0, 360.0)
    jitter: float = 0.02

    def validate(self):
        r0, r1 = self.radius
        if not (0.4 <= r0 <= r1 <= 1.4):
            raise ValueError(f"radius bounds {self.radius} outside [0.4, 1.4] m")
        p0, p1 = self.polar_deg
        if not (0.0 <= p0 <= p1 <= 90.0):
            raise ValueError(f"invalid polar bounds {self.polar_deg}")
        a0, a1 = self.azimuth_deg
        if a1 < a0:
            raise ValueError(f"invalid azimuth bounds {self.azimuth_deg}")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")


def look_at(eye, target) -> Transform:
    """Camera->world pose at ``eye`` with +z toward ``target`` and image-up away from the plane."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    down = np.array([0.0, 0.0, -1.0])
    y = down - np.dot(down, z) * z
    if np.linalg.norm(y) < 1e-9:
        y = np.array([0.0, -1.0, 0.0]) - z[1] * z
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    return Transform.from_rt(np.column_stack([x, y, z]), eye)


def sample_camera_pose(workspace_center, bounds: CameraBounds = CameraBounds(), seed=None) -> Transform:
    bounds.validate()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    r = rng.uniform(*bounds.radius)
    polar = np.deg2rad(rng.uniform(*bounds.polar_deg))
    az = np.deg2rad(rng.uniform(*bounds.azimuth_deg))
    jitter = rng.uniform(-bounds.jitter, bounds.jitter, size=3)
    center = np.asarray(workspace_center, dtype=float)
    eye = center + r * np.array([np.sin(polar) * np.cos(az), np.sin(polar) * np.sin(az), np.cos(polar)])
    return look_at(eye, center + jitter)


def principal_ray(pose: Transform):
    return pose.R[:, 2]
