"""Depth rendering, sensor noise, and projection of grasp contacts into sparse label maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics
from .grasping import GripperModel, OrientedGrasp, grasp_executable
from .mesh import Scene
from .transforms import Transform, matrix_to_quat

FLIP_X = np.diag([-1.0, -1.0, 1.0])  # 180 deg about the approach axis


def render_depth(scene: Scene, intrinsics: CameraIntrinsics, pose: Transform):
    """Z-depth (float32, 0 = no return) and object mask (uint8) by ray casting."""
    rays = intrinsics.pixel_rays().reshape(-1, 3)
    scale = np.linalg.norm(rays, axis=1)
    dirs = (rays / scale[:, None]) @ pose.R.T
    origins = np.broadcast_to(pose.translation, dirs.shape)
    t, _, is_obj = scene.cast(origins, dirs)
    depth = np.where(np.isfinite(t), t / scale, 0.0)
    shape = (intrinsics.height, intrinsics.width)
    return depth.reshape(shape).astype(np.float32), is_obj.reshape(shape).astype(np.uint8)


@dataclass(frozen=True)
class NoiseParams:
    axial_a0: float = 0.0012
    axial_a2: float = 0.0019
    lateral_sigma: float = 0.8


def apply_sensor_noise(depth, params: NoiseParams = NoiseParams(), seed=None):
    """Lateral nearest-pixel resampling followed by depth-dependent axial Gaussian noise.

    Axial std is ``a0 + a2 * (z - 0.4)**2``; no-return pixels are left untouched.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    depth = np.asarray(depth)
    out = depth.astype(np.float64)
    valid = depth > 0
    h, w = depth.shape
    if params.lateral_sigma > 0:
        vv, uu = np.mgrid[0:h, 0:w]
        su = np.clip(np.rint(uu + rng.normal(0, params.lateral_sigma, size=(h, w))), 0, w - 1).astype(int)
        sv = np.clip(np.rint(vv + rng.normal(0, params.lateral_sigma, size=(h, w))), 0, h - 1).astype(int)
        src = out[sv, su]
        out = np.where(valid & (src > 0), src, out)
    if params.axial_a0 > 0 or params.axial_a2 > 0:
        sigma = params.axial_a0 + params.axial_a2 * (out - 0.4) ** 2
        noisy = out + sigma * rng.normal(size=(h, w))
        out = np.where(valid, np.maximum(noisy, 1e-6), out)
    return out.astype(depth.dtype)


@dataclass(frozen=True, eq=False)
class GraspEntry:
    """One labelled pixel: the grasp whose visible contact projects to ``(u, v)``.

    ``r`` is the camera-frame orientation (x toward the other contact) and
    ``contact`` the exact camera-frame contact point. ``z`` is only set for
    TCP-representation maps (offset from the visible surface to the TCP).
    """

    u: int
    v: int
    q: int
    r: np.ndarray
    width: float
    epsilon: float
    contact: np.ndarray
    z: float | None = None

    def to_dict(self):
        d = {"u": int(self.u), "v": int(self.v), "q": int(self.q), "r": [float(x) for x in self.r],
             "width_m": float(self.width), "epsilon": float(self.epsilon),
             "contact_m": [float(x) for x in self.contact]}
        if self.z is not None:
            d["z_m"] = float(self.z)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["u"]), int(d["v"]), int(d["q"]), np.array(d["r"], dtype=float),
                   float(d["width_m"]), float(d["epsilon"]),
                   np.array(d.get("contact_m", [0.0, 0.0, 0.0]), dtype=float),
                   None if d.get("z_m") is None else float(d["z_m"]))

    def __eq__(self, other):
        return isinstance(other, GraspEntry) and self.to_dict() == other.to_dict()


@dataclass(eq=False)
class SparseGraspMap:
    entries: list
    mask: np.ndarray

    @property
    def shape(self):
        return self.mask.shape

    @property
    def positives(self):
        return [e for e in self.entries if e.q == 1]

    def __eq__(self, other):
        return (isinstance(other, SparseGraspMap) and np.array_equal(self.mask, other.mask)
                and self.entries == other.entries)


def _contact_pixel(intrinsics, p_cam):
    if p_cam[2] <= 0:
        return None
    u, v, _ = intrinsics.project(p_cam)
    ui, vi = int(np.rint(u[0])), int(np.rint(v[0]))
    if 0 <= ui < intrinsics.width and 0 <= vi < intrinsics.height:
        return ui, vi
    return None


def project_contacts(grasps, scene: Scene, intrinsics: CameraIntrinsics, pose: Transform, depth, mask,
                     tau=0.005, gripper: GripperModel | None = None, approach=0.15, margin=0.0):
    """Sparse label map from world-frame oriented grasps.

    A contact is kept when it projects inside the image onto an object pixel
    whose rendered depth is within ``tau`` of the contact depth. With a
    ``gripper``, positive entries are re-checked for the grasp as anchored at
    the pixel centre (what a decoder recovers) and demoted to 0 if that grasp
    is not executable.
    """
    inv = pose.inverse()
    r_wc = pose.R
    best = {}
    for g in grasps:
        rw = g.matrix
        cand = g.candidate
        for this, other_flip in ((cand.c1, False), (cand.c2, True)):
            p_cam = inv.apply(this)
            pix = _contact_pixel(intrinsics, p_cam)
            if pix is None:
                continue
            u, v = pix
            d = float(depth[v, u])
            if d <= 0 or not mask[v, u] or abs(d - p_cam[2]) > tau:
                continue
            r_world = rw @ FLIP_X if other_flip else rw
            r_cam = r_wc.T @ r_world
            q = int(g.quality)
            if q and gripper is not None:
                anchored = intrinsics.backproject(u, v, d)
                tcp = pose.apply(anchored + 0.5 * cand.width * r_cam[:, 0])
                q = int(grasp_executable(scene, r_world, tcp, gripper, approach=approach, margin=margin))
            entry = GraspEntry(u, v, q, matrix_to_quat(r_cam), cand.width, cand.epsilon, p_cam)
            prev = best.get((v, u))
            if prev is None or entry.epsilon > prev.epsilon:
                best[(v, u)] = entry
    entries = [best[k] for k in sorted(best)]
    return SparseGraspMap(entries, np.asarray(mask, dtype=np.uint8))


def project_tcps(grasps, intrinsics: CameraIntrinsics, pose: Transform, depth, mask):
    """Sparse map in the TCP representation: entries anchored at the projected grasp centre.

    ``z`` is the distance along the pixel ray from the visible surface to the TCP.
    """
    inv = pose.inverse()
    r_wc = pose.R
    best = {}
    for g in grasps:
        tcp_cam = inv.apply(g.tcp)
        pix = _contact_pixel(intrinsics, tcp_cam)
        if pix is None:
            continue
        u, v = pix
        d = float(depth[v, u])
        if d <= 0 or not mask[v, u]:
            continue
        ray_len = float(np.linalg.norm(intrinsics.backproject(u, v, 1.0)))
        z = float(np.linalg.norm(tcp_cam)) - d * ray_len
        entry = GraspEntry(u, v, int(g.quality), matrix_to_quat(r_wc.T @ g.matrix), g.candidate.width,
                           g.candidate.epsilon, tcp_cam, z)
        prev = best.get((v, u))
        if prev is None or entry.epsilon > prev.epsilon:
            best[(v, u)] = entry
    return SparseGraspMap([best[k] for k in sorted(best)], np.asarray(mask, dtype=np.uint8))
