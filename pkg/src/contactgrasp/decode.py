"""Turn predicted grasp tensors into ranked 6-DoF grasp proposals."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .camera import CameraIntrinsics
from .transforms import Transform, quat_to_matrix


class NoDepthError(ValueError):
    """The depth image has no return at the requested pixel."""


def nms_select(quality, gamma=0.4, peak_distance=4, max_proposals=10):
    """Greedy peak picking on a quality plane; returns ``(u, v)`` pixels.

    A pixel qualifies if its value is at least ``gamma`` and no pixel within
    Chebyshev radius ``peak_distance`` is larger. Qualifying pixels are taken
    by descending value (row-major on ties) while staying at least
    ``peak_distance`` away from every pixel already taken.
    """
    q = np.asarray(quality, dtype=float)
    size = 2 * int(peak_distance) + 1
    peaks = maximum_filter(q, size=size, mode="constant", cval=-np.inf) == q
    cand = np.flatnonzero((q >= gamma) & peaks)
    if len(cand) == 0:
        return []
    values = q.ravel()[cand]
    order = cand[np.lexsort((cand, -values))]
    w = q.shape[1]
    kept = []
    for idx in order:
        v, u = divmod(int(idx), w)
        if all(max(abs(u - ku), abs(v - kv)) >= peak_distance for ku, kv in kept):
            kept.append((u, v))
            if len(kept) >= max_proposals:
                break
    return kept


@dataclass(frozen=True)
class CameraGrasp:
    rotation: np.ndarray
    tcp: np.ndarray
    width: float
    quality: float
    contact: np.ndarray
    pixel: tuple
    width_clamped: bool = False


@dataclass(frozen=True)
class GraspProposal:
    rotation: np.ndarray
    tcp: np.ndarray
    width: float
    quality: float
    source_pixel: tuple
    width_clamped: bool = False

    @property
    def matrix(self):
        return quat_to_matrix(self.rotation)

    def to_dict(self):
        return {"tcp_m": [float(x) for x in self.tcp], "r": [float(x) for x in self.rotation],
                "width_m": float(self.width), "quality": float(self.quality),
                "pixel": [int(self.source_pixel[0]), int(self.source_pixel[1])]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["r"], dtype=float), np.array(d["tcp_m"], dtype=float), float(d["width_m"]),
                   float(d["quality"]), tuple(d["pixel"]))


def _surface_point(pixel, intrinsics: CameraIntrinsics, depth):
    u, v = pixel
    z = float(depth[v, u])
    if not z > 0:
        raise NoDepthError(f"no depth at pixel ({u}, {v})")
    return intrinsics.backproject(u, v, z)


def _rotation_width(tensor, pixel, max_width):
    u, v = pixel
    q = np.asarray(tensor[1:5, v, u], dtype=float)
    q = q / np.linalg.norm(q)
    w = float(tensor[5, v, u])
    clamped = w < 0 or w > max_width
    return q, float(np.clip(w, 0.0, max_width)), clamped


def decode_grasp(tensor, pixel, intrinsics: CameraIntrinsics, depth, max_width=0.08) -> CameraGrasp:
    """Contact representation: reproject the pixel, then shift half the width along x."""
    contact = _surface_point(pixel, intrinsics, depth)
    q, w, clamped = _rotation_width(tensor, pixel, max_width)
    tcp = contact + 0.5 * w * quat_to_matrix(q)[:, 0]
    u, v = pixel
    return CameraGrasp(q, tcp, w, float(tensor[0, v, u]), contact, (int(u), int(v)), clamped)


def decode_tcp_variant(tensor, pixel, intrinsics: CameraIntrinsics, depth, max_width=0.08) -> CameraGrasp:
    """TCP representation: the TCP lies ``z`` beyond the visible surface along the pixel ray."""
    surface = _surface_point(pixel, intrinsics, depth)
    q, w, clamped = _rotation_width(tensor, pixel, max_width)
    u, v = pixel
    ray = surface / np.linalg.norm(surface)
    tcp = surface + float(tensor[6, v, u]) * ray
    return CameraGrasp(q, tcp, w, float(tensor[0, v, u]), surface, (int(u), int(v)), clamped)


def as_transform(extrinsics) -> Transform:
    if isinstance(extrinsics, Transform):
        return extrinsics
    return Transform.from_matrix(np.asarray(extrinsics, dtype=float))


def to_base_frame(grasp: CameraGrasp, extrinsics) -> GraspProposal:
    """Express a camera-frame grasp in the base frame given the camera->base transform."""
    tf = as_transform(extrinsics)
    pose = tf @ Transform(grasp.rotation, grasp.tcp)
    return GraspProposal(pose.rotation, pose.translation, grasp.width, grasp.quality, grasp.pixel,
                         grasp.width_clamped)


def propose(tensor, intrinsics: CameraIntrinsics, depth, extrinsics=None, gamma=0.4, max_proposals=10,
            peak_distance=4, max_width=0.08, tcp_variant=False):
    """NMS, decode and transform; returns ``(proposals, skipped)`` sorted by quality."""
    tf = Transform() if extrinsics is None else as_transform(extrinsics)
    decode = decode_tcp_variant if tcp_variant else decode_grasp
    proposals, skipped = [], []
    for pixel in nms_select(tensor[0], gamma, peak_distance, max_proposals):
        try:
            proposals.append(to_base_frame(decode(tensor, pixel, intrinsics, depth, max_width), tf))
        except NoDepthError as exc:
            skipped.append({"pixel": list(pixel), "reason": str(exc)})
    proposals.sort(key=lambda p: -p.quality)
    return proposals, skipped


def proposals_to_json(proposals) -> str:
    return json.dumps([p.to_dict() for p in proposals], indent=1)
