"""Network-facing math: jet input encoding, the sparse grasp loss, oracle predictors, tensor files.

Output tensors are channel-major arrays: ``(6, H, W)`` holds quality (post-sigmoid),
quaternion ``(w, x, y, z)`` and width; the TCP variant adds a seventh channel with
the surface-to-TCP offset.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .render import SparseGraspMap
from .transforms import axis_angle_quat, quat_mul

JET_KNOTS = np.array([0.0, 0.125, 0.375, 0.625, 0.875, 1.0])
JET_RGB = np.array([
    [0.0, 0.0, 0.5],
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.5, 0.0, 0.0],
])
Q_LOW = 1e-6
Q_HIGH = 1.0 - 1e-6
BCE_CLIP = 1e-7
TENSOR_MAGIC = b"GPTN"


def jet(t):
    """Piecewise-linear jet colormap; returns ``t.shape + (3,)``."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return np.stack([np.interp(t, JET_KNOTS, JET_RGB[:, c]) for c in range(3)], axis=-1)


def encode_input(depth, near=0.4, far=1.4):
    """Depth image to a ``(3, H, W)`` jet tensor; no-return pixels encode as ``far``."""
    if near >= far:
        raise ValueError("near must be smaller than far")
    d = np.asarray(depth, dtype=float)
    d = np.where(d > 0, d, far)
    t = (np.clip(d, near, far) - near) / (far - near)
    return np.moveaxis(jet(t), -1, 0)


def quaternion_distance(r, r_hat, tol=1e-6):
    """``1 - |<r, r_hat>|``: zero for equal rotations, including the double cover."""
    r = np.asarray(r, dtype=float)
    r_hat = np.asarray(r_hat, dtype=float)
    if abs(np.linalg.norm(r) - 1.0) > tol or abs(np.linalg.norm(r_hat) - 1.0) > tol:
        raise ValueError("quaternion_distance expects unit quaternions")
    return 1.0 - abs(float(np.dot(r, r_hat)))


@dataclass
class LossBreakdown:
    total: float
    l_q: float
    l_r: float
    l_w: float
    l_z: float | None
    positive_count: int
    supervised_count: int
    grad: np.ndarray | None = None


def _supervision(target: SparseGraspMap, negative_fraction=None, rng=None):
    """Label plane (-1 = unsupervised) and the positive entries."""
    labels = np.where(np.asarray(target.mask) == 0, 0, -1).astype(np.int8)
    if negative_fraction is not None:
        neg = np.flatnonzero(labels.ravel() == 0)
        keep = rng.random(len(neg)) < negative_fraction
        labels.ravel()[neg[~keep]] = -1
    for e in target.entries:
        labels[e.v, e.u] = e.q
    return labels, [e for e in target.entries if e.q == 1]


def _loss(pred, target, weights, with_grad, negative_fraction, seed):
    pred = np.asarray(pred, dtype=float)
    n_ch = 7 if "z" in weights else 6
    if pred.ndim != 3 or pred.shape[0] != n_ch or pred.shape[1:] != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ({n_ch}, {target.shape})")
    rng = np.random.default_rng(seed)
    labels, positives = _supervision(target, negative_fraction, rng)
    grad = np.zeros_like(pred) if with_grad else None

    sup = labels >= 0
    n_sup = int(sup.sum())
    p_raw = pred[0][sup]
    p = np.clip(p_raw, BCE_CLIP, 1.0 - BCE_CLIP)
    y = labels[sup].astype(float)
    bce = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    l_q = math.fsum(bce) / n_sup if n_sup else 0.0
    if with_grad and n_sup:
        inside = (p_raw > BCE_CLIP) & (p_raw < 1.0 - BCE_CLIP)
        grad[0][sup] = np.where(inside, (-y / p + (1.0 - y) / (1.0 - p)) / n_sup, 0.0)

    n_pos = len(positives)
    terms = {"r": [], "w": [], "z": []}
    for e in positives:
        x = pred[1:5, e.v, e.u]
        norm = np.linalg.norm(x)
        nq = x / norm
        dot = float(np.dot(e.r, nq))
        terms["r"].append(1.0 - abs(dot))
        dw = pred[5, e.v, e.u] - e.width
        terms["w"].append(abs(dw))
        if "z" in weights:
            dz = pred[6, e.v, e.u] - e.z
            terms["z"].append(abs(dz))
        if with_grad:
            grad[1:5, e.v, e.u] = -weights["r"] / n_pos * np.sign(dot) * (e.r - dot * nq) / norm
            grad[5, e.v, e.u] = weights["w"] / n_pos * np.sign(dw)
            if "z" in weights:
                grad[6, e.v, e.u] = weights["z"] / n_pos * np.sign(dz)
    mean = {k: (math.fsum(v) / n_pos if n_pos else 0.0) for k, v in terms.items()}
    total = math.fsum([l_q, weights["r"] * mean["r"], weights["w"] * mean["w"],
                       weights.get("z", 0.0) * mean["z"]])
    return LossBreakdown(total, l_q, mean["r"], mean["w"], mean["z"] if "z" in weights else None,
                         n_pos, n_sup, grad)


def loss_contact(pred, target: SparseGraspMap, alpha=0.1, beta=0.1, with_grad=False,
                 negative_fraction=None, seed=0) -> LossBreakdown:
    """BCE on all supervised pixels plus orientation/width terms averaged over positives.

    Supervised pixels are the map entries and every background (mask 0) pixel;
    ``negative_fraction`` optionally subsamples the background.
    """
    return _loss(pred, target, {"r": alpha, "w": beta}, with_grad, negative_fraction, seed)


def loss_tcp(pred, target: SparseGraspMap, alpha=0.1, beta=0.01, nu=0.1, with_grad=False,
             negative_fraction=None, seed=0) -> LossBreakdown:
    """TCP-representation loss: :func:`loss_contact` plus an L1 term on the TCP offset."""
    return _loss(pred, target, {"r": alpha, "w": beta, "z": nu}, with_grad, negative_fraction, seed)


# ------------------------------------------------------------- oracles

def oracle_predict(grasp_map: SparseGraspMap, width=None, height=None, tcp=False):
    """Ideal prediction for a label map: saturated quality at positives, labels copied."""
    h, w = grasp_map.shape if width is None else (height, width)
    out = np.zeros((7 if tcp else 6, h, w))
    out[0] = Q_LOW
    out[1] = 1.0
    for e in grasp_map.entries:
        out[0, e.v, e.u] = Q_HIGH if e.q == 1 else Q_LOW
        out[1:5, e.v, e.u] = e.r
        out[5, e.v, e.u] = e.width
        if tcp:
            out[6, e.v, e.u] = e.z
    return out


def perturbed_oracle(grasp_map: SparseGraspMap, sigma_q=0.0, rot_sigma=0.0, width_sigma=0.0, seed=None,
                     width=None, height=None, labelled_only=True):
    """Oracle tensor with Gaussian quality jitter, clamped to [0, 1].

    By default only labelled pixels are jittered, so that false positives come
    from labelled negatives rather than from background; ``labelled_only=False``
    jitters every pixel.

    ``rot_sigma`` (rad) rotates each labelled quaternion about a random axis and
    ``width_sigma`` (m) jitters labelled widths.
    """
    rng = np.random.default_rng(seed)
    out = oracle_predict(grasp_map, width, height)
    if sigma_q > 0:
        if labelled_only:
            if grasp_map.entries:
                u = np.array([e.u for e in grasp_map.entries])
                v = np.array([e.v for e in grasp_map.entries])
                out[0, v, u] = np.clip(out[0, v, u] + rng.normal(0.0, sigma_q, size=len(u)), 0.0, 1.0)
        else:
            out[0] = np.clip(out[0] + rng.normal(0.0, sigma_q, size=out[0].shape), 0.0, 1.0)
    if rot_sigma > 0 or width_sigma > 0:
        for e in grasp_map.entries:
            if rot_sigma > 0:
                axis = rng.normal(size=3)
                dq = axis_angle_quat(axis, rng.normal(0.0, rot_sigma))
                q = quat_mul(e.r, dq)
                out[1:5, e.v, e.u] = q / np.linalg.norm(q)
            if width_sigma > 0:
                out[5, e.v, e.u] = e.width + rng.normal(0.0, width_sigma)
    return out


# --------------------------------------------------------- tensor files

class TensorFormatError(ValueError):
    pass


def write_tensor(path, tensor):
    t = np.asarray(tensor, dtype="<f4")
    if t.ndim != 3:
        raise ValueError("tensor must be C x H x W")
    c, h, w = t.shape
    Path(path).write_bytes(TENSOR_MAGIC + struct.pack("<III", c, h, w) + t.tobytes())


def read_tensor(path):
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise TensorFormatError(f"{path}: truncated header ({len(data)} bytes, offset 0)")
    if data[:4] != TENSOR_MAGIC:
        raise TensorFormatError(f"{path}: bad magic {data[:4]!r} at offset 0")
    c, h, w = struct.unpack("<III", data[4:16])
    expected = 16 + 4 * c * h * w
    if len(data) != expected:
        raise TensorFormatError(f"{path}: payload size mismatch at offset {min(len(data), expected)} "
                                f"(expected {expected} bytes, found {len(data)})")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(c, h, w).astype(np.float64)
