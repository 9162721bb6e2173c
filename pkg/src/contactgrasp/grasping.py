"""Antipodal grasp sampling, robust force closure, and hinge-rotation orientation selection."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import OrientedBox, Scene, TriMesh, boxes_collide
from .transforms import Transform, frame_from_axes, matrix_to_quat, quat_to_matrix

log = logging.getLogger(__name__)

HINGE_STEPS = 24


@dataclass(frozen=True)
class GripperModel:
    """Parallel-jaw gripper proxied by two finger boxes and a palm box.

    In the grasp frame x points between the fingers and z is the approach
    direction; the fingertips sit on the z = 0 plane through the TCP.
    """

    max_width: float = 0.08
    finger_half: tuple = (0.01, 0.01, 0.02)
    palm_half: tuple = (0.05, 0.02, 0.01)
    tcp_to_palm: float = 0.04
    friction: float = 0.5

    def __post_init__(self):
        if self.max_width <= 0 or self.friction <= 0:
            raise ValueError("max_width and friction must be positive")

    def box_arrays(self, rotation, tcp, opening=None, margin=0.0, sweep=0.0):
        """Centers, rotations and half extents of the three boxes.

        ``sweep`` elongates each box backwards along -z to cover a straight
        approach of that length ending at the given pose.
        """
        opening = self.max_width if opening is None else opening
        fx, fy, fz = self.finger_half
        px, py, pz = self.palm_half
        local = np.array([
            [opening / 2 + fx, 0.0, -self.tcp_to_palm + fz],
            [-(opening / 2 + fx), 0.0, -self.tcp_to_palm + fz],
            [0.0, 0.0, -self.tcp_to_palm - pz],
        ])
        halves = np.array([[fx, fy, fz], [fx, fy, fz], [px, py, pz]], dtype=float)
        local[:, 2] -= sweep / 2.0
        halves[:, 2] += sweep / 2.0
        halves += margin
        r = np.asarray(rotation, dtype=float)
        centers = np.asarray(tcp, dtype=float) + local @ r.T
        return centers, np.broadcast_to(r, (3, 3, 3)).copy(), halves

    def boxes(self, rotation, tcp, opening=None, margin=0.0, sweep=0.0):
        centers, rots, halves = self.box_arrays(rotation, tcp, opening, margin, sweep)
        q = matrix_to_quat(rots[0])
        return [OrientedBox(c, h, q) for c, h in zip(centers, halves)]


@dataclass(frozen=True)
class EpsilonParams:
    trials: int = 100
    contact_sigma: float = 0.0025
    mu_mean: float = 0.5
    mu_std: float = 0.1
    mu_min: float = 0.05


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    c1: np.ndarray
    c2: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    epsilon: float = 0.0
    x_axis: np.ndarray = field(init=False)
    width: float = field(init=False)

    def __post_init__(self):
        for name in ("c1", "c2", "n1", "n2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        d = self.c2 - self.c1
        w = float(np.linalg.norm(d))
        if w < 1e-9:
            raise ValueError("coincident contacts")
        object.__setattr__(self, "width", w)
        object.__setattr__(self, "x_axis", d / w)

    @property
    def center(self):
        return 0.5 * (self.c1 + self.c2)

    def swapped(self):
        return GraspCandidate(self.c2, self.c1, self.n2, self.n1, self.epsilon)

    def transformed(self, tf: Transform):
        return GraspCandidate(tf.apply(self.c1), tf.apply(self.c2),
                              tf.apply_vector(self.n1), tf.apply_vector(self.n2), self.epsilon)

    def to_dict(self):
        return {"c1": self.c1.tolist(), "c2": self.c2.tolist(), "n1": self.n1.tolist(),
                "n2": self.n2.tolist(), "epsilon": float(self.epsilon)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["c1"]), np.array(d["c2"]), np.array(d["n1"]), np.array(d["n2"]),
                   float(d["epsilon"]))


@dataclass(frozen=True, eq=False)
class OrientedGrasp:
    """World-frame grasp with a full orientation (x toward ``c2``, z = approach)."""

    candidate: GraspCandidate
    rotation: np.ndarray
    tcp: np.ndarray
    quality: int
    collision_free: bool = True

    @property
    def matrix(self):
        return quat_to_matrix(self.rotation)

    @property
    def approach(self):
        return self.matrix[:, 2]


# ------------------------------------------------------------ force closure

def _closure_arrays(c1, c2, n1, n2, mu):
    c1, c2, n1, n2 = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (c1, c2, n1, n2))
    d = c2 - c1
    w = np.linalg.norm(d, axis=1)
    ok = w >= 1e-9
    a = d / np.where(ok, w, 1.0)[:, None]
    cos_lim = np.cos(np.arctan(np.asarray(mu, dtype=float)))
    cos1 = np.einsum("ij,ij->i", n1, -a) / np.linalg.norm(n1, axis=1)
    cos2 = np.einsum("ij,ij->i", n2, a) / np.linalg.norm(n2, axis=1)
    return ok & (cos1 >= cos_lim) & (cos2 >= cos_lim)


def force_closure(c1, c2, n1, n2, mu) -> bool:
    """Two-contact antipodality: the axis lies in both friction cones.

    ``n1`` and ``n2`` are outward surface normals; the axis runs from ``c1`` to ``c2``.
    """
    if np.linalg.norm(np.asarray(c2, dtype=float) - np.asarray(c1, dtype=float)) < 1e-9:
        raise ValueError("coincident contacts")
    return bool(_closure_arrays(c1, c2, n1, n2, mu)[0])


def label_quality(epsilon, collision_free, delta=0.5) -> int:
    return int(epsilon >= delta and bool(collision_free))


# ------------------------------------------------------------------ sampling

def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _mesh_span(mesh: TriMesh):
    return 2.0 * float(np.linalg.norm(mesh.extents)) + 1.0


def jaw_contacts(mesh: TriMesh, p1, p2):
    """Closing-jaw contacts along the lines p1->p2 (batched).

    Each jaw starts far outside the mesh on its side of the line and moves
    inward; returns ``(ok, c1, c2, n1, n2)`` with outward normals.
    """
    p1 = np.atleast_2d(p1)
    p2 = np.atleast_2d(p2)
    d = p2 - p1
    norm = np.linalg.norm(d, axis=1)
    valid = norm > 1e-12
    a = d / np.where(valid, norm, 1.0)[:, None]
    span = _mesh_span(mesh) + norm
    t1, f1 = mesh.ray_hits(p1 - span[:, None] * a, a)
    t2, f2 = mesh.ray_hits(p2 + span[:, None] * a, -a)
    ok = valid & (f1 >= 0) & (f2 >= 0)
    c1 = p1 - span[:, None] * a + np.where(ok, t1, 0.0)[:, None] * a
    c2 = p2 + span[:, None] * a - np.where(ok, t2, 0.0)[:, None] * a
    n1 = mesh.face_normals[np.where(ok, f1, 0)]
    n2 = mesh.face_normals[np.where(ok, f2, 0)]
    # jaws must meet the object from opposite sides
    ok &= np.einsum("ij,ij->i", c2 - c1, a) > 1e-9
    return ok, c1, c2, n1, n2


def _draw_mu(rng, n, params: EpsilonParams):
    if params.mu_std == 0:
        return np.full(n, max(params.mu_mean, params.mu_min))
    mu = rng.normal(params.mu_mean, params.mu_std, size=n)
    bad = mu < params.mu_min
    while bad.any():
        mu[bad] = rng.normal(params.mu_mean, params.mu_std, size=int(bad.sum()))
        bad = mu < params.mu_min
    return mu


def robust_epsilon(mesh: TriMesh, candidate: GraspCandidate, params: EpsilonParams = EpsilonParams(),
                   seed=None) -> float:
    """Fraction of perturbed realisations of ``candidate`` that stay in force closure."""
    rng = _as_rng(seed)
    m = params.trials
    if m <= 0:
        return 0.0
    p1 = candidate.c1 + rng.normal(0.0, 1.0, size=(m, 3)) * params.contact_sigma
    p2 = candidate.c2 + rng.normal(0.0, 1.0, size=(m, 3)) * params.contact_sigma
    mu = _draw_mu(rng, m, params)
    ok, c1, c2, n1, n2 = jaw_contacts(mesh, p1, p2)
    closed = ok & _closure_arrays(c1, c2, n1, n2, mu)
    return float(np.count_nonzero(closed)) / m


def _cone_directions(rng, axis, half_angle, k):
    """``k`` directions uniform over the spherical cap of ``half_angle`` around ``axis``."""
    cos_t = rng.uniform(np.cos(half_angle), 1.0, size=k)
    phi = rng.uniform(0.0, 2 * np.pi, size=k)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t ** 2))
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return (cos_t[:, None] * axis + sin_t[:, None] * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v))


def sample_contact_pairs(mesh: TriMesh, gripper: GripperModel = GripperModel(), max_grasps=100, k=6,
                         seed=None, eps_params: EpsilonParams = EpsilonParams(), max_attempts=None):
    """Antipodal contact pairs, keeping the highest-epsilon of ``k`` axes per contact."""
    rng = _as_rng(seed)
    if max_attempts is None:
        max_attempts = 20 * max_grasps
    half_angle = np.arctan(gripper.friction)
    prob = mesh.face_areas / mesh.face_areas.sum()
    span = _mesh_span(mesh)
    tol = 1e-9 * span
    out = []
    for _ in range(max_attempts):
        if len(out) >= max_grasps:
            break
        f = rng.choice(len(prob), p=prob)
        r1, r2 = rng.uniform(size=2)
        if r1 + r2 > 1.0:
            r1, r2 = 1.0 - r1, 1.0 - r2
        a, b, c = mesh.triangles[f]
        c1 = a + r1 * (b - a) + r2 * (c - a)
        n1 = mesh.face_normals[f]
        axes = _cone_directions(rng, -n1, half_angle, k)
        ok, j1, c2, _, n2 = jaw_contacts(mesh, c1[None] - 1e-3 * axes, c1[None] + 1e-3 * axes)
        # the sampled point must be where the jaw on its side lands
        ok &= np.linalg.norm(j1 - c1, axis=1) <= tol
        width = np.linalg.norm(c2 - c1, axis=1)
        ok &= (width <= gripper.max_width) & (width > 1e-6)
        ok &= _closure_arrays(np.broadcast_to(c1, c2.shape), c2, np.broadcast_to(n1, n2.shape), n2,
                              gripper.friction)
        best = None
        for i in np.flatnonzero(ok):
            cand = GraspCandidate(c1, c2[i], n1, n2[i])
            eps = robust_epsilon(mesh, cand, eps_params, rng)
            if best is None or eps > best.epsilon:
                best = replace(cand, epsilon=eps)
        if best is not None:
            out.append(best)
    if not out:
        log.warning("no feasible grasps found after %d contacts", max_attempts)
    return out


# ----------------------------------------------------------- orientation

def _canonical_axis(x):
    x = np.asarray(x, dtype=float)
    s = np.sign(x[np.argmax(np.abs(x))])
    return x * (s if s != 0 else 1.0)


def hinge_approaches(x_axis, steps=HINGE_STEPS):
    """Approach directions obtained by hinge-rotating about the grasp axis.

    Step 0 is the downward direction in the plane of world -z and the axis;
    the axis sign is canonicalised so that ``x`` and ``-x`` give the same list.
    """
    xc = _canonical_axis(x_axis)
    xc = xc / np.linalg.norm(xc)
    down = np.array([0.0, 0.0, -1.0])
    ref = down - np.dot(down, xc) * xc
    if np.linalg.norm(ref) < 1e-9:
        ref = np.array([1.0, 0.0, 0.0]) - xc[0] * xc
    ref /= np.linalg.norm(ref)
    side = np.cross(xc, ref)
    ang = 2 * np.pi * np.arange(steps) / steps
    return np.cos(ang)[:, None] * ref + np.sin(ang)[:, None] * side


def choose_orientation(free, approaches, principal_ray):
    """Index of the chosen hinge step among collision-free ones, or ``None``.

    Contiguous (circular) free runs are reduced to their lower median; the
    run whose median approach best aligns with the camera ray wins.
    """
    free = np.asarray(free, dtype=bool)
    n = len(free)
    if not free.any():
        return None
    scores = np.asarray(approaches) @ np.asarray(principal_ray, dtype=float)
    if free.all():
        return int(np.argmax(scores))
    best, best_score = None, -np.inf
    for start in range(n):
        if not free[start] or free[start - 1]:
            continue
        run = [start]
        while free[(run[-1] + 1) % n]:
            run.append((run[-1] + 1) % n)
        median = run[(len(run) - 1) // 2]
        if scores[median] > best_score:
            best, best_score = median, scores[median]
    return best


def _hinge_free(scene, candidates, gripper, steps, margin, sweep):
    """(n, steps) collision-free flags and the (n, steps, 3) approach directions."""
    approaches = np.array([hinge_approaches(c.x_axis, steps) for c in candidates]).reshape(-1, steps, 3)
    if not candidates:
        return np.zeros((0, steps), dtype=bool), approaches
    centers, rots, halves = [], [], []
    for c, apps in zip(candidates, approaches):
        for z in apps:
            ce, ro, ha = gripper.box_arrays(frame_from_axes(c.x_axis, z), c.center,
                                            margin=margin, sweep=sweep)
            centers.append(ce)
            rots.append(ro)
            halves.append(ha)
    hit = boxes_collide(scene, np.concatenate(centers), np.concatenate(rots), np.concatenate(halves))
    return ~hit.reshape(len(candidates), steps, 3).any(axis=2), approaches


def select_orientation(candidate: GraspCandidate, scene: Scene, camera_pose: Transform,
                       gripper: GripperModel = GripperModel(), steps=HINGE_STEPS, delta=0.5,
                       margin=0.0, sweep=0.0):
    """Collision-free orientation for a world-frame candidate, or ``None`` if all collide.

    Collisions are tested with the fingers open at ``max_width``; ``sweep``
    additionally covers the straight approach ending at the grasp.
    """
    free, apps = _hinge_free(scene, [candidate], gripper, steps, margin, sweep)
    idx = choose_orientation(free[0], apps[0], camera_pose.R[:, 2])
    if idx is None:
        return None
    r = frame_from_axes(candidate.x_axis, apps[0][idx])
    return OrientedGrasp(candidate, matrix_to_quat(r), candidate.center,
                         label_quality(candidate.epsilon, True, delta), True)


def orient_grasps(candidates, scene: Scene, camera_pose: Transform, gripper: GripperModel = GripperModel(),
                  steps=HINGE_STEPS, delta=0.5, margin=0.0, sweep=0.0):
    """Orient every world-frame candidate; colliding ones keep hinge step 0 and quality 0."""
    free, apps = _hinge_free(scene, list(candidates), gripper, steps, margin, sweep)
    ray = camera_pose.R[:, 2]
    out = []
    for c, fr, ap in zip(candidates, free, apps):
        idx = choose_orientation(fr, ap, ray)
        ok = idx is not None
        r = frame_from_axes(c.x_axis, ap[idx if ok else 0])
        out.append(OrientedGrasp(c, matrix_to_quat(r), c.center,
                                 label_quality(c.epsilon, ok, delta), ok))
    return out


# ------------------------------------------------------ execution checks

def closure_contacts(scene: Scene, rotation, tcp, gripper: GripperModel = GripperModel()):
    """Contacts found by closing the open jaws along the grasp x-axis.

    Returns ``(c1, c2, n1, n2)`` in world frame (outward normals) or ``None``
    when either jaw meets no object surface within the opening.
    """
    r = np.asarray(rotation, dtype=float)
    x = r[:, 0]
    tcp = np.asarray(tcp, dtype=float)
    half = gripper.max_width / 2.0
    origins = np.array([tcp - half * x, tcp + half * x])
    dirs = np.array([x, -x])
    t, f = scene.object_hits(origins, dirs)
    if np.any(f < 0) or np.any(t > gripper.max_width):
        return None
    c1 = origins[0] + t[0] * x
    c2 = origins[1] - t[1] * x
    if np.dot(c2 - c1, x) <= 1e-9:
        return None
    n1, n2 = scene.world_normals[f[0]], scene.world_normals[f[1]]
    if np.dot(n1, x) > 0:
        n1 = -n1
    if np.dot(n2, -x) > 0:
        n2 = -n2
    return c1, c2, n1, n2


def grasp_executable(scene: Scene, rotation, tcp, gripper: GripperModel = GripperModel(), mu=None,
                     approach=0.15, margin=0.0) -> bool:
    """Swept approach is collision-free and the closing jaws end in force closure."""
    mu = gripper.friction if mu is None else mu
    centers, rots, halves = gripper.box_arrays(rotation, tcp, margin=margin, sweep=approach)
    if boxes_collide(scene, centers, rots, halves).any():
        return False
    contacts = closure_contacts(scene, rotation, tcp, gripper)
    return contacts is not None and force_closure(*contacts, mu)
