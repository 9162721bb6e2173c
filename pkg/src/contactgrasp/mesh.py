"""Triangle meshes, stable resting poses, and scene queries (rays, box collisions)."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from . import _kernels
from .transforms import Transform, matrix_to_quat, quat_to_matrix, rotation_between


class MeshError(ValueError):
    """Mesh file could not be parsed or is unusable."""


class NotWatertightError(MeshError):
    def __init__(self, defect_count):
        super().__init__(f"mesh is not watertight: {defect_count} defective edges")
        self.defect_count = defect_count


def _edge_defects(faces):
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return int(np.count_nonzero(counts != 2))


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Watertight triangle mesh in meters with uniform-density center of mass.

    Construct through :meth:`from_arrays`, which validates and derives the
    normals, center of mass and convex hull.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray
    com: np.ndarray
    hull_faces: np.ndarray
    volume: float

    @classmethod
    def from_arrays(cls, vertices, faces):
        v = np.ascontiguousarray(vertices, dtype=float).reshape(-1, 3)
        f = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(v) < 4 or len(f) < 4:
            raise MeshError("mesh needs at least 4 vertices and 4 faces")
        if f.min() < 0 or f.max() >= len(v):
            raise MeshError("face index out of range")
        defects = _edge_defects(f)
        if defects:
            raise NotWatertightError(defects)
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        cross = np.cross(b - a, c - a)
        # signed tetrahedra against the origin
        vol6 = np.einsum("ij,ij->i", a, np.cross(b, c))
        volume = vol6.sum() / 6.0
        if abs(volume) < 1e-15:
            raise MeshError("mesh encloses zero volume")
        if volume < 0:
            f = f[:, [0, 2, 1]].copy()
            cross = -cross
            vol6 = -vol6
            volume = -volume
        com = ((a + b + c) * vol6[:, None]).sum(axis=0) / (24.0 * volume)
        norms = np.linalg.norm(cross, axis=1)
        normals = cross / np.where(norms > 0, norms, 1.0)[:, None]
        hull = ConvexHull(v)
        return cls(v, f, normals, com, np.asarray(hull.simplices, dtype=np.int64), float(volume))

    @cached_property
    def face_areas(self):
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @property
    def extents(self):
        return self.vertices.max(axis=0) - self.vertices.min(axis=0)

    @cached_property
    def triangles(self):
        return self.vertices[self.faces]

    @cached_property
    def _ray_arrays(self):
        tri = self.triangles
        v0 = np.ascontiguousarray(tri[:, 0])
        return v0, np.ascontiguousarray(tri[:, 1] - v0), np.ascontiguousarray(tri[:, 2] - v0)

    def transformed(self, tf: Transform) -> "TriMesh":
        return TriMesh.from_arrays(tf.apply(self.vertices), self.faces)

    def scaled(self, factor):
        return TriMesh.from_arrays(self.vertices * factor, self.faces)

    def ray_hits(self, origins, dirs, tmin=1e-12):
        """Nearest hit of each ray against this mesh: ``(t, face)``; miss is ``(inf, -1)``."""
        v0, e1, e2 = self._ray_arrays
        o = np.ascontiguousarray(np.atleast_2d(origins), dtype=float)
        d = np.ascontiguousarray(np.atleast_2d(dirs), dtype=float)
        return _kernels.ray_first_hits(o, d, v0, e1, e2, tmin)


# --------------------------------------------------------------------------- I/O

def _merge_vertices(soup):
    """Weld a (n, 3, 3) triangle soup into indexed vertices."""
    pts = soup.reshape(-1, 3)
    verts, inverse = np.unique(pts, axis=0, return_inverse=True)
    faces = inverse.reshape(-1, 3)
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    return verts, faces[keep]


def _read_stl(data: bytes):
    head = data[:5].lower()
    if len(data) >= 84:
        n = struct.unpack("<I", data[80:84])[0]
        if len(data) == 84 + 50 * n:
            rec = np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
            arr = np.frombuffer(data, dtype=rec, count=n, offset=84)
            return arr["v"].astype(float)
    if head != b"solid":
        raise MeshError("not an ASCII or binary STL file")
    tris = []
    cur = []
    for lineno, line in enumerate(data.decode("ascii", errors="replace").splitlines(), 1):
        tok = line.split()
        if tok and tok[0] == "vertex":
            try:
                cur.append([float(t) for t in tok[1:4]])
            except ValueError as exc:
                raise MeshError(f"bad vertex on line {lineno}") from exc
        elif tok and tok[0] == "endloop":
            if len(cur) != 3:
                raise MeshError(f"facet with {len(cur)} vertices ending line {lineno}")
            tris.append(cur)
            cur = []
    if not tris:
        raise MeshError("STL contains no facets")
    return np.array(tris, dtype=float)


def _read_obj(text: str):
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        tok = line.split()
        if not tok:
            continue
        try:
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except (ValueError, IndexError) as exc:
            raise MeshError(f"bad OBJ record on line {lineno}") from exc
    if not verts or not faces:
        raise MeshError("OBJ contains no geometry")
    return np.array(verts, dtype=float), np.array(faces, dtype=np.int64)


def load_mesh(path) -> TriMesh:
    """Load an STL (ASCII or binary) or OBJ file as a watertight :class:`TriMesh`."""
    path = Path(path)
    data = path.read_bytes()
    suffix = path.suffix.lower()
    if suffix == ".stl":
        verts, faces = _merge_vertices(_read_stl(data))
    elif suffix == ".obj":
        verts, faces = _read_obj(data.decode("utf-8", errors="replace"))
        # drop unreferenced vertices so they do not leak into the hull
        used, inv = np.unique(faces, return_inverse=True)
        verts, faces = verts[used], inv.reshape(-1, 3)
    else:
        raise MeshError(f"unsupported mesh format {suffix!r}")
    return TriMesh.from_arrays(verts, faces)


def _fmt(p):
    return " ".join(repr(float(x)) for x in p)


def save_stl(mesh: TriMesh, path, binary=True):
    tri = mesh.triangles
    path = Path(path)
    if binary:
        rec = np.zeros(len(tri), dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
        rec["n"] = mesh.face_normals
        rec["v"] = tri
        path.write_bytes(b"\0" * 80 + struct.pack("<I", len(tri)) + rec.tobytes())
    else:
        lines = ["solid mesh"]
        for n, t in zip(mesh.face_normals, tri):
            lines.append("facet normal " + _fmt(n))
            lines.append(" outer loop")
            lines.extend("  vertex " + _fmt(p) for p in t)
            lines.append(" endloop")
            lines.append("endfacet")
        lines.append("endsolid mesh")
        path.write_text("\n".join(lines) + "\n")


def save_obj(mesh: TriMesh, path):
    lines = ["v " + _fmt(p) for p in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


# ----------------------------------------------------------------- rescaling

def characteristic_width(mesh: TriMesh) -> float:
    """Median of the three axis-aligned bounding-box extents."""
    return float(np.median(mesh.extents))


def rescale_to_width(mesh: TriMesh, target_width: float) -> TriMesh:
    if target_width <= 0:
        raise ValueError("target_width must be positive")
    width = characteristic_width(mesh)
    if width <= 0:
        raise MeshError("mesh has zero characteristic width")
    return mesh.scaled(target_width / width)


# ------------------------------------------------------------- stable poses

@dataclass(frozen=True)
class StablePose:
    rotation: np.ndarray  # object -> world, unit quaternion (w, x, y, z)
    height: float  # com height above the plane
    probability: float
    facet: int = -1

    def transform(self, mesh: TriMesh, xy=(0.0, 0.0), yaw=0.0) -> Transform:
        """Object->world pose resting on z=0 with the com above ``xy``, rotated by ``yaw``."""
        c, s = np.cos(yaw), np.sin(yaw)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        r = rz @ quat_to_matrix(self.rotation)
        rv = mesh.vertices @ r.T
        rc = r @ mesh.com
        t = np.array([xy[0] - rc[0], xy[1] - rc[1], -rv[:, 2].min()])
        return Transform(matrix_to_quat(r), t)


@dataclass
class _Facet:
    normal: np.ndarray
    offset: float  # plane: normal . x = offset
    triangles: list
    boundary: list = field(default_factory=list)  # (i, j) vertex index pairs
    centroid: np.ndarray | None = None


def hull_facets(mesh: TriMesh, angle_tol=1e-4, area_tol=1e-10):
    """Group convex-hull triangles into planar facets."""
    hull = ConvexHull(mesh.vertices)
    simp = hull.simplices
    eq = hull.equations
    pts = mesh.vertices
    n_s = len(simp)
    parent = list(range(n_s))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    a, b, c = pts[simp[:, 0]], pts[simp[:, 1]], pts[simp[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    cos_tol = np.cos(angle_tol)
    for i in range(n_s):
        for j in hull.neighbors[i]:
            if j < 0 or j < i:
                continue
            if np.dot(eq[i, :3], eq[j, :3]) >= cos_tol:
                parent[find(i)] = find(j)
    for i in np.flatnonzero(areas < area_tol):
        nbrs = [j for j in hull.neighbors[i] if j >= 0]
        if nbrs:
            best = max(nbrs, key=lambda j: areas[j])
            parent[find(i)] = find(best)

    groups = {}
    for i in range(n_s):
        groups.setdefault(find(i), []).append(i)
    facets = []
    tri_facet = np.empty(n_s, dtype=np.int64)
    for k, members in enumerate(groups.values()):
        w = areas[members]
        normal = (eq[members, :3] * w[:, None]).sum(axis=0)
        normal /= np.linalg.norm(normal)
        centroid = ((a[members] + b[members] + c[members]) / 3.0 * w[:, None]).sum(axis=0) / w.sum()
        facets.append(_Facet(normal, float(np.dot(normal, centroid)), members, centroid=centroid))
        tri_facet[members] = k

    edge_owner = {}
    for i, s in enumerate(simp):
        for e in ((s[0], s[1]), (s[1], s[2]), (s[2], s[0])):
            edge_owner.setdefault(tuple(sorted(e)), []).append(i)
    adjacency = {}
    for edge, owners in edge_owner.items():
        fa = {int(tri_facet[o]) for o in owners}
        if len(fa) == 2:
            f1, f2 = sorted(fa)
            facets[f1].boundary.append(edge)
            facets[f2].boundary.append(edge)
            adjacency[(f1, edge)] = f2
            adjacency[(f2, edge)] = f1
    return facets, simp, adjacency


def _inside_facet(p, facet, pts, simp, tol=1e-12):
    for t in facet.triangles:
        a, b, c = pts[simp[t]]
        n = np.cross(b - a, c - a)
        nn = np.dot(n, n)
        if nn == 0:
            continue
        if (np.dot(np.cross(b - a, p - a), n) > tol * nn and np.dot(np.cross(c - b, p - b), n) > tol * nn
                and np.dot(np.cross(a - c, p - c), n) > tol * nn):
            return True
    return False


def _crossed_edge(facet, start, end, pts):
    """Boundary edge of ``facet`` crossed by the in-plane segment start->end."""
    n = facet.normal
    d = end - start
    best, best_s = None, np.inf
    for edge in facet.boundary:
        p, q = pts[edge[0]], pts[edge[1]]
        e = q - p
        denom = np.dot(np.cross(d, e), n)
        if abs(denom) < 1e-18:
            continue
        s = np.dot(np.cross(p - start, e), n) / denom  # along the segment
        r = np.dot(np.cross(p - start, d), n) / denom  # along the edge
        if -1e-9 <= r <= 1 + 1e-9 and s >= -1e-12 and s < best_s:
            best, best_s = edge, s
    return best


def stable_poses(mesh: TriMesh, max_poses=25, n_samples=10000, seed=0):
    """Resting poses on a plane and their quasi-static probabilities.

    Each of ``n_samples`` uniform gravity directions starts on the hull facet
    pierced by the ray from the com, then topples across the edge the projected
    com lies beyond until it reaches a facet that supports the com.
    """
    facets, simp, adjacency = hull_facets(mesh)
    pts = mesh.vertices
    com = mesh.com
    nf = len(facets)

    sink = np.empty(nf, dtype=np.int64)
    next_facet = np.full(nf, -1, dtype=np.int64)
    for k, f in enumerate(facets):
        p = com - (np.dot(f.normal, com) - f.offset) * f.normal
        if _inside_facet(p, f, pts, simp):
            continue
        edge = _crossed_edge(f, f.centroid, p, pts)
        if edge is not None:
            next_facet[k] = adjacency[(k, edge)]

    dist = np.array([f.offset - np.dot(f.normal, com) for f in facets])
    for k in range(nf):
        seen = []
        cur = k
        while next_facet[cur] >= 0 and cur not in seen:
            seen.append(cur)
            cur = int(next_facet[cur])
        if next_facet[cur] >= 0:
            # toppling cycle (numerically flat); rest on the lowest-energy member
            cycle = seen[seen.index(cur):]
            cur = min(cycle, key=lambda i: dist[i])
        sink[k] = cur

    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_samples, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    normals = np.array([f.normal for f in facets])
    cosines = dirs @ normals.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(cosines > 1e-12, dist[None, :] / cosines, np.inf)
    start = np.argmin(t, axis=1)
    counts = np.bincount(sink[start], minlength=nf)

    poses = []
    for k in np.flatnonzero(counts):
        r = rotation_between(facets[k].normal, [0.0, 0.0, -1.0])
        poses.append(StablePose(matrix_to_quat(r), float(dist[k]), counts[k] / n_samples, int(k)))
    poses.sort(key=lambda p: (-p.probability, p.facet))
    return poses[:max_poses]


# ------------------------------------------------------------------ scenes

@dataclass(frozen=True)
class OrientedBox:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray  # unit quaternion, box frame -> world

    def __post_init__(self):
        h = np.asarray(self.half_extents, dtype=float)
        if np.any(h <= 0):
            raise ValueError("box half extents must be positive")
        object.__setattr__(self, "half_extents", h)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))

    @property
    def axes(self):
        """Unit box axes as rows."""
        return quat_to_matrix(self.rotation).T

    def corners(self):
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        return self.center + (signs * self.half_extents) @ self.axes


@dataclass(frozen=True)
class Hit:
    distance: float
    point: np.ndarray
    normal: np.ndarray
    face: int
    entity: str  # "object" or "plane"


@dataclass(frozen=True, eq=False)
class Scene:
    """Single object resting on the plane z = 0 (the half-space z <= 0 is solid)."""

    mesh: TriMesh
    object_pose: Transform = field(default_factory=Transform)

    def __post_init__(self):
        z = self.world_vertices[:, 2].min()
        if z < -1e-5:
            raise ValueError(f"object penetrates the plane by {-z:.3g} m")

    @cached_property
    def world_vertices(self):
        return self.object_pose.apply(self.mesh.vertices)

    @cached_property
    def world_triangles(self):
        return np.ascontiguousarray(self.world_vertices[self.mesh.faces])

    @cached_property
    def world_normals(self):
        return self.object_pose.apply_vector(self.mesh.face_normals)

    @cached_property
    def _ray_arrays(self):
        tri = self.world_triangles
        v0 = np.ascontiguousarray(tri[:, 0])
        return v0, np.ascontiguousarray(tri[:, 1] - v0), np.ascontiguousarray(tri[:, 2] - v0)

    @cached_property
    def _tri_bounds(self):
        tri = self.world_triangles
        return np.ascontiguousarray(tri.min(axis=1)), np.ascontiguousarray(tri.max(axis=1))

    def object_hits(self, origins, dirs, tmin=1e-12):
        v0, e1, e2 = self._ray_arrays
        o = np.ascontiguousarray(np.atleast_2d(origins), dtype=float)
        d = np.ascontiguousarray(np.atleast_2d(dirs), dtype=float)
        return _kernels.ray_first_hits(o, d, v0, e1, e2, tmin)

    def cast(self, origins, dirs, tmin=1e-12, include_plane=True):
        """Batch nearest hits: ``(t, face, is_object)``; ``face`` is -1 for plane or miss."""
        o = np.atleast_2d(np.asarray(origins, dtype=float))
        d = np.atleast_2d(np.asarray(dirs, dtype=float))
        t_obj, face = self.object_hits(o, d, tmin)
        t = t_obj.copy()
        is_obj = np.isfinite(t_obj)
        if include_plane:
            with np.errstate(divide="ignore", invalid="ignore"):
                t_plane = np.where(d[:, 2] < 0, -o[:, 2] / d[:, 2], np.inf)
            t_plane = np.where(t_plane > tmin, t_plane, np.inf)
            plane_first = t_plane < t
            t = np.where(plane_first, t_plane, t)
            is_obj &= ~plane_first
            face = np.where(plane_first, -1, face)
        return t, face, is_obj


def raycast(scene: Scene, origin, direction):
    """Nearest hit against the object and the plane, or ``None`` for a miss."""
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    o = np.asarray(origin, dtype=float)
    t, face, is_obj = scene.cast(o[None], d[None])
    if not np.isfinite(t[0]):
        return None
    point = o + t[0] * d
    if is_obj[0]:
        n = scene.world_normals[face[0]]
        if np.dot(n, d) > 0:
            n = -n
        return Hit(float(t[0]), point, n, int(face[0]), "object")
    return Hit(float(t[0]), point, np.array([0.0, 0.0, 1.0]), -1, "plane")


def boxes_collide(scene: Scene, centers, rotations, halves):
    """Vectorised :func:`box_collides` for ``n`` boxes given as arrays.

    ``rotations`` are box->world rotation matrices ``(n, 3, 3)``.
    """
    centers = np.ascontiguousarray(centers, dtype=float).reshape(-1, 3)
    rotations = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    halves = np.ascontiguousarray(halves, dtype=float).reshape(-1, 3)
    axes = np.ascontiguousarray(np.transpose(rotations, (0, 2, 1)))
    # lowest point of each box
    z_ext = np.einsum("nk,nk->n", np.abs(rotations[:, 2, :]), halves)
    hit = centers[:, 2] - z_ext < 0.0
    todo = np.flatnonzero(~hit)
    if len(todo):
        lo, hi = scene._tri_bounds
        hit[todo] = _kernels.boxes_hit_triangles(
            np.ascontiguousarray(centers[todo]), np.ascontiguousarray(axes[todo]),
            np.ascontiguousarray(halves[todo]), scene.world_triangles, lo, hi)
    return hit


def box_collides(scene: Scene, box: OrientedBox) -> bool:
    """True iff ``box`` overlaps an object triangle or dips below the plane z = 0."""
    r = quat_to_matrix(box.rotation)
    return bool(boxes_collide(scene, box.center[None], r[None], box.half_extents[None])[0])
