"""Procedural test objects: boxes, extruded polygons and icospheres."""
from pathlib import Path

import numpy as np

from .mesh import TriMesh, save_stl


def _signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _ear_clip(poly):
    """Triangulate a simple CCW polygon; returns index triples."""
    idx = list(range(len(poly)))
    tris = []

    def is_convex(a, b, c):
        return _cross2(poly[b] - poly[a], poly[c] - poly[b]) > 0

    def contains(a, b, c, p):
        pa, pb, pc, pp = poly[a], poly[b], poly[c], poly[p]
        d1 = _cross2(pb - pa, pp - pa)
        d2 = _cross2(pc - pb, pp - pb)
        d3 = _cross2(pa - pc, pp - pc)
        return d1 >= 0 and d2 >= 0 and d3 >= 0

    while len(idx) > 3:
        for k in range(len(idx)):
            a, b, c = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            if not is_convex(a, b, c):
                continue
            if any(contains(a, b, c, p) for p in idx if p not in (a, b, c)):
                continue
            tris.append((a, b, c))
            idx.pop(k)
            break
        else:
            raise ValueError("polygon is not simple")
    tris.append(tuple(idx))
    return tris


def extrude(polygon, height) -> TriMesh:
    """Prism from a simple 2D polygon (xy) extruded along +z, centered on its bbox."""
    poly = np.asarray(polygon, dtype=float)
    if _signed_area(poly) < 0:
        poly = poly[::-1]
    n = len(poly)
    bottom = np.column_stack([poly, np.zeros(n)])
    top = np.column_stack([poly, np.full(n, float(height))])
    verts = np.vstack([bottom, top])
    faces = []
    for a, b, c in _ear_clip(poly):
        faces.append((n + a, n + b, n + c))
        faces.append((c, b, a))
    for i in range(n):
        j = (i + 1) % n
        faces.append((i, j, n + j))
        faces.append((i, n + j, n + i))
    verts -= 0.5 * (verts.max(axis=0) + verts.min(axis=0))
    return TriMesh.from_arrays(verts, faces)


def box(sx, sy, sz) -> TriMesh:
    return extrude([(0, 0), (sx, 0), (sx, sy), (0, sy)], sz)


def cube(edge=1.0) -> TriMesh:
    return box(edge, edge, edge)


def cylinder(radius, height, segments=32) -> TriMesh:
    ang = 2 * np.pi * np.arange(segments) / segments
    return extrude(np.column_stack([radius * np.cos(ang), radius * np.sin(ang)]), height)


def l_prism(outer, thickness, depth) -> TriMesh:
    o, t = outer, thickness
    return extrude([(0, 0), (o, 0), (o, t), (t, t), (t, o), (0, o)], depth)


def wedge(base, height, width) -> TriMesh:
    """Right-triangle prism: legs ``base`` (x) and ``height`` (z), extruded ``width`` along y."""
    m = extrude([(0, 0), (base, 0), (0, height)], width)
    # extruded along z; rotate so the triangle stands in the xz plane
    rot = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    return TriMesh.from_arrays(m.vertices @ rot.T, m.faces)


def icosphere(radius=1.0, subdivisions=3) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriMesh.from_arrays(np.array(verts) * radius, faces)


def bundled_primitives():
    """The five evaluation objects, each with characteristic width in [0.06, 0.10] m."""
    return {
        "cube": cube(0.065),
        "box": box(0.05, 0.065, 0.11),
        "cylinder": cylinder(0.031, 0.09, segments=32),
        "lprism": l_prism(0.08, 0.03, 0.065),
        "wedge": wedge(0.09, 0.05, 0.065),
    }


def write_bundled(out_dir, binary=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, mesh in bundled_primitives().items():
        p = out / f"{name}.stl"
        save_stl(mesh, p, binary=binary)
        paths.append(p)
    return paths
