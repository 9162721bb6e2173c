import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog
from scipy.spatial import Delaunay

from conftest import unit_cube_obj
from contactgrasp.mesh import (MeshError, NotWatertightError, OrientedBox, Scene, TriMesh, box_collides,
                               boxes_collide, characteristic_width, load_mesh, raycast, rescale_to_width,
                               save_obj, save_stl, stable_poses)
from contactgrasp.primitives import box, cube, icosphere
from contactgrasp.transforms import Transform, quat_to_matrix, random_quaternion


# ------------------------------------------------------------------- loading

def test_unit_cube_file(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(unit_cube_obj())
    m = load_mesh(p)
    assert len(m.vertices) == 8 and len(m.faces) == 12
    assert np.allclose(m.com, [0.5, 0.5, 0.5], atol=1e-12)
    assert np.isclose(m.volume, 1.0)


def test_open_edge_reports_defects(tmp_path):
    text = "\n".join(unit_cube_obj().splitlines()[:-1]) + "\n"  # drop one quad
    p = tmp_path / "open.obj"
    p.write_text(text)
    with pytest.raises(NotWatertightError) as err:
        load_mesh(p)
    assert err.value.defect_count == 4


def test_unparseable_file(tmp_path):
    p = tmp_path / "junk.stl"
    p.write_text("solid x\nfacet normal 0 0 1\n outer loop\n vertex 1 2\n")
    with pytest.raises(MeshError):
        load_mesh(p)


@pytest.mark.parametrize("binary", [True, False])
def test_stl_round_trip(tmp_path, binary):
    m = icosphere(0.03, 2)
    p = tmp_path / "s.stl"
    save_stl(m, p, binary=binary)
    back = load_mesh(p)
    assert len(back.faces) == len(m.faces)
    assert np.isclose(back.volume, m.volume, rtol=1e-5)


def test_icosphere_com_at_centroid(tmp_path):
    p = tmp_path / "ico.obj"
    save_obj(icosphere(1.0, 3), p)
    m = load_mesh(p)
    assert np.linalg.norm(m.com) <= 1e-6


def test_mesh_invariants(primitives):
    for m in primitives.values():
        assert m.faces.max() < len(m.vertices)
        assert np.allclose(np.linalg.norm(m.face_normals, axis=1), 1.0, atol=1e-6)
        # com inside the hull
        assert Delaunay(m.vertices[np.unique(m.hull_faces)]).find_simplex(m.com) >= 0


# ----------------------------------------------------------------- rescaling

@given(st.floats(0.01, 0.5))
def test_rescale_hits_target_width(target):
    m = rescale_to_width(box(0.02, 0.5, 0.1), target)
    assert abs(characteristic_width(m) - target) <= 1e-9


def test_rescale_rejects_nonpositive():
    with pytest.raises(ValueError):
        rescale_to_width(cube(1.0), 0.0)


# -------------------------------------------------------------- stable poses

def test_cube_has_six_equal_poses():
    poses = stable_poses(cube(0.065), n_samples=10000, seed=0)
    assert len(poses) == 6
    for p in poses:
        assert abs(p.probability - 1 / 6) <= 0.05


def _rect_solid_angle(a, b, d):
    """Solid angle of an a x b rectangle seen from distance d on its axis."""
    return 4.0 * np.arcsin(a * b / np.sqrt((a * a + 4 * d * d) * (b * b + 4 * d * d)))


def test_tall_box_matches_solid_angle_oracle():
    sx, sy, sz = 1.0, 1.0, 10.0
    n = 10000
    poses = stable_poses(box(sx, sy, sz), n_samples=n, seed=3)
    end = _rect_solid_angle(sx, sy, sz / 2) / (4 * np.pi)
    side = _rect_solid_angle(sy, sz, sx / 2) / (4 * np.pi)
    assert np.isclose(2 * end + 4 * side, 1.0)
    for p in poses:
        z = quat_to_matrix(p.rotation).T @ [0, 0, -1]  # facet normal in object frame
        expected = end if abs(z[2]) > 0.9 else side
        tol = 3 * np.sqrt(expected * (1 - expected) / n)
        assert abs(p.probability - expected) <= tol + 1e-12
    assert poses[-1].probability < 0.01


@pytest.mark.parametrize("name", ["cube", "box", "cylinder", "lprism", "wedge"])
def test_pose_invariants(primitives, name):
    mesh = primitives[name]
    poses = stable_poses(mesh)
    assert 1 <= len(poses) <= 25
    assert sum(p.probability for p in poses) <= 1 + 1e-6
    probs = [p.probability for p in poses]
    assert probs == sorted(probs, reverse=True)
    for p in poses:
        tf = p.transform(mesh, xy=(0.1, -0.05), yaw=0.7)
        v = tf.apply(mesh.vertices)
        assert abs(v[:, 2].min()) <= 1e-6
        assert np.isclose(tf.apply(mesh.com)[2], p.height, atol=1e-9)
        assert np.allclose(tf.apply(mesh.com)[:2], [0.1, -0.05], atol=1e-12)


def test_max_poses_cap(primitives):
    assert len(stable_poses(primitives["cylinder"], max_poses=3)) == 3


# ---------------------------------------------------------------- ray casts

def test_ray_down_onto_cube():
    m = cube(0.1)
    scene = Scene(m, Transform(translation=[0, 0, 0.05]))
    hit = raycast(scene, [0.01, 0.02, 1.0], [0, 0, -1])
    assert hit.entity == "object"
    assert np.isclose(hit.distance, 0.9)
    assert np.allclose(hit.normal, [0, 0, 1])


def test_ray_misses_object_hits_plane():
    scene = Scene(cube(0.1), Transform(translation=[0, 0, 0.05]))
    hit = raycast(scene, [1.0, 1.0, 1.0], [0, 0, -1])
    assert hit.entity == "plane" and np.isclose(hit.distance, 1.0)
    assert raycast(scene, [1.0, 1.0, 1.0], [0, 0, 1]) is None
    with pytest.raises(ValueError):
        raycast(scene, [0, 0, 1], [0, 0, -2])


def test_ray_hits_sphere_analytically(rng):
    r = 0.05
    scene = Scene(icosphere(r, 4), Transform(translation=[0, 0, r]))
    for _ in range(50):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        origin = np.array([0, 0, r]) - 0.5 * d
        hit = raycast(scene, origin, d)
        assert hit.entity == "object"
        # faceted sphere lies between inscribed and circumscribed radius
        assert 0.5 - r - 1e-12 <= hit.distance <= 0.5 - r * 0.99


def test_scene_rejects_penetration():
    with pytest.raises(ValueError):
        Scene(cube(0.1), Transform(translation=[0, 0, 0.04]))


# ------------------------------------------------------------ box collision

def test_box_examples():
    scene = Scene(cube(0.1), Transform(translation=[0, 0, 0.05]))
    q = np.array([1.0, 0, 0, 0])
    assert box_collides(scene, OrientedBox([0, 0, 0.05], [0.01, 0.01, 0.01], q)) is False  # strictly inside
    assert box_collides(scene, OrientedBox([0.05, 0, 0.05], [0.01, 0.01, 0.01], q)) is True
    assert box_collides(scene, OrientedBox([0.5, 0, 0.005], [0.01, 0.01, 0.01], q)) is True  # plane
    assert box_collides(scene, OrientedBox([0.5, 0, 0.2], [0.01, 0.01, 0.01], q)) is False
    with pytest.raises(ValueError):
        OrientedBox([0, 0, 0], [0.0, 1, 1], q)


def _lp_scale(tri, center, rot, half):
    """Smallest box scale s at which the box touches the triangle (LP oracle)."""
    # variables: barycentric l1, l2, l3 and s; minimise s
    a_ub, b_ub = [], []
    for k in range(3):
        axis = rot[:, k]
        proj = tri @ axis
        c = center @ axis
        a_ub.append([*proj, -half[k]])
        b_ub.append(c)
        a_ub.append([*(-proj), -half[k]])
        b_ub.append(-c)
    res = linprog([0, 0, 0, 1], A_ub=a_ub, b_ub=b_ub, A_eq=[[1, 1, 1, 0]], b_eq=[1],
                  bounds=[(0, None)] * 4, method="highs")
    assert res.status == 0
    return res.x[3]


def test_box_collision_matches_lp_oracle():
    rng = np.random.default_rng(2024)
    faces = np.array([[0, 1, 2], [0, 3, 1], [1, 3, 2], [2, 3, 0]])
    checked = 0
    for _ in range(1000):
        verts = rng.uniform(-0.05, 0.05, size=(4, 3)) + [0, 0, 0.1]
        try:
            mesh = TriMesh.from_arrays(verts, faces)
        except MeshError:
            continue
        scene = Scene(mesh)
        center = rng.uniform([-0.08, -0.08, 0.0], [0.08, 0.08, 0.2])
        rot = quat_to_matrix(random_quaternion(rng))
        half = rng.uniform(0.005, 0.05, size=3)
        s = min(_lp_scale(t, center, rot, half) for t in scene.world_triangles)
        low = center[2] - np.abs(rot[2]) @ half
        if abs(s - 1) < 1e-7 or abs(low) < 1e-9:
            continue  # touching configurations are tolerance-dependent
        expected = s < 1 or low < 0
        got = boxes_collide(scene, center[None], rot[None], half[None])[0]
        assert got == expected
        checked += 1
    assert checked >= 990
