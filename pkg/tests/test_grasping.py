import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contactgrasp.camera import look_at
from contactgrasp.grasping import (EpsilonParams, GraspCandidate, GripperModel, choose_orientation,
                                   closure_contacts, force_closure, grasp_executable, hinge_approaches,
                                   jaw_contacts, label_quality, robust_epsilon, sample_contact_pairs,
                                   select_orientation)
from contactgrasp.mesh import Scene, boxes_collide
from contactgrasp.primitives import cube, icosphere
from contactgrasp.transforms import Transform, frame_from_axes

MU = 0.5


# ------------------------------------------------------------ force closure

def test_opposite_faces_in_closure():
    assert force_closure([0, 0, 0], [1, 0, 0], [-1, 0, 0], [1, 0, 0], MU)


def test_parallel_normals_not_in_closure():
    assert not force_closure([0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 1, 0], MU)


def test_friction_cone_boundary():
    half = np.arctan(MU)
    inside = [-np.cos(half - 1e-6), np.sin(half - 1e-6), 0]
    outside = [-np.cos(half + 1e-6), np.sin(half + 1e-6), 0]
    assert force_closure([0, 0, 0], [1, 0, 0], inside, [1, 0, 0], MU)
    assert not force_closure([0, 0, 0], [1, 0, 0], outside, [1, 0, 0], MU)


def test_coincident_contacts_rejected():
    with pytest.raises(ValueError):
        force_closure([0, 0, 0], [0, 0, 0], [-1, 0, 0], [1, 0, 0], MU)
    with pytest.raises(ValueError):
        GraspCandidate(np.zeros(3), np.zeros(3), [-1, 0, 0], [1, 0, 0])


@given(st.floats(0.05, 2.0), st.integers(0, 2**32 - 1))
def test_closure_symmetric_under_swap(mu, seed):
    rng = np.random.default_rng(seed)
    c1, c2, n1, n2 = rng.normal(size=(4, 3))
    assert force_closure(c1, c2, n1, n2, mu) == force_closure(c2, c1, n2, n1, mu)


@pytest.mark.parametrize("eps, free, delta, expected", [
    (0.3, True, 0.5, 0),
    (0.3, False, 0.5, 0),
    (0.7, True, 0.5, 1),
    (0.7, False, 0.5, 0),
    (0.5, True, 0.5, 1),  # boundary counts as robust
    (0.5, False, 0.5, 0),
    (1.0, True, 1.0, 1),
    (0.0, True, 0.0, 1),
])
def test_label_quality_table(eps, free, delta, expected):
    assert label_quality(eps, free, delta) == expected


# ------------------------------------------------------------ robust epsilon

def sphere_epsilon_oracle(c1, c2, radius, params: EpsilonParams, n, rng):
    """Analytic sphere version of the perturbed-contact closure rate."""
    p1 = c1 + rng.normal(size=(n, 3)) * params.contact_sigma
    p2 = c2 + rng.normal(size=(n, 3)) * params.contact_sigma
    mu = rng.normal(params.mu_mean, params.mu_std, size=n)
    while (mu < params.mu_min).any():
        bad = mu < params.mu_min
        mu[bad] = rng.normal(params.mu_mean, params.mu_std, size=bad.sum())
    a = p2 - p1
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    # squared distance of the line from the sphere centre
    proj = np.einsum("ij,ij->i", -p1, a)
    d2 = np.einsum("ij,ij->i", p1, p1) - proj ** 2
    hit = d2 < radius ** 2
    # contact normals make angle asin(d / r) with the axis at both ends
    cos_contact = np.sqrt(np.clip(1 - d2 / radius ** 2, 0, 1))
    ok = hit & (cos_contact >= 1 / np.sqrt(1 + mu ** 2))
    return ok.mean()


@pytest.fixture(scope="module")
def sphere():
    return icosphere(0.03, 4)


def test_diametral_sphere_grasp_is_robust(sphere):
    n, p = 100_000, EpsilonParams()
    c1, c2 = np.array([-0.03, 0, 0]), np.array([0.03, 0, 0])
    oracle = sphere_epsilon_oracle(c1, c2, 0.03, p, n, np.random.default_rng(0))
    cand = GraspCandidate(c1, c2, [-1, 0, 0], [1, 0, 0])
    eps = robust_epsilon(sphere, cand, EpsilonParams(trials=n), seed=1)
    tol = 3 * np.sqrt(2 * oracle * (1 - oracle) / n) + 1e-3
    assert oracle >= 0.95
    assert eps >= 0.95 - tol
    assert abs(eps - oracle) <= tol + 0.005  # faceting allowance


def test_grazing_sphere_grasp_is_fragile(sphere):
    n, p = 100_000, EpsilonParams()
    h = 0.9 * 0.03
    a = np.sqrt(0.03 ** 2 - h ** 2)
    c1, c2 = np.array([-a, 0, h]), np.array([a, 0, h])
    oracle = sphere_epsilon_oracle(c1, c2, 0.03, p, n, np.random.default_rng(0))
    cand = GraspCandidate(c1, c2, c1 / 0.03, c2 / 0.03)
    eps = robust_epsilon(sphere, cand, EpsilonParams(trials=n), seed=1)
    assert oracle <= 0.05
    assert eps <= 0.05 + 3 * np.sqrt(0.05 * 0.95 / n)


def test_epsilon_deterministic_per_seed(sphere):
    cand = GraspCandidate([-0.03, 0, 0], [0.03, 0, 0], [-1, 0, 0], [1, 0, 0])
    assert robust_epsilon(sphere, cand, seed=5) == robust_epsilon(sphere, cand, seed=5)
    assert robust_epsilon(sphere, cand, EpsilonParams(trials=0)) == 0.0


# ------------------------------------------------------------------ sampler

@pytest.fixture(scope="module")
def cube_grasps():
    return sample_contact_pairs(cube(0.065), GripperModel(), max_grasps=40, seed=0)


def test_cube_grasps_span_opposite_faces(cube_grasps):
    assert len(cube_grasps) == 40
    for g in cube_grasps:
        assert 0.065 - 1e-9 <= g.width <= 0.08
        assert np.isclose(g.n1 @ g.n2, -1)
        assert force_closure(g.c1, g.c2, g.n1, g.n2, MU)
        assert 0.0 <= g.epsilon <= 1.0


def test_sampler_invariants_on_primitives(primitives):
    gripper = GripperModel()
    for mesh in primitives.values():
        grasps = sample_contact_pairs(mesh, gripper, max_grasps=15, seed=1)
        assert 0 < len(grasps) <= 15
        for g in grasps:
            assert g.width <= gripper.max_width + 1e-12
            assert force_closure(g.c1, g.c2, g.n1, g.n2, gripper.friction)
            # contacts are where closing jaws land
            ok, j1, j2, _, _ = jaw_contacts(mesh, g.c1, g.c2)
            assert ok[0] and np.allclose(j1[0], g.c1, atol=1e-9) and np.allclose(j2[0], g.c2, atol=1e-9)


def test_sampler_deterministic():
    a = sample_contact_pairs(cube(0.065), max_grasps=5, seed=11)
    b = sample_contact_pairs(cube(0.065), max_grasps=5, seed=11)
    assert [g.to_dict() for g in a] == [g.to_dict() for g in b]


def test_too_wide_object_yields_nothing(caplog):
    assert sample_contact_pairs(cube(0.12), max_grasps=5, seed=0, max_attempts=50) == []
    assert "no feasible grasps" in caplog.text


def test_sphere_axes_pass_near_centre():
    r = 0.03
    grasps = sample_contact_pairs(icosphere(r, 4), max_grasps=30, seed=2)
    assert grasps
    bound = r * np.sin(np.arctan(MU)) + 1e-3  # cone limit plus faceting slack
    for g in grasps:
        x = g.x_axis
        d = np.linalg.norm(np.cross(-g.c1, x))
        assert d <= bound


# -------------------------------------------------------------- orientation

@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_hinge_approaches_perpendicular_and_swap_invariant(seed):
    x = np.random.default_rng(seed).normal(size=3)
    x /= np.linalg.norm(x)
    a = hinge_approaches(x)
    assert a.shape == (24, 3)
    assert np.allclose(a @ x, 0, atol=1e-12)
    assert np.allclose(np.linalg.norm(a, axis=1), 1)
    assert np.array_equal(a, hinge_approaches(-x))
    if abs(x[2]) < 0.99:
        assert a[0] @ [0, 0, -1] > 0  # step 0 points down


def test_choose_orientation_prefers_camera_aligned_run():
    apps = hinge_approaches([1.0, 0, 0])
    ray = apps[6]
    free = np.zeros(24, dtype=bool)
    free[[0, 1, 2]] = True
    free[[5, 6, 7]] = True
    assert choose_orientation(free, apps, ray) == 6
    assert choose_orientation(np.zeros(24, bool), apps, ray) is None
    assert choose_orientation(np.ones(24, bool), apps, ray) == 6


def test_choose_orientation_wraps_runs():
    apps = hinge_approaches([1.0, 0, 0])
    free = np.zeros(24, dtype=bool)
    free[[22, 23, 0, 1]] = True
    assert choose_orientation(free, apps, apps[12]) == 23  # lower median of the wrapped run


def _cube_scene():
    return Scene(cube(0.065), Transform(translation=[0, 0, 0.0325]))


def test_top_down_grasp_on_cube():
    scene = _cube_scene()
    cam = look_at([0, 0, 0.7], [0, 0, 0])
    cand = GraspCandidate([-0.0325, 0, 0.04], [0.0325, 0, 0.04], [-1, 0, 0], [1, 0, 0], epsilon=0.9)
    g = select_orientation(cand, scene, cam, sweep=0.15, margin=0.002)
    assert g is not None and g.quality == 1
    assert g.approach @ [0, 0, -1] > 0.5
    r = g.matrix
    centers, rots, halves = GripperModel().box_arrays(r, g.tcp, sweep=0.15)
    assert not boxes_collide(scene, centers, rots, halves).any()
    assert grasp_executable(scene, r, g.tcp)


def test_low_grasp_collides_with_table():
    scene = _cube_scene()
    cam = look_at([0, 0, 0.7], [0, 0, 0])
    cand = GraspCandidate([-0.0325, 0, 0.001], [0.0325, 0, 0.001], [-1, 0, 0], [1, 0, 0], epsilon=0.9)
    g = select_orientation(cand, scene, cam)
    # only approaches from above stay clear; the fingers reach below the table otherwise
    assert g is None or g.approach @ [0, 0, -1] > 0.9


def test_closure_contacts_on_cube():
    scene = _cube_scene()
    r = frame_from_axes([1, 0, 0], [0, 0, -1])
    c = closure_contacts(scene, r, [0, 0, 0.04])
    assert c is not None
    assert np.allclose(c[0], [-0.0325, 0, 0.04]) and np.allclose(c[1], [0.0325, 0, 0.04])
    assert np.allclose(c[2], [-1, 0, 0]) and np.allclose(c[3], [1, 0, 0])
    assert closure_contacts(scene, r, [1.0, 0, 0.04]) is None


def test_gripper_geometry():
    g = GripperModel()
    centers, _, halves = g.box_arrays(np.eye(3), np.zeros(3))
    # fingertips on the tcp plane, inner faces at +-max_width / 2
    assert np.allclose(centers[:2, 2] + halves[:2, 2], 0)
    assert np.isclose(centers[0, 0] - halves[0, 0], g.max_width / 2)
    assert np.isclose(centers[2, 2] + halves[2, 2], -g.tcp_to_palm)
    with pytest.raises(ValueError):
        GripperModel(max_width=0)
