import numpy as np
import pytest

from contactgrasp.camera import sample_camera_pose
from contactgrasp.config import PipelineConfig
from contactgrasp.pipeline import label_view, place_object, prepare_object, rng_for
from contactgrasp.primitives import bundled_primitives


def unit_cube_obj():
    verts = [(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)]
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    lines = [f"v {x} {y} {z}" for x, y, z in verts]
    lines += ["f " + " ".join(str(i + 1) for i in q) for q in quads]
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def primitives():
    return bundled_primitives()


@pytest.fixture(scope="session")
def cfg():
    return PipelineConfig()


@pytest.fixture(scope="session")
def cube_assets(primitives, cfg):
    return prepare_object("cube", 0, primitives["cube"], cfg, rescale=False)


@pytest.fixture(scope="session")
def all_assets(primitives, cfg):
    return [prepare_object(name, i, mesh, cfg, rescale=False) for i, (name, mesh) in enumerate(primitives.items())]


@pytest.fixture(scope="session")
def labeled_views(all_assets, cfg):
    """A handful of rendered, labelled views across the bundled objects."""
    views = []
    for a in all_assets:
        for p in range(min(2, len(a.poses))):
            scene = place_object(a, a.poses[p])
            cam = sample_camera_pose([0.0, 0.0, 0.0], cfg.camera.bounds(), rng_for(7, a.index, p))
            views.append((a, scene, label_view(scene, a.candidates, cam, cfg)))
    return views


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
