"""Per-object dataset synthesis: poses, grasps, rendered views and their label maps."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import sample_camera_pose
from .config import PipelineConfig
from .dataset import Sample, sample_dir, write_sample
from .grasping import GraspCandidate, orient_grasps, sample_contact_pairs
from .mesh import Scene, StablePose, TriMesh, characteristic_width, load_mesh, rescale_to_width, stable_poses
from .render import SparseGraspMap, apply_sensor_noise, project_contacts, render_depth
from .transforms import Transform

log = logging.getLogger(__name__)

# stream tags for per-purpose random generators
_SCALE, _GRASPS, _POSES, _CAMERA, _NOISE, _PLACE = range(6)


def rng_for(seed, *key):
    """Independent generator for ``(seed, *key)``; identical however work is split across workers."""
    return np.random.default_rng([int(seed), *[int(k) for k in key]])


@dataclass
class ObjectAssets:
    object_id: str
    index: int
    mesh: TriMesh
    scale: float
    poses: list
    candidates: list  # object frame
    source: str = ""


def prepare_object(object_id, index, mesh: TriMesh, cfg: PipelineConfig, rescale=True, source=""):
    seed = cfg.run.seed
    scale = 1.0
    if rescale:
        width = rng_for(seed, index, _SCALE).uniform(cfg.object.width_min, cfg.object.width_max)
        scale = width / characteristic_width(mesh)
        mesh = rescale_to_width(mesh, width)
    poses = stable_poses(mesh, cfg.object.max_poses, cfg.object.pose_samples, seed=int(rng_for(seed, index, _POSES).integers(2**31)))
    s = cfg.sampler
    cands = sample_contact_pairs(mesh, cfg.gripper.model(), s.max_grasps, s.k, rng_for(seed, index, _GRASPS),
                                 s.epsilon_params(), s.max_attempts)
    return ObjectAssets(object_id, index, mesh, float(scale), poses, cands, str(source))


def place_object(assets: ObjectAssets, pose: StablePose, xy=(0.0, 0.0), yaw=0.0) -> Scene:
    return Scene(assets.mesh, pose.transform(assets.mesh, xy, yaw))


@dataclass
class LabeledView:
    camera_pose: Transform
    depth: np.ndarray
    mask: np.ndarray
    grasps: list
    grasp_map: SparseGraspMap


def label_view(scene: Scene, candidates, camera_pose: Transform, cfg: PipelineConfig) -> LabeledView:
    """Render a view and build its ground-truth sparse map."""
    gripper = cfg.gripper.model()
    world = [c.transformed(scene.object_pose) for c in candidates]
    grasps = orient_grasps(world, scene, camera_pose, gripper, cfg.gripper.hinge_steps, cfg.sampler.delta,
                           margin=cfg.gripper.label_margin, sweep=cfg.sim.approach)
    intr = cfg.camera.intrinsics()
    depth, mask = render_depth(scene, intr, camera_pose)
    gmap = project_contacts(grasps, scene, intr, camera_pose, depth, mask, cfg.dataset.visibility_tau,
                            gripper=gripper, approach=cfg.sim.approach, margin=cfg.gripper.label_margin)
    return LabeledView(camera_pose, depth, mask, grasps, gmap)


def view_meta(assets: ObjectAssets, pose_id, image_id, scene: Scene, view: LabeledView, cfg: PipelineConfig):
    return {
        "object_id": assets.object_id,
        "mesh_source": assets.source,
        "scale_factor": assets.scale,
        "stable_pose_id": int(pose_id),
        "image_id": int(image_id),
        "object_pose": scene.object_pose.to_dict(),
        "camera_pose": view.camera_pose.to_dict(),
        "intrinsics": cfg.camera.intrinsics().to_dict(),
        "seed": int(cfg.run.seed),
        "sampler": {**_plain(cfg.sampler), "k": cfg.sampler.k},
        "gripper": _plain(cfg.gripper),
        "noise": _plain(cfg.noise),
        "visibility_tau": cfg.dataset.visibility_tau,
    }


def _plain(section):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in vars(section).items()}


def generate_object(path, index, cfg: PipelineConfig, out_dir):
    """Generate every sample for one mesh file; returns its manifest record."""
    object_id = Path(path).stem
    mesh = load_mesh(path)
    assets = prepare_object(object_id, index, mesh, cfg, rescale=True, source=str(path))
    record = {"object_id": object_id, "poses": len(assets.poses), "grasps": len(assets.candidates),
              "scale_factor": assets.scale, "images": 0, "entries": 0, "positives": 0, "samples": []}
    for p, pose in enumerate(assets.poses):
        scene = place_object(assets, pose)
        center = scene.world_vertices.mean(axis=0) * [1.0, 1.0, 0.0]
        for n in range(cfg.dataset.images_per_pose):
            cam = sample_camera_pose(center, cfg.camera.bounds(), rng_for(cfg.run.seed, index, _CAMERA, p, n))
            view = label_view(scene, assets.candidates, cam, cfg)
            noisy = apply_sensor_noise(view.depth, cfg.noise.params(), rng_for(cfg.run.seed, index, _NOISE, p, n))
            meta = view_meta(assets, p, n, scene, view, cfg)
            d = write_sample(sample_dir(out_dir, object_id, p, n), Sample(view.depth, noisy, view.grasp_map, meta))
            record["images"] += 1
            record["entries"] += len(view.grasp_map.entries)
            record["positives"] += len(view.grasp_map.positives)
            record["samples"].append(str(d.relative_to(out_dir)))
    return record
