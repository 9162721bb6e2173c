"""Quasi-static grasp execution and the closed-loop evaluation harness."""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import sample_camera_pose
from .config import PipelineConfig
from .dataset import dumps_json, iter_samples, read_sample
from .decode import GraspProposal, propose
from .grasping import GripperModel, closure_contacts, force_closure
from .mesh import Scene, boxes_collide, load_mesh
from .model import TensorFormatError, oracle_predict, perturbed_oracle, read_tensor
from .pipeline import ObjectAssets, label_view, place_object, prepare_object, rng_for
from .render import apply_sensor_noise
from .transforms import Transform

log = logging.getLogger(__name__)

_TRIAL = 100  # stream tag for trial randomness, disjoint from the generation tags
DEFAULT_GAMMAS = tuple(round(0.1 * i, 1) for i in range(1, 10))


class Result(str, enum.Enum):
    SUCCESS = "Success"
    APPROACH_COLLISION = "ApproachCollision"
    NO_CONTACT = "NoContact"
    NOT_FORCE_CLOSURE = "NotForceClosure"
    NO_PROPOSAL = "NoProposal"


@dataclass
class SimOutcome:
    result: Result
    swept_distance: float = 0.0
    closure_width: float = 0.0
    contacts: tuple | None = None  # (c1, c2, n1, n2) world frame

    @property
    def success(self):
        return self.result is Result.SUCCESS

    def to_dict(self):
        d = {"result": self.result.value, "swept_distance": float(self.swept_distance),
             "closure_width": float(self.closure_width), "contacts": None}
        if self.contacts is not None:
            d["contacts"] = [[float(x) for x in c] for c in self.contacts]
        return d

    @classmethod
    def from_dict(cls, d):
        contacts = None if d.get("contacts") is None else tuple(np.array(c) for c in d["contacts"])
        return cls(Result(d["result"]), d["swept_distance"], d["closure_width"], contacts)


def simulate_grasp(scene: Scene, proposal: GraspProposal, gripper: GripperModel = GripperModel(),
                   approach=0.15, step=0.005, mu_sim=0.5) -> SimOutcome:
    """Straight-line approach with open fingers, then jaw closure and a force-closure test."""
    r = proposal.matrix
    z = r[:, 2]
    n = max(1, int(math.ceil(approach / step - 1e-9)))
    offsets = np.linspace(approach, 0.0, n + 1)
    centers, rots, halves = [], [], []
    for s in offsets:
        c, rr, h = gripper.box_arrays(r, proposal.tcp - s * z)
        centers.append(c)
        rots.append(rr)
        halves.append(h)
    hit = boxes_collide(scene, np.concatenate(centers), np.concatenate(rots), np.concatenate(halves))
    hit = hit.reshape(len(offsets), -1).any(axis=1)
    if hit.any():
        first = int(np.argmax(hit))
        return SimOutcome(Result.APPROACH_COLLISION, swept_distance=float(approach - offsets[first]))
    contacts = closure_contacts(scene, r, proposal.tcp, gripper)
    if contacts is None:
        return SimOutcome(Result.NO_CONTACT, swept_distance=float(approach))
    width = float(np.linalg.norm(contacts[1] - contacts[0]))
    ok = force_closure(*contacts, mu_sim)
    return SimOutcome(Result.SUCCESS if ok else Result.NOT_FORCE_CLOSURE, float(approach), width, contacts)


# ----------------------------------------------------------- predictors

class PredictorError(RuntimeError):
    pass


@dataclass(frozen=True)
class Predictor:
    """``oracle``, ``perturbed:SIGMA`` or ``file:DIR``."""

    kind: str = "oracle"
    sigma: float = 0.0
    directory: str = ""

    @classmethod
    def parse(cls, text):
        if text == "oracle":
            return cls()
        name, _, arg = text.partition(":")
        if name == "perturbed":
            try:
                sigma = float(arg)
            except ValueError:
                raise ValueError(f"bad perturbed predictor sigma {arg!r}") from None
            if sigma < 0:
                raise ValueError("perturbed predictor sigma must be non-negative")
            return cls("perturbed", sigma)
        if name == "file" and arg:
            return cls("file", directory=arg)
        raise ValueError(f"unknown predictor {text!r} (oracle, perturbed:SIGMA or file:DIR)")

    def __str__(self):
        return {"oracle": "oracle", "perturbed": f"perturbed:{self.sigma:g}"}.get(self.kind, f"file:{self.directory}")

    def predict(self, grasp_map, object_id, trial, rng):
        if self.kind == "oracle":
            return oracle_predict(grasp_map)
        if self.kind == "perturbed":
            return perturbed_oracle(grasp_map, sigma_q=self.sigma, seed=rng)
        path = Path(self.directory) / object_id / f"trial_{trial:04d}.f32"
        try:
            tensor = read_tensor(path)
        except (OSError, TensorFormatError) as exc:
            raise PredictorError(str(exc)) from exc
        if tensor.shape[1:] != grasp_map.shape or tensor.shape[0] < 6:
            raise PredictorError(f"{path}: tensor shape {tensor.shape} does not match the view")
        return tensor


# --------------------------------------------------------------- trials

@dataclass
class TrialView:
    object_id: str
    trial: int
    scene: Scene
    camera_pose: Transform
    depth: np.ndarray
    grasp_map: object
    stable_pose_id: int = -1


def _mesh_view(assets: ObjectAssets, trial, cfg: PipelineConfig) -> TrialView:
    rng = rng_for(cfg.run.seed, assets.index, _TRIAL, trial)
    probs = np.array([p.probability for p in assets.poses])
    pid = int(rng.choice(len(probs), p=probs / probs.sum()))
    yaw = rng.uniform(0.0, 2 * np.pi)
    wx, wy = cfg.sim.workspace
    xy = rng.uniform([-wx / 2, -wy / 2], [wx / 2, wy / 2])
    scene = place_object(assets, assets.poses[pid], xy, yaw)
    cam = sample_camera_pose([xy[0], xy[1], 0.0], cfg.camera.bounds(), rng)
    view = label_view(scene, assets.candidates, cam, cfg)
    return TrialView(assets.object_id, trial, scene, cam, view.depth, view.grasp_map, pid)


def _predict(view: TrialView, predictor: Predictor, cfg: PipelineConfig, key):
    rng = rng_for(cfg.run.seed, *key, 1)
    if cfg.noise.enabled:
        # the noisy image is the network input; label-driven predictors do not read it
        apply_sensor_noise(view.depth, cfg.noise.params(), rng)
    return predictor.predict(view.grasp_map, view.object_id, view.trial, rng)


def _positive_pixels(grasp_map):
    return {(e.u, e.v) for e in grasp_map.positives}


def _run_one(view: TrialView, predictor, cfg: PipelineConfig, key):
    intr = cfg.camera.intrinsics()
    record = {"object_id": view.object_id, "trial": view.trial, "seed": [int(cfg.run.seed), *key],
              "stable_pose_id": view.stable_pose_id, "object_pose": view.scene.object_pose.to_dict(),
              "camera_pose": view.camera_pose.to_dict(), "proposal_count": 0, "proposal": None,
              "gt_positive": None, "outcome": None, "error": None}
    try:
        tensor = _predict(view, predictor, cfg, key)
    except PredictorError as exc:
        record["error"] = str(exc)
        return record
    d = cfg.decode
    proposals, skipped = propose(tensor, intr, view.depth, view.camera_pose, d.gamma, d.max_proposals,
                                 d.peak_distance, cfg.gripper.max_width)
    record["proposal_count"] = len(proposals)
    record["skipped"] = skipped
    if not proposals:
        record["outcome"] = SimOutcome(Result.NO_PROPOSAL).to_dict()
        return record
    top = proposals[0]
    record["proposal"] = top.to_dict()
    record["gt_positive"] = tuple(top.source_pixel) in _positive_pixels(view.grasp_map)
    s = cfg.sim
    record["outcome"] = simulate_grasp(view.scene, top, cfg.gripper.model(), s.approach, s.step, s.mu_sim).to_dict()
    return record


def _mesh_trial(args):
    assets, trial, predictor, cfg = args
    view = _mesh_view(assets, trial, cfg)
    return _run_one(view, predictor, cfg, (assets.index, _TRIAL, trial))


def _dataset_view(path, trial, mesh_cache):
    sample = read_sample(path)
    meta = sample.meta
    src = meta["mesh_source"]
    if src not in mesh_cache:
        mesh_cache[src] = load_mesh(src)
    mesh = mesh_cache[src].scaled(meta["scale_factor"])
    scene = Scene(mesh, Transform.from_dict(meta["object_pose"]))
    return TrialView(meta["object_id"], trial, scene, Transform.from_dict(meta["camera_pose"]),
                     sample.depth.astype(float), sample.grasp_map, meta["stable_pose_id"])


def _dataset_trial(args):
    path, trial, index, predictor, cfg = args
    view = _dataset_view(path, trial, {})
    return _run_one(view, predictor, cfg, (index, _TRIAL, trial))


def _map(fn, jobs, items):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _prepare(args):
    object_id, index, mesh, cfg, rescale, source = args
    return prepare_object(object_id, index, mesh, cfg, rescale=rescale, source=source)


def prepare_objects(objects, cfg: PipelineConfig, rescale=False):
    """``objects`` is a list of ``(object_id, TriMesh)``."""
    jobs = [(oid, i, mesh, cfg, rescale, "") for i, (oid, mesh) in enumerate(objects)]
    return _map(_prepare, cfg.run.jobs, jobs)


def _summarize(records, object_ids):
    rows = []
    for oid in object_ids:
        rs = [r for r in records if r["object_id"] == oid]
        succ = sum(_succeeded(r) for r in rs)
        rows.append({"object_id": oid, "trials": len(rs), "successes": succ,
                     "success_rate": succ / len(rs) if rs else 0.0,
                     "no_proposal_count": sum(_result(r) == Result.NO_PROPOSAL.value for r in rs)})
    return rows


def _result(record):
    return None if record["outcome"] is None else record["outcome"]["result"]


def _succeeded(record):
    return _result(record) == Result.SUCCESS.value


@dataclass
class TrialReport:
    predictor: str
    seed: int
    gamma: float
    records: list = field(default_factory=list)
    objects: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def overall_success(self):
        return sum(map(_succeeded, self.records)) / len(self.records) if self.records else 0.0

    @property
    def failures(self):
        counts = {}
        for r in self.records:
            if not _succeeded(r):
                key = _result(r) or "Error"
                counts[key] = counts.get(key, 0) + 1
        return counts

    def to_dict(self):
        return {"predictor": self.predictor, "seed": self.seed, "gamma": self.gamma,
                "overall_success": self.overall_success, "trials": len(self.records),
                "objects": self.objects, "failures": self.failures, "config": self.config,
                "records": self.records}

    @classmethod
    def from_dict(cls, d):
        return cls(d["predictor"], d["seed"], d["gamma"], d["records"], d["objects"], d.get("config", {}))

    def __eq__(self, other):
        return isinstance(other, TrialReport) and dumps_json(self.to_dict()) == dumps_json(other.to_dict())


def run_trials(objects, predictor="oracle", cfg: PipelineConfig | None = None, assets=None) -> TrialReport:
    """Closed-loop trials on meshes: place, view, predict, decode, execute the top proposal.

    ``objects`` is a list of ``(object_id, TriMesh)``; pass ``assets`` to reuse
    already prepared objects.
    """
    cfg = cfg or PipelineConfig()
    predictor = predictor if isinstance(predictor, Predictor) else Predictor.parse(predictor)
    t0 = time.perf_counter()
    assets = assets if assets is not None else prepare_objects(objects, cfg)
    t1 = time.perf_counter()
    n = cfg.sim.trials_per_object
    jobs = [(a, t, predictor, cfg) for a in assets for t in range(n)]
    records = _map(_mesh_trial, cfg.run.jobs, jobs)
    t2 = time.perf_counter()
    ids = [a.object_id for a in assets]
    return TrialReport(str(predictor), cfg.run.seed, cfg.decode.gamma, records, _summarize(records, ids),
                       cfg.to_dict(), {"prepare_s": t1 - t0, "trials_s": t2 - t1,
                                       "per_trial_s": (t2 - t1) / max(1, len(records))})


def _dataset_jobs(root, predictor, cfg):
    paths = iter_samples(root)
    order, counters, jobs = [], {}, []
    for p in paths:
        oid = json.loads((p / "meta.json").read_text())["object_id"]
        if oid not in counters:
            counters[oid] = 0
            order.append(oid)
        jobs.append((p, counters[oid], order.index(oid), predictor, cfg))
        counters[oid] += 1
    return jobs, order


def run_dataset_trials(root, predictor="oracle", cfg: PipelineConfig | None = None) -> TrialReport:
    """Trials replayed from stored samples: one trial per rendered view."""
    cfg = cfg or PipelineConfig()
    predictor = predictor if isinstance(predictor, Predictor) else Predictor.parse(predictor)
    t0 = time.perf_counter()
    jobs, ids = _dataset_jobs(root, predictor, cfg)
    records = _map(_dataset_trial, cfg.run.jobs, jobs)
    dt = time.perf_counter() - t0
    return TrialReport(str(predictor), cfg.run.seed, cfg.decode.gamma, records, _summarize(records, ids),
                       cfg.to_dict(), {"trials_s": dt, "per_trial_s": dt / max(1, len(records))})


# ---------------------------------------------------------------- sweep

def _sweep_one(view: TrialView, predictor, cfg: PipelineConfig, key, gammas):
    """Per-gamma proposals of one view; each distinct proposal is simulated once."""
    intr = cfg.camera.intrinsics()
    d, s = cfg.decode, cfg.sim
    gripper = cfg.gripper.model()
    out = {"object_id": view.object_id, "trial": view.trial, "error": None, "levels": []}
    try:
        tensor = _predict(view, predictor, cfg, key)
    except PredictorError as exc:
        out["error"] = str(exc)
        return out
    cache = {}
    for g in gammas:
        props, _ = propose(tensor, intr, view.depth, view.camera_pose, g, d.max_proposals, d.peak_distance,
                           gripper.max_width)
        level = []
        for p in props:
            px = tuple(p.source_pixel)
            if px not in cache:
                cache[px] = simulate_grasp(view.scene, p, gripper, s.approach, s.step, s.mu_sim).success
            level.append({"pixel": list(px), "quality": p.quality, "success": cache[px]})
        out["levels"].append(level)
    return out


def _sweep_mesh(args):
    assets, trial, predictor, cfg, gammas = args
    return _sweep_one(_mesh_view(assets, trial, cfg), predictor, cfg, (assets.index, _TRIAL, trial), gammas)


def _sweep_dataset(args):
    path, trial, index, predictor, cfg, gammas = args
    return _sweep_one(_dataset_view(path, trial, {}), predictor, cfg, (index, _TRIAL, trial), gammas)


@dataclass
class SweepReport:
    predictor: str
    seed: int
    rows: list = field(default_factory=list)
    trials: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def proposal_set(self, i):
        """``{(object, trial, u, v)}`` proposed at the i-th gamma."""
        return {(t["object_id"], t["trial"], *p["pixel"]) for t in self.trials if not t["error"]
                for p in t["levels"][i]}

    def to_dict(self):
        return {"predictor": self.predictor, "seed": self.seed, "rows": self.rows, "config": self.config,
                "trials": self.trials}

    @classmethod
    def from_dict(cls, d):
        return cls(d["predictor"], d["seed"], d["rows"], d["trials"], d.get("config", {}))

    def __eq__(self, other):
        return isinstance(other, SweepReport) and dumps_json(self.to_dict()) == dumps_json(other.to_dict())


def _sweep_rows(trials, gammas):
    rows = []
    for i, g in enumerate(gammas):
        levels = [t["levels"][i] if not t["error"] else [] for t in trials]
        pooled = [p for lv in levels for p in lv]
        counts = np.array([len(lv) for lv in levels], dtype=float)
        n = len(counts)
        mean = float(counts.mean()) if n else 0.0
        half = 1.96 * float(counts.std(ddof=1)) / math.sqrt(n) if n > 1 else 0.0
        rows.append({
            "gamma": float(g),
            "mean_pred_quality": math.fsum(p["quality"] for p in pooled) / len(pooled) if pooled else None,
            "object_success": sum(bool(lv) and lv[0]["success"] for lv in levels) / n if n else 0.0,
            "proposal_success": sum(p["success"] for p in pooled) / len(pooled) if pooled else 0.0,
            "mean_proposals": mean, "ci95_low": mean - half, "ci95_high": mean + half,
        })
    return rows


def threshold_sweep(objects=None, predictor="perturbed:0.3", cfg: PipelineConfig | None = None,
                    gammas=DEFAULT_GAMMAS, dataset=None, assets=None) -> SweepReport:
    """Decode every view at each acceptance threshold; proposals within a view are shared across gammas."""
    if len(gammas) == 0:
        raise ValueError("gamma list must be nonempty")
    cfg = cfg or PipelineConfig()
    predictor = predictor if isinstance(predictor, Predictor) else Predictor.parse(predictor)
    gammas = [float(g) for g in gammas]
    t0 = time.perf_counter()
    if dataset is not None:
        jobs, _ = _dataset_jobs(dataset, predictor, cfg)
        trials = _map(_sweep_dataset, cfg.run.jobs, [j + (gammas,) for j in jobs])
    else:
        assets = assets if assets is not None else prepare_objects(objects, cfg)
        jobs = [(a, t, predictor, cfg, gammas) for a in assets for t in range(cfg.sim.trials_per_object)]
        trials = _map(_sweep_mesh, cfg.run.jobs, jobs)
    return SweepReport(str(predictor), cfg.run.seed, _sweep_rows(trials, gammas), trials, cfg.to_dict(),
                       {"total_s": time.perf_counter() - t0})


# --------------------------------------------------------------- output

SUMMARY_COLUMNS = ("object_id", "trials", "successes", "success_rate", "no_proposal_count")
SWEEP_COLUMNS = ("gamma", "mean_pred_quality", "object_success", "proposal_success", "mean_proposals",
                 "ci95_low", "ci95_high")


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(row[k]) for k in columns})


def _cell(value):
    if value is None:
        return ""
    return f"{value:.6g}" if isinstance(value, float) else value


def emit_report(report, out_dir, charts=False):
    """Write ``report.json``, ``summary.csv``, ``sweep.csv`` and ``timing.json``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trial = report if isinstance(report, TrialReport) else None
    sweep = report if isinstance(report, SweepReport) else None
    paths = [out / "report.json", out / "summary.csv", out / "sweep.csv", out / "timing.json"]
    paths[0].write_bytes(dumps_json(report.to_dict()))
    _write_csv(paths[1], SUMMARY_COLUMNS, trial.objects if trial else [])
    _write_csv(paths[2], SWEEP_COLUMNS, sweep.rows if sweep else [])
    paths[3].write_bytes(dumps_json(report.timing))
    if charts:
        paths += _charts(report, out)
    return paths


def _charts(report, out):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    plt.rcParams["svg.hashsalt"] = "contactgrasp"
    if isinstance(report, TrialReport) and report.objects:
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.bar([r["object_id"] for r in report.objects], [r["success_rate"] for r in report.objects])
        ax.set_ylim(0, 1)
        ax.set_ylabel("grasp success")
        path = out / "success.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    if isinstance(report, SweepReport) and report.rows:
        g = [r["gamma"] for r in report.rows]
        fig, axes = plt.subplots(1, 4, figsize=(12, 3))
        for ax, key in zip(axes, ("mean_pred_quality", "object_success", "proposal_success", "mean_proposals")):
            ax.plot(g, [r[key] for r in report.rows], marker="o")
            ax.set_xlabel("gamma")
            ax.set_title(key)
        axes[3].fill_between(g, [r["ci95_low"] for r in report.rows], [r["ci95_high"] for r in report.rows],
                             alpha=0.3)
        fig.tight_layout()
        path = out / "sweep.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written
