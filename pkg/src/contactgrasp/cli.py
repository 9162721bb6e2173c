"""Command-line interface: ``contactgrasp {generate,decode,eval,sweep,primitives}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics
from .config import ConfigError, PipelineConfig, load_config
from .dataset import DatasetError, dumps_json
from .decode import proposals_to_json, propose
from .mesh import MeshError, load_mesh
from .model import TensorFormatError, read_tensor
from .pipeline import generate_object
from .primitives import write_bundled
from .sim import Predictor, emit_report, run_dataset_trials, run_trials, threshold_sweep
from .transforms import Transform

log = logging.getLogger("contactgrasp")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT = 0, 1, 2, 3
MESH_SUFFIXES = (".stl", ".obj")


class UsageError(Exception):
    pass


class FormatError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------- helpers

def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    for section, key, value in _OVERRIDES.get(args.command, ()):
        v = getattr(args, value, None)
        if v is not None:
            cfg.set(section, key, v)
    return cfg.validate()


_COMMON = [("run", "seed", "seed"), ("run", "jobs", "jobs")]
_OVERRIDES = {
    "generate": _COMMON + [("dataset", "images_per_pose", "images_per_pose"), ("object", "max_poses", "max_poses"),
                           ("sampler", "max_grasps", "max_grasps")],
    "eval": _COMMON + [("sim", "trials_per_object", "trials"), ("decode", "gamma", "gamma")],
    "sweep": _COMMON + [("sim", "trials_per_object", "trials")],
}


def mesh_files(directory):
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"mesh directory not found: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in MESH_SUFFIXES)


def _load_objects(directory):
    objects = []
    for p in mesh_files(directory):
        try:
            objects.append((p.stem, load_mesh(p)))
        except MeshError as exc:
            log.warning("skipping %s: %s", p, exc)
    if not objects:
        raise FormatError(f"no loadable meshes in {directory}")
    return objects


def _prepare_out(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    probe.write_bytes(b"")
    probe.unlink()
    return out


def _parse_gammas(text):
    try:
        if ":" in text:
            lo, hi, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(round((hi - lo) / step)) + 1
            return [round(lo + i * step, 10) for i in range(n)]
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"bad gamma list {text!r} (use LO:HI:STEP or comma separated values)") from None


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at offset {exc.pos}: {exc.msg}") from exc


def read_intrinsics(path) -> CameraIntrinsics:
    d = _read_json(path)
    d = d.get("intrinsics", d)
    try:
        return CameraIntrinsics.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad intrinsics ({exc})") from exc


def read_extrinsics(path) -> Transform:
    """A 4x4 matrix, ``{rotation, translation}``, or a sample ``meta.json`` (its camera pose)."""
    d = _read_json(path)
    try:
        if isinstance(d, list):
            return Transform.from_matrix(np.array(d, dtype=float))
        d = d.get("camera_pose", d)
        if "matrix" in d:
            return Transform.from_matrix(np.array(d["matrix"], dtype=float))
        return Transform.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad extrinsics ({exc})") from exc


def read_depth(path, intr: CameraIntrinsics):
    data = Path(path).read_bytes()
    expected = 4 * intr.width * intr.height
    if len(data) != expected:
        raise FormatError(f"{path}: depth size mismatch at offset {min(len(data), expected)} "
                          f"(expected {expected} bytes for {intr.width}x{intr.height}, found {len(data)})")
    return np.frombuffer(data, dtype="<f4").reshape(intr.height, intr.width).astype(float)


# ------------------------------------------------------------ commands

def _generate_job(args):
    path, index, cfg, out = args
    try:
        return generate_object(path, index, cfg, out), None
    except (MeshError, OSError, ValueError) as exc:
        return None, f"{path}: {exc}"


def cmd_generate(args):
    cfg = _config(args)
    files = mesh_files(args.meshes)
    out = _prepare_out(args.out)
    (out / "config.ini").write_text(cfg.to_ini())
    jobs = [(p, i, cfg, out) for i, p in enumerate(files)]
    if cfg.run.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.jobs) as pool:
            results = list(pool.map(_generate_job, jobs))
    else:
        results = [_generate_job(j) for j in jobs]
    records, failures = [], []
    for rec, err in results:
        if err:
            log.error("skipping mesh %s", err)
            failures.append(err)
        else:
            records.append(rec)
    manifest = {
        "totals": {"objects": len(records), "poses": sum(r["poses"] for r in records),
                   "images": sum(r["images"] for r in records), "grasp_entries": sum(r["entries"] for r in records),
                   "positives": sum(r["positives"] for r in records)},
        "objects": records, "failures": failures, "seed": cfg.run.seed, "config": cfg.to_dict(),
    }
    (out / "manifest.json").write_bytes(dumps_json(manifest))
    t = manifest["totals"]
    print(f"{t['objects']} objects, {t['poses']} poses, {t['images']} images, {t['grasp_entries']} entries")
    if not records:
        log.error("every mesh failed")
        return EXIT_FORMAT if files else EXIT_IO
    return EXIT_OK


def cmd_decode(args):
    try:
        tensor = read_tensor(args.tensor)
    except TensorFormatError as exc:
        raise FormatError(str(exc)) from exc
    intr = read_intrinsics(args.intrinsics)
    depth = read_depth(args.depth, intr)
    if tensor.shape[1:] != depth.shape:
        raise FormatError(f"{args.tensor}: tensor is {tensor.shape[2]}x{tensor.shape[1]} but the depth image is "
                          f"{depth.shape[1]}x{depth.shape[0]}")
    need = 7 if args.tcp else 6
    if tensor.shape[0] < need:
        raise FormatError(f"{args.tensor}: expected {need} channels, found {tensor.shape[0]}")
    ext = read_extrinsics(args.extrinsics) if args.extrinsics else Transform()
    proposals, skipped = propose(tensor, intr, depth, ext, args.gamma, args.max_proposals, args.peak_distance,
                                 args.max_width, tcp_variant=args.tcp)
    for s in skipped:
        log.warning("skipped pixel %s: %s", s["pixel"], s["reason"])
    print(proposals_to_json(proposals))
    return EXIT_OK


def _evaluate(args, sweep):
    cfg = _config(args)
    predictor = Predictor.parse(args.predictor)
    out = _prepare_out(args.out)
    (out / "config.ini").write_text(cfg.to_ini())
    if sweep:
        gammas = _parse_gammas(args.gammas)
        if args.dataset:
            report = threshold_sweep(None, predictor, cfg, gammas, dataset=args.dataset)
        else:
            report = threshold_sweep(_load_objects(args.meshes), predictor, cfg, gammas)
    elif args.dataset:
        report = run_dataset_trials(args.dataset, predictor, cfg)
    else:
        report = run_trials(_load_objects(args.meshes), predictor, cfg)
    emit_report(report, out, charts=args.charts)
    if sweep:
        for r in report.rows:
            print(f"gamma={r['gamma']:.2f} proposals={r['mean_proposals']:.2f} "
                  f"object_success={r['object_success']:.3f} proposal_success={r['proposal_success']:.3f}")
    else:
        for r in report.objects:
            print(f"{r['object_id']}: {r['successes']}/{r['trials']} ({r['success_rate']:.3f})")
        print(f"overall success {report.overall_success:.3f} failures {report.failures}")
    return EXIT_OK


def cmd_eval(args):
    return _evaluate(args, sweep=False)


def cmd_sweep(args):
    return _evaluate(args, sweep=True)


def cmd_primitives(args):
    for p in write_bundled(_prepare_out(args.out)):
        print(p)
    return EXIT_OK


# -------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="contactgrasp", description="Grasp dataset synthesis, decoding and evaluation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="INI file; flags override its values")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int)

    g = sub.add_parser("generate", help="render views and label maps for a directory of meshes")
    g.add_argument("--meshes", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--images-per-pose", type=int)
    g.add_argument("--max-poses", type=int)
    g.add_argument("--max-grasps", type=int)
    common(g)
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("decode", help="decode a prediction tensor into grasp proposals (JSON on stdout)")
    d.add_argument("--tensor", required=True)
    d.add_argument("--depth", required=True)
    d.add_argument("--intrinsics", required=True)
    d.add_argument("--extrinsics")
    d.add_argument("--gamma", type=float, default=0.4)
    d.add_argument("--peak-distance", type=int, default=4)
    d.add_argument("--max-proposals", type=int, default=10)
    d.add_argument("--max-width", type=float, default=0.08)
    d.add_argument("--tcp", action="store_true", help="tensor uses the TCP representation (7 channels)")
    d.set_defaults(func=cmd_decode)

    for name, fn in (("eval", cmd_eval), ("sweep", cmd_sweep)):
        e = sub.add_parser(name, help=f"closed-loop {'evaluation' if name == 'eval' else 'threshold sweep'}")
        src = e.add_mutually_exclusive_group(required=True)
        src.add_argument("--meshes")
        src.add_argument("--dataset")
        e.add_argument("--out", required=True)
        e.add_argument("--predictor", default="oracle" if name == "eval" else "perturbed:0.3")
        e.add_argument("--trials", type=int)
        e.add_argument("--charts", action="store_true", help="also write SVG charts")
        if name == "eval":
            e.add_argument("--gamma", type=float)
        else:
            e.add_argument("--gammas", default="0.1:0.9:0.1")
        common(e)
        e.set_defaults(func=fn)

    pr = sub.add_parser("primitives", help="write the bundled primitive meshes as STL")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_primitives)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        if isinstance(exc, (TensorFormatError, MeshError)):
            print(f"format error: {exc}", file=sys.stderr)
            return EXIT_FORMAT
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DatasetError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
