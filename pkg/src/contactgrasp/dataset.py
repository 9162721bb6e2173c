"""On-disk dataset samples: raw float32/uint8 tensors plus JSON metadata with CRC32s."""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .render import GraspEntry, SparseGraspMap


class DatasetError(IOError):
    pass


class ChecksumError(DatasetError):
    pass


@dataclass(eq=False)
class Sample:
    depth: np.ndarray
    depth_noisy: np.ndarray
    grasp_map: SparseGraspMap
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float32)
        self.depth_noisy = np.asarray(self.depth_noisy, dtype=np.float32)

    def __eq__(self, other):
        return (isinstance(other, Sample) and np.array_equal(self.depth, other.depth)
                and np.array_equal(self.depth_noisy, other.depth_noisy)
                and self.grasp_map == other.grasp_map and self.meta == other.meta)


def sample_dir(root, object_id, pose_id, image_id) -> Path:
    return Path(root) / f"obj_{object_id}" / f"pose_{pose_id}" / f"img_{image_id}"


def dumps_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode()


def write_sample(path, sample: Sample) -> Path:
    """Write ``sample`` into directory ``path``; ``meta.json`` records each file's CRC32."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blobs = {
        "depth.f32": sample.depth.astype("<f4").tobytes(),
        "depth_noisy.f32": sample.depth_noisy.astype("<f4").tobytes(),
        "mask.u8": np.asarray(sample.grasp_map.mask, dtype=np.uint8).tobytes(),
        "grasps.json": dumps_json([e.to_dict() for e in sample.grasp_map.entries]),
    }
    for name, blob in blobs.items():
        (path / name).write_bytes(blob)
    meta = dict(sample.meta)
    meta["shape"] = [int(s) for s in sample.depth.shape]
    meta["crc32"] = {name: zlib.crc32(blob) for name, blob in blobs.items()}
    (path / "meta.json").write_bytes(dumps_json(meta))
    return path


def read_sample(path) -> Sample:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
        blobs = {name: (path / name).read_bytes() for name in meta["crc32"]}
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read sample at {path}: {exc}") from exc
    for name, blob in blobs.items():
        if zlib.crc32(blob) != meta["crc32"][name]:
            raise ChecksumError(f"checksum mismatch in {path / name}")
    h, w = meta["shape"]
    depth = np.frombuffer(blobs["depth.f32"], dtype="<f4").reshape(h, w).astype(np.float32)
    noisy = np.frombuffer(blobs["depth_noisy.f32"], dtype="<f4").reshape(h, w).astype(np.float32)
    mask = np.frombuffer(blobs["mask.u8"], dtype=np.uint8).reshape(h, w).copy()
    entries = [GraspEntry.from_dict(d) for d in json.loads(blobs["grasps.json"])]
    meta = {k: v for k, v in meta.items() if k not in ("crc32", "shape")}
    return Sample(depth, noisy, SparseGraspMap(entries, mask), meta)


def iter_samples(root):
    """Sample directories under a dataset root in sorted order."""
    return sorted(p.parent for p in Path(root).glob("obj_*/pose_*/img_*/meta.json"))
