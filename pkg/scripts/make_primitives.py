"""Write the bundled primitive meshes and print their stable-pose tables."""
import argparse
from pathlib import Path

from contactgrasp.mesh import load_mesh, stable_poses
from contactgrasp.primitives import write_bundled


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("primitives"))
    args = ap.parse_args()
    for path in write_bundled(args.out):
        poses = stable_poses(load_mesh(path))
        probs = " ".join(f"{p.probability:.3f}" for p in poses)
        print(f"{Path(path).name:14s} poses={len(poses):2d}  {probs}")


if __name__ == "__main__":
    main()
