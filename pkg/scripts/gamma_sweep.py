"""Threshold sweep of a jittered oracle over the bundled primitives."""
import argparse
import tempfile
from pathlib import Path

from contactgrasp.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/gamma_sweep"))
    ap.add_argument("--predictor", default="perturbed:0.3")
    ap.add_argument("--gammas", default="0.1:0.9:0.1")
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        meshes = Path(tmp) / "meshes"
        cli(["primitives", "--out", str(meshes)])
        code = cli(["sweep", "--meshes", str(meshes), "--out", str(args.out), "--predictor", args.predictor,
                    "--gammas", args.gammas, "--trials", str(args.trials), "--seed", str(args.seed),
                    "--jobs", str(args.jobs), "--charts"])
    print((args.out / "sweep.csv").read_text())
    raise SystemExit(code)


if __name__ == "__main__":
    main()
