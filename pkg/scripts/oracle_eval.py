"""Closed-loop evaluation of the label oracle on the bundled primitives."""
import argparse
import tempfile
import time
from pathlib import Path

from contactgrasp.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/oracle_eval"))
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--gamma", type=float, default=0.4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        meshes = Path(tmp) / "meshes"
        cli(["primitives", "--out", str(meshes)])
        code = cli(["eval", "--meshes", str(meshes), "--out", str(args.out), "--predictor", "oracle",
                    "--trials", str(args.trials), "--gamma", str(args.gamma), "--seed", str(args.seed),
                    "--jobs", str(args.jobs), "--charts"])
    print((args.out / "summary.csv").read_text())
    print(f"finished in {time.perf_counter() - t0:.1f}s")
    raise SystemExit(code)


if __name__ == "__main__":
    main()
