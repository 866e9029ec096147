"""Reproduce the distributional MSE table (x1e-3, g=16, 2M samples).

Usage:
    python3 scripts/run_bench.py --out results/bench.csv
    python3 scripts/run_bench.py --dists normal,t5 --samples 500000

Thin wrapper over `gridforge bench-mse` -- same seeding, same CSV -- plus a
formatted table on stdout so the numbers are readable without a spreadsheet.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from gridforge.cli import main as cli  # noqa: E402
from gridforge.reports import read_csv  # noqa: E402

FAMILIES = "INT4,FP4,NF4,IF4,BOF4S,SFP4,MPO2"


def run(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--families", default=FAMILIES)
    ap.add_argument("--dists", default="normal,t5,t7,t10")
    ap.add_argument("--g", type=int, default=16)
    ap.add_argument("--samples", type=int, default=2_000_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="bench.csv")
    args = ap.parse_args(argv)

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    cli.main(["bench-mse", "--families", args.families, "--dists", args.dists,
              "--g", str(args.g), "--samples", str(args.samples),
              "--seed", str(args.seed), "--threads", str(args.threads),
              "--out", args.out], standalone_mode=False)

    rows = read_csv(args.out)
    fams = list(dict.fromkeys(r.family for r in rows))
    dists = list(dict.fromkeys(r.distribution for r in rows))
    cell = {(r.family, r.distribution): r.mse for r in rows}
    print(f"\nMSE x1e-3 (g={args.g}, {args.samples:,} samples, seed {args.seed})")
    print(f"{'':<8}" + "".join(f"{f:>9}" for f in fams))
    for d in dists:
        print(f"{d:<8}" + "".join(f"{cell[(f, d)] * 1e3:9.3f}" for f in fams))
    print(f"\nwrote {args.out}")


if __name__ == "__main__":
    run()
