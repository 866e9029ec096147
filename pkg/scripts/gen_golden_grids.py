#!/usr/bin/env python3
"""Regenerate the cached derived-grid files under the package data directory.

Four artifacts, all deterministic for a fixed seed:

- nf4_e4m3.json          quantile-constructed NF4, snapped to E4M3
- po2_nf4_partner.json   residual partner learned around frozen snapped NF4
- po2_split87_partner.json  residual partner learned around Split87
- bof4s_normal.json      sign-normalized asymmetric pair from a Normal pool

Partners train on a Normal pool (the deployment-relevant base case) and
are snapped to E4M3 like their primaries.  Set GRIDFORGE_DATA to redirect
the output directory.
"""

import argparse

from gridforge.formats import E4M3
from gridforge.grids import builtin_grid, data_dir, nf4_construct, save_grid_file, snap_to_format
from gridforge.learn import TrainConfig, learn_bof4s, learn_residual_pair
from gridforge.stats import DistributionSpec, sample_pool


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1234)
    ap.add_argument("--blocks", type=int, default=30000)
    ap.add_argument("--g", type=int, default=16)
    args = ap.parse_args()

    out = data_dir()
    out.mkdir(parents=True, exist_ok=True)
    pool = sample_pool(DistributionSpec("normal"), args.g, args.blocks, args.seed)
    cfg = TrainConfig(seed=args.seed)

    nf4_snapped = snap_to_format(nf4_construct(), E4M3)
    save_grid_file(out / "nf4_e4m3.json", nf4_snapped)
    print(f"wrote nf4_e4m3.json ({len(nf4_snapped)} levels)")

    for primary, stem in (
        (nf4_snapped, "po2_nf4_partner"),
        (builtin_grid("Split87"), "po2_split87_partner"),
    ):
        fam, rep = learn_residual_pair(primary, True, pool, cfg, snap=E4M3)
        save_grid_file(out / f"{stem}.json", fam.grids[1])
        print(
            f"wrote {stem}.json (converged={rep.converged}, "
            f"snap_delta={rep.snap_mse_delta:+.3%})"
        )

    fam, rep = learn_bof4s(pool, cfg)
    save_grid_file(out / "bof4s_normal.json", fam)
    print(f"wrote bof4s_normal.json (converged={rep.converged})")


if __name__ == "__main__":
    main()
