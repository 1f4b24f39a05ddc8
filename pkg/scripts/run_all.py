#!/usr/bin/env python3
"""Run every experiment in the catalog and summarize the claim verdicts.

Writes one report JSON + claims CSV per experiment into --outdir and
prints a verdict table.  Exit code 0 if everything passes, 1 if any
claim fails.  The rectangle's cluster-linking claims are expected to
fail at these lattice sizes (they are continuum limit statements; see
the report docstrings and scripts/cluster_rule_bracket.py).
"""

import argparse
import math
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from loopsoup_lab.experiments import (StripConfig, isomorphism_experiment,
                                      multi_arc_parity_experiment,
                                      rectangle_crossing_experiment,
                                      strip_parity_experiment)


def build_reports(replicas, workers, seed):
    yield isomorphism_experiment(3, 3, alpha=0.5, replicas=replicas,
                                 master_seed=seed, workers=workers)
    yield multi_arc_parity_experiment(3, count_samples=max(replicas, 10_000),
                                      current_samples=min(replicas, 20_000),
                                      master_seed=seed)
    yield rectangle_crossing_experiment(
        3, 8, coupling=math.log(2) / 2, replicas=replicas, k_max=128,
        master_seed=seed, workers=workers,
        min_class=max(30, replicas // 30))
    yield strip_parity_experiment(
        StripConfig(height=2, box_width=8, extent=56, n_boxes=3,
                    epsilon=0.4, replicas=replicas, master_seed=seed),
        workers=workers)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--outdir", default="reports")
    ap.add_argument("--replicas", type=int, default=20_000)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    os.makedirs(args.outdir, exist_ok=True)
    any_fail = False
    for report in build_reports(args.replicas, args.workers, args.seed):
        base = os.path.join(args.outdir, report.experiment)
        with open(base + ".json", "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        with open(base + "-claims.csv", "w", encoding="utf-8") as fh:
            fh.write(report.claims_csv())
        print(f"\n{report.experiment}  [{report.verdict}] "
              f"({report.wall_time_s:.1f} s)")
        for claim in report.claims:
            z = "" if claim.z_score is None else f"  z={claim.z_score:+.2f}"
            p = "" if claim.p_value is None else f"  p={claim.p_value:.3f}"
            print(f"  {claim.verdict:<12} {claim.claim_id}{z}{p}")
        any_fail = any_fail or report.verdict == "FAIL"
    return 1 if any_fail else 0


if __name__ == "__main__":
    sys.exit(main())
