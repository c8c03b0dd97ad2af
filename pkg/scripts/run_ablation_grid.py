#!/usr/bin/env python3
"""Run the refinement-toggle x modality-mask ablation grid on a fresh
signal-1 cohort and write ablation.csv / ablation.md.

Usage: python scripts/run_ablation_grid.py --seeds 0 1 2 --out runs/ablation
"""

import argparse

from earlysd.synth import CohortConfig, generate_cohort
from earlysd.graph import build_graph
from earlysd.experiment import ExperimentConfig, run_ablation, write_ablation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cohort-seed", type=int, default=3)
    ap.add_argument("--signal", type=float, default=1.0)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--masks", nargs="+", default=["PCTSI"],
                    help="modality masks, e.g. PCTSI P C T S I")
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    cohort = CohortConfig(seed=args.cohort_seed, signal_strength=args.signal)
    users, topics, ut_edges, _ = generate_cohort(cohort)
    graph = build_graph(users, topics, (), ut_edges)

    cfg = ExperimentConfig(seeds=args.seeds, ablation_masks=args.masks)
    rows = run_ablation(graph, cfg)
    write_ablation(rows, args.out)
    for r in rows:
        print(f"{r['mask']:>6} {r['refinement']:<14} "
              f"acc {r['acc_mean'] * 100:6.2f} ± {r['acc_std'] * 100:5.2f}  "
              f"f1 {r['f1_mean'] * 100:6.2f} ± {r['f1_std'] * 100:5.2f}")


if __name__ == "__main__":
    main()
