"""Mean-rank sweep over the full dims x burn-in x negatives x directedness grid on a synthetic tree.

Writes plot-ready CSV (one row per cell), the same shape as ``poincare-kg sweep``.

    python scripts/sweep_synthetic.py --branching 3 --depth 4 --epochs 150 --out sweep.csv
"""

import argparse
import logging

from poincare_kg.config import TrainingConfig
from poincare_kg.evaluator import GridSpec, run_sweep
from poincare_kg.hierarchy import balanced_tree


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--branching", type=int, default=3)
    ap.add_argument("--depth", type=int, default=4)
    ap.add_argument("--epochs", type=int, default=150)
    ap.add_argument("--lr", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    graph = balanced_tree(args.branching, args.depth)
    base = TrainingConfig(epochs=max(args.epochs, 100), learning_rate=args.lr, seed=args.seed)
    report = run_sweep(graph, GridSpec(), base, workers=args.workers)
    report.write_csv(args.out)
    for r in report.rows:
        print(f"dim={r.dim:<4} burn_in={r.burn_in_epochs:<4} k={r.negatives_k:<4} directed={r.directed!s:<5} "
              f"mean_rank={r.mean_rank:.3f}")


if __name__ == "__main__":
    main()
