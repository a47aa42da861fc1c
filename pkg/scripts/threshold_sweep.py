"""Budget sweep at a fixed budget-to-kill gap, replayed on a frozen monitor-only Tier I trace."""

import argparse
import sys

import numpy as np

from leakguard import experiments as ex
from leakguard.config import ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("trace", help="monitor-only Tier I result directory (see run_tier1.py)")
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--attack", default="timing", choices=("rl", "timing"))
    ap.add_argument("--points", type=int, default=9)
    ap.add_argument("--config")
    args = ap.parse_args()
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()

    eps = [e for e in ex.load_episodes(args.trace) if e.n == args.n]
    benign = [e.raw for e in eps if e.workload == "none"]
    attack = [e.raw for e in eps if e.workload == args.attack]
    if not benign or not attack:
        sys.exit(f"no monitor-only episodes for n={args.n} under {args.trace}")
    base = np.concatenate(benign)
    budgets = np.quantile(base, np.linspace(0.80, 0.999, args.points))
    gap = 0.05 * float(np.quantile(base, 0.99))
    print(f"{'budget':>10} {'kill':>10} {'abort rate':>11} {'detection':>10}")
    for p in ex.threshold_sweep(benign, attack, budgets, gap, cfg.policy.strike_limit):
        print(f"{p.delta_budget:>10.5f} {p.delta_kill:>10.5f} {p.abort_rate:>11.4f} {p.detection:>10.3f}")


if __name__ == "__main__":
    main()
