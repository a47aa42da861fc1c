"""Calibrate (or load a calibration directory), then run the Tier I grid.

Runs the grid twice: enforced, and monitor-only (the frozen trace used for
separation and threshold-sensitivity analysis).
"""

import argparse
import logging
import time
from pathlib import Path

import numpy as np

from leakguard import experiments as ex
from leakguard.config import ExperimentConfig
from leakguard.report import auc, format_table, pooled, write_report


def get_calibration(cfg, seed, art_dir):
    if art_dir and (Path(art_dir) / ex.ARTIFACT_FILE).exists():
        return ex.load_calibration(cfg, art_dir)
    cal = ex.calibrate_tier1(cfg, seed)
    if art_dir:
        ex.save_calibration(cal, art_dir)
    return cal


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config")
    ap.add_argument("--artifacts", default="results/calibration")
    ap.add_argument("--out", default="results/tier1")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    out = Path(args.out)

    t0 = time.perf_counter()
    cal = get_calibration(cfg, args.seed, args.artifacts)
    t1 = time.perf_counter()
    enforced = ex.run_tier1(cfg, cal, args.seed, out_dir=out / "enforced")
    t2 = time.perf_counter()
    monitor = ex.run_tier1(cfg, cal, args.seed, out_dir=out / "monitor", monitor_only=True)
    print(f"calibration {t1 - t0:.0f}s, enforced grid {t2 - t1:.0f}s")

    print(format_table(write_report(enforced, out / "enforced", cfg.report.bootstrap_resamples)))
    print("\nmonitor-only medians / P95 and AUC vs none (raw estimates)")
    for n in cfg.grid.tier1_ns:
        g = {w: pooled([e for e in monitor if e.n == n and e.workload == w], "raw")
             for w in cfg.grid.workloads}
        meds = "  ".join(f"{w}={np.median(v):.5f}/{np.percentile(v, 95):.5f}" for w, v in g.items())
        aucs = "  ".join(f"{w}={auc(g[w], g['none']):.3f}" for w in g if w != "none")
        print(f"n={n:>2}  {meds}  AUC {aucs}")


if __name__ == "__main__":
    main()
