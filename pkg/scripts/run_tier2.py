"""Transfer Tier I thresholds to the emulation tier and run the Tier II grid."""

import argparse
import logging
from pathlib import Path

from leakguard import experiments as ex
from leakguard.config import ExperimentConfig
from leakguard.report import format_table, write_report

from run_tier1 import get_calibration


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config")
    ap.add_argument("--artifacts", default="results/calibration")
    ap.add_argument("--out", default="results/tier2")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    out = Path(args.out)

    cal = get_calibration(cfg, args.seed, args.artifacts)
    th2, _ = ex.transfer_thresholds(cfg, cal, args.seed)
    for n, th in sorted(th2.items()):
        t1 = cal.thresholds[n]
        print(f"n={n}: Tier I ({t1.delta_budget:.5f}, {t1.delta_kill:.5f}) -> "
              f"Tier II ({th.delta_budget:.5f}, {th.delta_kill:.5f}) clamped={th.clamped}")
    results, _ = ex.run_tier2(cfg, cal, args.seed, out_dir=out, thresholds2=th2)
    (out / "thresholds_t2.json").write_text(ex.thresholds_to_json(th2))
    print(format_table(write_report(results, out, cfg.report.bootstrap_resamples)))


if __name__ == "__main__":
    main()
