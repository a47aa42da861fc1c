"""Wall-clock cost of the monitor: per-codeword push and per-window estimate."""

import argparse
import time

import numpy as np

from leakguard.estimator import EstimatorConfig, ReferenceModel, WindowState, estimate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pushes", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = EstimatorConfig()
    rng = np.random.default_rng(args.seed)
    p = rng.dirichlet(np.ones(cfg.B))
    p = (1 - cfg.lam) * p + cfg.lam / cfg.B
    ref = ReferenceModel({(4, 0): p / p.sum()}, cfg.locked_tuple())
    codes = rng.integers(0, cfg.B, size=args.pushes)
    lam_c = np.full((3, 3), 0.01)

    st = WindowState(cfg)
    push_t = est_t = 0.0
    windows = 0
    for c in codes:
        t0 = time.perf_counter()
        h = st.push(int(c))
        t1 = time.perf_counter()
        push_t += t1 - t0
        if h is not None:
            estimate(st, ref, 4, 0, lam_c, cfg, 1.0)
            est_t += time.perf_counter() - t1
            windows += 1
    per_push = push_t / len(codes) * 1e6
    per_est = est_t / max(windows, 1) * 1e6
    print(f"push (incl. emission):  {per_push:8.2f} us/codeword")
    print(f"estimate per window:    {per_est:8.2f} us")
    print(f"amortised per interval: {per_push + per_est / cfg.S:8.2f} us")


if __name__ == "__main__":
    main()
