"""Grid summaries: abort rates, admitted-interval cost means with bootstrap CIs, AUC, histograms.

Everything here is a pure function of the episode files, so re-running a
report reproduces the same numbers (the bootstrap RNG is seeded).
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import InputError
from .policy import Decision

ABORT = int(Decision.ABORT)


def bootstrap_ci(values, resamples: int = 10_000, level: float = 0.95, seed: int = 0,
                 chunk: int = 500) -> tuple:
    """Percentile bootstrap CI of the mean: returns ``(mean, lo, hi)``."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan"), float("nan")
    m = float(x.mean())
    if np.ptp(x) == 0:
        return m, m, m
    rng = np.random.default_rng(seed)
    means = np.empty(resamples)
    for s in range(0, resamples, chunk):
        k = min(chunk, resamples - s)
        means[s:s + k] = x[rng.integers(0, x.size, size=(k, x.size))].mean(axis=1)
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [a, 1.0 - a])
    return m, float(min(lo, m)), float(max(hi, m))


def auc(positive, negative) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via the rank-sum statistic."""
    p = np.asarray(positive, dtype=float)
    q = np.asarray(negative, dtype=float)
    if p.size == 0 or q.size == 0:
        raise InputError("AUC needs at least one score per class")
    ranks = rankdata(np.concatenate([p, q]))
    u = ranks[:p.size].sum() - p.size * (p.size + 1) / 2.0
    return float(u / (p.size * q.size))


def auc_bruteforce(positive, negative) -> float:
    p = np.asarray(positive, dtype=float)[:, None]
    q = np.asarray(negative, dtype=float)[None, :]
    return float(((p > q).sum() + 0.5 * (p == q).sum()) / (p.size * q.size))


def interval_abort_rate(episodes: Iterable) -> float:
    total = aborts = 0
    for e in episodes:
        d = np.asarray(e.decision)
        total += d.size
        aborts += int(np.sum(d == ABORT))
    return aborts / total if total else 0.0


def admitted(episodes: Iterable, attr: str) -> np.ndarray:
    """Pool ``attr`` over intervals whose decision is not ABORT."""
    parts = [np.asarray(getattr(e, attr))[np.asarray(e.decision) != ABORT] for e in episodes]
    return np.concatenate(parts) if parts else np.empty(0)


def pooled(episodes: Iterable, attr: str = "raw") -> np.ndarray:
    parts = [np.asarray(getattr(e, attr)) for e in episodes]
    return np.concatenate(parts) if parts else np.empty(0)


@dataclass
class SummaryRow:
    tier: int
    n: int
    workload: str
    episodes: int
    intervals: int
    aborted_episodes: int
    abort_rate: float
    latency_mean: float
    latency_lo: float
    latency_hi: float
    power_mean: float
    power_lo: float
    power_hi: float
    auc_vs_none: float
    median_delta: float
    p95_delta: float
    delta_budget: Optional[float]
    delta_kill: Optional[float]


def group(episodes: Sequence) -> dict:
    out = defaultdict(list)
    for e in episodes:
        out[(e.tier, e.n, e.workload)].append(e)
    return dict(out)


def summarize(episodes: Sequence, resamples: int = 10_000, level: float = 0.95,
              score: str = "value") -> list:
    if not episodes:
        raise InputError("no episodes to summarise")
    groups = group(episodes)
    rows = []
    for (tier, n, w), eps in sorted(groups.items()):
        lat = bootstrap_ci(admitted(eps, "latency"), resamples, level)
        pw = bootstrap_ci(admitted(eps, "power"), resamples, level)
        scores = pooled(eps, score)
        base = groups.get((tier, n, "none"))
        a = auc(scores, pooled(base, score)) if base and scores.size else float("nan")
        th = eps[0].thresholds or {}
        rows.append(SummaryRow(
            tier=tier, n=n, workload=w, episodes=len(eps),
            intervals=int(sum(len(e.decision) for e in eps)),
            aborted_episodes=sum(e.aborted for e in eps), abort_rate=interval_abort_rate(eps),
            latency_mean=lat[0], latency_lo=lat[1], latency_hi=lat[2],
            power_mean=pw[0], power_lo=pw[1], power_hi=pw[2], auc_vs_none=a,
            median_delta=float(np.median(scores)) if scores.size else float("nan"),
            p95_delta=float(np.percentile(scores, 95)) if scores.size else float("nan"),
            delta_budget=th.get("delta_budget"), delta_kill=th.get("delta_kill"),
        ))
    return rows


def histograms(episodes: Sequence, bins: int = 40, score: str = "value") -> list:
    """Per (tier, n): shared bin edges, counts per workload, runtime thresholds."""
    by_n = defaultdict(list)
    for e in episodes:
        by_n[(e.tier, e.n)].append(e)
    out = []
    for (tier, n), eps in sorted(by_n.items()):
        allv = pooled(eps, score)
        th = next((e.thresholds for e in eps if e.thresholds), None) or {}
        hi = max(float(allv.max()) if allv.size else 1.0, th.get("delta_kill", 0.0))
        edges = np.linspace(0.0, hi * 1.05 if hi > 0 else 1.0, bins + 1)
        counts = {}
        for w in sorted({e.workload for e in eps}):
            v = pooled([e for e in eps if e.workload == w], score)
            counts[w] = np.histogram(v, bins=edges)[0].tolist()
        out.append({"tier": tier, "n": n, "edges": edges.tolist(), "counts": counts,
                    "delta_budget": th.get("delta_budget"), "delta_kill": th.get("delta_kill")})
    return out


def write_report(episodes: Sequence, out_dir, resamples: int = 10_000, level: float = 0.95,
                 bins: int = 40) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = summarize(episodes, resamples, level)
    with open(out / "summary.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        fields = list(asdict(rows[0]))
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(v) for v in asdict(r).values()])
    (out / "summary.json").write_text(json.dumps([asdict(r) for r in rows], indent=1))
    (out / "histograms.json").write_text(json.dumps(histograms(episodes, bins), indent=1))
    return rows


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else ("" if v is None else v)


def _ci(m, lo, hi) -> str:
    return f"{m:.3f} [{lo:.3f}, {hi:.3f}]"


def format_table(rows: Sequence[SummaryRow]) -> str:
    head = f"{'tier':>4} {'n':>3} {'workload':>8} {'abort':>7} {'latency [95% CI]':>26} " \
           f"{'power [95% CI]':>26} {'AUC':>6} {'median':>9}"
    lines = [head]
    for r in rows:
        lines.append(
            f"{r.tier:>4} {r.n:>3} {r.workload:>8} {r.abort_rate:>7.4f} "
            f"{_ci(r.latency_mean, r.latency_lo, r.latency_hi):>26} "
            f"{_ci(r.power_mean, r.power_lo, r.power_hi):>26} "
            f"{r.auc_vs_none:>6.3f} {r.median_delta:>9.5f}"
        )
    return "\n".join(lines)
