"""Calibration pipeline and the two evaluation grids.

Seeding: every episode of a grid is keyed by ``(master seed, episode index)``
only, so the same index sees the same co-tenant traffic for every workload,
job size and tier.  Calibration episodes draw from separate seed streams.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .config import ExperimentConfig
from .errors import InputError
from .estimator import (build_reference_from_episodes, load_artifacts, merge_references,
                        save_artifacts)
from .features import FeatureBatch, build_codebook, quantize_batch
from .orchestrator import Artifacts, EpisodeResult, JobSpec, run_job
from .padding import PaddingSpec, random_circuit
from .policy import Decision, Thresholds, calibrate, replay, transfer
from .simenv import SimEnv

log = logging.getLogger(__name__)

_GRID_TAG, _DESIGN_TAG, _BASELINE_TAG = 0x6A1D, 0xDE51, 0xBA5E


def episode_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, _GRID_TAG, index]).generate_state(1)[0])


def design_seed(master: int, n: int, index: int) -> int:
    return int(np.random.SeedSequence([master, _DESIGN_TAG, n, index]).generate_state(1)[0])


def baseline_seed(master: int, tier: int, n: int, index: int) -> int:
    return int(np.random.SeedSequence([master, _BASELINE_TAG, tier, n, index]).generate_state(1)[0])


def job_circuit(cfg: ExperimentConfig, n: int, seed: int, steps: int):
    """Real circuit whose padded depth equals ``steps`` dispatches."""
    budget = PaddingSpec.for_n(n, cfg.padding.eps_des, cfg.padding.c_pad).depth_budget(n)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    return random_circuit(n, max(0, steps - budget), rng, cfg.padding.gates)


def env_config(cfg: ExperimentConfig, tier: int):
    return cfg.env if tier == 1 else cfg.tier2_env


def run_episode(cfg: ExperimentConfig, tier: int, n: int, workload: str, seed: int,
                artifacts: Optional[Artifacts], thresholds: Optional[Thresholds] = None,
                steps: Optional[int] = None, design_only: bool = False,
                header: Optional[dict] = None) -> EpisodeResult:
    steps = cfg.grid.steps if steps is None else steps
    spec = JobSpec(
        circuit=job_circuit(cfg, n, seed, steps), seed=seed, artifacts=artifacts,
        thresholds=thresholds, estimator=cfg.estimator, pf=cfg.pf, routing=cfg.routing,
        policy=cfg.policy, eps_des=cfg.padding.eps_des, c_pad=cfg.padding.c_pad,
        k_segments=cfg.padding.k_segments, gates=cfg.padding.gates,
        header=dict(header or {}, tier=tier, workload=workload),
    )
    env = SimEnv(env_config(cfg, tier), n, workload, seed=[seed, 0])
    return run_job(spec, env, design_only=design_only)


# ---------------------------------------------------------------------------
# calibration


def collect_design(cfg: ExperimentConfig, n: int, master: int, episodes: Optional[int] = None):
    """Design-only (benign, Tier I) cadence: per-episode feature batches and classes."""
    episodes = cfg.calibration.design_episodes if episodes is None else episodes
    out = []
    for i in range(episodes):
        res = run_episode(cfg, 1, n, "none", design_seed(master, n, i), None, design_only=True)
        s = res.steps
        out.append((FeatureBatch(s["dt"], s["b"], s["q"], s["zeta"]), np.asarray(s["cls"])))
    return out


def calibrate_artifacts(cfg: ExperimentConfig, master: int, ns: Sequence[int],
                        episodes: Optional[int] = None) -> Artifacts:
    """Build the codebook and per-(n, class) references from design-only runs."""
    samples = {}
    design = {}
    for n in ns:
        design[n] = collect_design(cfg, n, master, episodes)
        for batch, cls in design[n]:
            for k in np.unique(cls):
                samples.setdefault((n, int(k)), []).append(
                    FeatureBatch(batch.dt[cls == k], batch.b[cls == k], batch.q[cls == k],
                                 batch.zeta[cls == k]))
    codebook = build_codebook({key: FeatureBatch.concat(v) for key, v in samples.items()})
    refs = []
    for n in ns:
        eps = [(quantize_batch(batch, codebook, n, cls), cls) for batch, cls in design[n]]
        refs.append(build_reference_from_episodes(eps, n, cfg.estimator))
    return Artifacts.lock(merge_references(refs), codebook)


def collect_baseline(cfg: ExperimentConfig, artifacts: Artifacts, tier: int, n: int, master: int,
                     episodes: Optional[int] = None) -> np.ndarray:
    """Monitor-only benign runs; returns every interval's unclamped estimate."""
    episodes = cfg.calibration.baseline_episodes if episodes is None else episodes
    vals = []
    for i in range(episodes):
        res = run_episode(cfg, tier, n, "none", baseline_seed(master, tier, n, i), artifacts)
        vals.extend(iv.raw for iv in res.intervals)
    return np.asarray(vals)


def calibrate_thresholds(cfg: ExperimentConfig, baselines: Mapping[int, np.ndarray]) -> dict:
    p = cfg.policy
    return {n: calibrate(b, p.q_budget, p.q_kill, p.g_min) for n, b in baselines.items()}


# ---------------------------------------------------------------------------
# grids


@dataclass
class EpisodeSummary:
    tier: int
    n: int
    workload: str
    index: int
    seed: int
    outcome: str
    reason: str
    n_steps: int
    thresholds: Optional[dict]
    attestation: str
    value: np.ndarray
    raw: np.ndarray
    decision: np.ndarray      # -1 where monitor-only
    latency: np.ndarray
    power: np.ndarray
    backend: list = field(default_factory=list)
    pf_fallbacks: int = 0
    switches: int = 0

    @property
    def aborted(self) -> bool:
        return self.outcome == "ABORTED"

    @classmethod
    def from_result(cls, res: EpisodeResult, tier, n, workload, index, seed, thresholds):
        iv = res.intervals
        return cls(
            tier=tier, n=n, workload=workload, index=index, seed=seed,
            outcome=res.outcome.name, reason=res.reason.name, n_steps=res.n_steps,
            thresholds=thresholds.to_dict() if thresholds else None,
            attestation=res.attestation.hex(),
            value=np.array([x.value for x in iv]), raw=np.array([x.raw for x in iv]),
            decision=np.array([-1 if x.decision is None else x.decision for x in iv], dtype=int),
            latency=np.array([x.latency for x in iv]), power=np.array([x.power for x in iv]),
            backend=[x.backend for x in iv], pf_fallbacks=res.pf_fallbacks,
            switches=res.switches,
        )

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for k in ("value", "raw", "decision", "latency", "power"):
            d[k] = d[k].tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeSummary":
        d = dict(d)
        for k in ("value", "raw", "latency", "power"):
            d[k] = np.asarray(d[k], dtype=float)
        d["decision"] = np.asarray(d["decision"], dtype=int)
        return cls(**d)


def episode_name(tier: int, n: int, workload: str, index: int) -> str:
    return f"t{tier}_n{n}_{workload}_s{index:03d}"


def write_episode(out_dir: Path, summary: EpisodeSummary, res: EpisodeResult):
    name = episode_name(summary.tier, summary.n, summary.workload, summary.index)
    (out_dir / "episodes").mkdir(parents=True, exist_ok=True)
    (out_dir / "audit").mkdir(parents=True, exist_ok=True)
    d = summary.to_dict()
    d["steps"] = {k: v for k, v in res.steps.items() if k in ("dt", "b", "q", "zeta", "theta",
                                                            "latency", "power", "codeword")}
    d["fused"] = res.fused
    (out_dir / "episodes" / f"{name}.json").write_text(json.dumps(d))
    res.audit.save(out_dir / "audit" / f"{name}.audit")


def load_episodes(result_dir) -> list:
    files = sorted(Path(result_dir).glob("episodes/*.json"))
    out = []
    for f in files:
        d = json.loads(f.read_text())
        d.pop("steps", None)
        d.pop("fused", None)
        out.append(EpisodeSummary.from_dict(d))
    return out


def run_grid(cfg: ExperimentConfig, tier: int, artifacts: Artifacts,
             thresholds: Optional[Mapping[int, Thresholds]], master: int,
             ns: Optional[Sequence[int]] = None, workloads: Optional[Sequence[str]] = None,
             seeds: Optional[int] = None, out_dir=None) -> list:
    """Run {n} x {workload} x seeds episodes; ``thresholds=None`` means monitor-only."""
    ns = ns or (cfg.grid.tier1_ns if tier == 1 else cfg.grid.tier2_ns)
    workloads = workloads or cfg.grid.workloads
    seeds = cfg.grid.seeds if seeds is None else seeds
    out = []
    t0 = time.perf_counter()
    for n in ns:
        th = thresholds[n] if thresholds is not None else None
        for w in workloads:
            for i in range(seeds):
                seed = episode_seed(master, i)
                res = run_episode(cfg, tier, n, w, seed, artifacts, th)
                summ = EpisodeSummary.from_result(res, tier, n, w, i, seed, th)
                out.append(summ)
                if out_dir is not None:
                    write_episode(Path(out_dir), summ, res)
        log.info("tier %d n=%d done (%.1fs)", tier, n, time.perf_counter() - t0)
    return out


@dataclass
class Calibration:
    """Everything a grid run needs: artifacts, thresholds and the baselines behind them."""

    artifacts: Artifacts
    thresholds: dict
    baselines: dict


ARTIFACT_FILE = "artifacts.lgl"
THRESHOLDS_FILE = "thresholds_t1.json"
BASELINE_FILE = "baseline_t1.npz"


def thresholds_to_json(th: Mapping[int, Thresholds]) -> str:
    return json.dumps({str(n): t.to_dict() for n, t in sorted(th.items())}, indent=1)


def thresholds_from_json(text: str) -> dict:
    return {int(n): Thresholds(**d) for n, d in json.loads(text).items()}


def save_calibration(cal: "Calibration", out_dir) -> bytes:
    """Write artifacts, Tier I thresholds and baselines; returns the artifact file digest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = save_artifacts(out / ARTIFACT_FILE, cal.artifacts.reference, cal.artifacts.codebook)
    (out / THRESHOLDS_FILE).write_text(thresholds_to_json(cal.thresholds))
    np.savez(out / BASELINE_FILE, **{str(n): v for n, v in cal.baselines.items()})
    return digest


def load_calibration(cfg: ExperimentConfig, art_dir) -> "Calibration":
    """Load and verify a calibration directory; any digest or config mismatch is fatal."""
    d = Path(art_dir)
    ref, cb = load_artifacts(d / ARTIFACT_FILE, cfg.estimator)
    try:
        thresholds = thresholds_from_json((d / THRESHOLDS_FILE).read_text())
        with np.load(d / BASELINE_FILE) as z:
            baselines = {int(k): z[k] for k in z.files}
    except OSError as exc:
        raise InputError(f"incomplete calibration directory {d}: {exc}") from exc
    return Calibration(Artifacts.lock(ref, cb), thresholds, baselines)


def calibrate_tier1(cfg: ExperimentConfig, master: int, ns: Optional[Sequence[int]] = None) -> Calibration:
    ns = ns or sorted(set(cfg.grid.tier1_ns) | set(cfg.grid.tier2_ns))
    art = calibrate_artifacts(cfg, master, ns)
    baselines = {n: collect_baseline(cfg, art, 1, n, master) for n in ns}
    return Calibration(art, calibrate_thresholds(cfg, baselines), baselines)


def run_tier1(cfg: ExperimentConfig, cal: Calibration, master: int, out_dir=None,
              monitor_only: bool = False) -> list:
    return run_grid(cfg, 1, cal.artifacts, None if monitor_only else cal.thresholds, master,
                    cfg.grid.tier1_ns, out_dir=out_dir)


def transfer_thresholds(cfg: ExperimentConfig, cal: Calibration, master: int,
                        ns: Optional[Sequence[int]] = None):
    """Tier II thresholds: Tier I thresholds moved by baseline quantile alignment."""
    ns = ns or cfg.grid.tier2_ns
    base2 = {n: collect_baseline(cfg, cal.artifacts, 2, n, master) for n in ns}
    th2 = {n: transfer(cal.thresholds[n], cal.baselines[n], base2[n]) for n in ns}
    return th2, base2


def run_tier2(cfg: ExperimentConfig, cal: Calibration, master: int, out_dir=None,
              thresholds2: Optional[dict] = None) -> tuple:
    if thresholds2 is None:
        thresholds2, _ = transfer_thresholds(cfg, cal, master)
    res = run_grid(cfg, 2, cal.artifacts, thresholds2, master, cfg.grid.tier2_ns, out_dir=out_dir)
    return res, thresholds2


# ---------------------------------------------------------------------------
# threshold sensitivity


@dataclass(frozen=True)
class SweepPoint:
    delta_budget: float
    delta_kill: float
    abort_rate: float      # interval-level, benign episodes
    detection: float       # share of attack episodes aborted


def replay_abort_stats(traces: Sequence[np.ndarray], th: Thresholds, strike_limit: int) -> tuple:
    """(aborted episodes, intervals evaluated) when ``th`` is applied to frozen traces."""
    aborted = evaluated = 0
    for values in traces:
        d = replay(values, th, strike_limit)
        evaluated += len(d)
        aborted += int(bool(d) and d[-1] == Decision.ABORT)
    return aborted, evaluated


def threshold_sweep(benign: Sequence[np.ndarray], attack: Sequence[np.ndarray],
                    budgets: Sequence[float], gap: float, strike_limit: int = 3) -> list:
    """Replay the policy on frozen monitor-only traces at ``kill = budget + gap``."""
    out = []
    for b in sorted(budgets):
        th = Thresholds(b, b + gap)
        ab, ev = replay_abort_stats(benign, th, strike_limit)
        det, _ = replay_abort_stats(attack, th, strike_limit)
        out.append(SweepPoint(b, b + gap, ab / ev if ev else 0.0,
                              det / len(attack) if attack else 0.0))
    return out
