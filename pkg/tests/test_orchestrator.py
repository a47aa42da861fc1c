import dataclasses

import numpy as np
import pytest

from leakguard import experiments as ex
from leakguard import orchestrator as orch
from leakguard.audit import Outcome, RecordKind, verify
from leakguard.errors import ArtifactError, ConfigMismatchError, DigestMismatchError
from leakguard.estimator import EstimatorConfig, LeakageEstimate
from leakguard.orchestrator import MONITOR_ONLY, Artifacts, JobSpec, run_job
from leakguard.policy import AbortReason, Decision, Thresholds
from leakguard.simenv import SimEnv

TH = Thresholds(0.02, 0.03)


def run(tiny, workload="none", seed=7, th=TH, **kw):
    cfg, art = tiny
    return ex.run_episode(cfg, 1, 4, workload, seed, art, th, **kw)


def test_replay_is_bit_exact(tiny):
    a, b = run(tiny, "timing"), run(tiny, "timing")
    assert a.attestation == b.attestation
    assert a.steps == b.steps and a.intervals == b.intervals
    assert run(tiny, "timing", seed=8).attestation != a.attestation


def test_one_record_per_interval_plus_terminal(tiny):
    res = run(tiny)
    recs = res.audit.records
    assert len(recs) == len(res.intervals) + 1
    assert recs[-1].kind == RecordKind.TERMINAL and recs[-1].decision == Outcome.COMPLETED
    assert verify(res.audit) == (True, None)
    assert [r.interval for r in recs[:-1]] == list(range(len(res.intervals)))
    assert res.n_steps == tiny[0].grid.steps


def test_interval_cadence(tiny):
    res = run(tiny)
    S, W = tiny[0].estimator.S, tiny[0].estimator.W
    assert [iv.step for iv in res.intervals] == list(range(W, res.n_steps + 1, S))


def test_monitor_only(tiny):
    res = run(tiny, "timing", th=None)
    assert res.outcome == Outcome.COMPLETED
    assert all(iv.decision is None for iv in res.intervals)
    assert {r.decision for r in res.audit.records[:-1]} == {MONITOR_ONLY}


def test_enforced_matches_monitor_until_abort(tiny):
    for w in ("none", "rl", "timing"):
        mon = run(tiny, w, th=None)
        enf = run(tiny, w, th=Thresholds(0.008, 0.012))
        k = len(enf.intervals)
        assert [iv.raw for iv in enf.intervals] == [iv.raw for iv in mon.intervals[:k]]
        if enf.aborted:
            assert enf.intervals[-1].decision == Decision.ABORT


@pytest.mark.parametrize("j", [0, 2])
def test_forced_kill_at_interval(tiny, monkeypatch, j):
    real = orch.estimate
    calls = []

    def fake(*args, **kw):
        est = real(*args, **kw)
        calls.append(est)
        if len(calls) - 1 == j:
            kill = args[-1]
            return LeakageEstimate(value=kill, raw=kill + 1.0, kl=est.kl, penalty=est.penalty,
                                   clamped=True)
        return est

    monkeypatch.setattr(orch, "estimate", fake)
    res = run(tiny, th=Thresholds(10.0, 20.0))
    assert res.outcome == Outcome.ABORTED and res.reason == AbortReason.KILL_THRESHOLD
    assert len(res.intervals) == j + 1
    assert res.intervals[-1].decision == Decision.ABORT
    term = res.audit.records[-1]
    assert term.decision == Outcome.ABORTED and term.reason == AbortReason.KILL_THRESHOLD
    assert term.delta_hat == 20.0
    assert res.n_steps == res.intervals[-1].step


def test_tampered_artifacts_rejected_before_execution(tiny):
    cfg, art = tiny
    bad = dataclasses.replace(art, codebook_checksum=bytes(32))
    env = SimEnv(cfg.env, 4, seed=0)
    spec = JobSpec(circuit=ex.job_circuit(cfg, 4, 0, 200), seed=0, artifacts=bad, thresholds=TH)
    with pytest.raises(DigestMismatchError):
        run_job(spec, env)
    assert env.k == 0
    spec = dataclasses.replace(spec, artifacts=art, estimator=EstimatorConfig(H=5.0))
    with pytest.raises(ConfigMismatchError):
        run_job(spec, env)
    spec = dataclasses.replace(spec, artifacts=None, estimator=EstimatorConfig())
    with pytest.raises(ArtifactError):
        run_job(spec, env)
    assert env.k == 0


def test_env_failure_aborts(tiny, monkeypatch):
    cfg, art = tiny
    env = SimEnv(cfg.env, 4, seed=0)
    step = env.step

    def flaky(*a, **kw):
        if env.k == 150:
            raise RuntimeError("backend offline")
        return step(*a, **kw)

    monkeypatch.setattr(env, "step", flaky)
    spec = JobSpec(circuit=ex.job_circuit(cfg, 4, 0, 300), seed=0, artifacts=art, thresholds=TH)
    res = run_job(spec, env)
    assert res.outcome == Outcome.ABORTED and res.reason == AbortReason.ENV_FAILURE
    assert res.n_steps == 150 and verify(res.audit)[0]


def test_design_only_needs_no_artifacts(tiny):
    cfg, _ = tiny
    res = ex.run_episode(cfg, 1, 4, "none", 3, None, design_only=True)
    assert set(res.steps["codeword"]) == {-1} and not res.intervals
    assert sorted(set(res.steps["cls"])) == [0, 1, 2]


def test_fused_summaries_cover_all_steps(tiny):
    res = run(tiny)
    assert sum(f["layers"] for f in res.fused) == res.n_steps
    assert [f["segment"] for f in res.fused] == list(range(len(res.fused)))


def test_codewords_in_alphabet(tiny):
    c = np.asarray(run(tiny, "rl").steps["codeword"])
    assert c.min() >= 0 and c.max() < 2560


def test_artifacts_digest_binds_both_checksums(tiny):
    _, art = tiny
    assert Artifacts.lock(art.reference, art.codebook).digest == art.digest
    assert dataclasses.replace(art, reference_checksum=bytes(32)).digest != art.digest
