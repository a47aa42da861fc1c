"""Per-job control loop: pad, segment, jitter, route, execute, estimate, log, enforce.

An *interval* is one estimator window emission (every ``S`` dispatches once
the first window has filled).  Segments span several intervals, so one
segment can produce several decisions.  Each interval is logged before the
kill check, so the aborting estimate is always in the audit chain.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .audit import FLAG_PF_FALLBACK, FLAG_SWITCH, AuditLog, Outcome
from .errors import ArtifactError, ConfigMismatchError, DegenerateParticlesError, DigestMismatchError
from .estimator import EstimatorConfig, ReferenceModel, WindowState, estimate
from .features import Codebook, normalize, quantize
from .padding import Circuit, GateSet, PaddingSpec, insert_tdesign, segment
from .pf_timing import ParticleSet, PFConfig, propose, sample_dispatch
from .policy import AbortReason, Decision, PolicyConfig, PolicyState, Thresholds, evaluate
from .router import Router, RoutingPolicy
from .simenv import SimEnv

log = logging.getLogger(__name__)

PRIME_EMA = True
MONITOR_ONLY = 255  # decision byte logged when no thresholds are enforced


@dataclass(frozen=True)
class Artifacts:
    """Locked calibration outputs plus the digests they must still match."""

    reference: ReferenceModel
    codebook: Codebook
    reference_checksum: bytes = b""
    codebook_checksum: bytes = b""

    @classmethod
    def lock(cls, reference: ReferenceModel, codebook: Codebook) -> "Artifacts":
        return cls(reference, codebook, reference.checksum, codebook.checksum)

    def verify(self, cfg: EstimatorConfig):
        if hashlib.sha256(self.reference.to_bytes()).digest() != self.reference_checksum:
            raise DigestMismatchError("reference model no longer matches its locked checksum")
        if hashlib.sha256(self.codebook._body()).digest() != self.codebook_checksum:
            raise DigestMismatchError("codebook no longer matches its locked checksum")
        if self.reference.config != cfg.locked_tuple():
            raise ConfigMismatchError(
                f"artifacts locked under {self.reference.config}, runtime uses {cfg.locked_tuple()}"
            )

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.reference_checksum + self.codebook_checksum).digest()


@dataclass
class JobSpec:
    circuit: Circuit
    seed: int
    artifacts: Optional[Artifacts]
    thresholds: Optional[Thresholds] = None  # None = monitor only
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    pf: PFConfig = field(default_factory=PFConfig)
    routing: RoutingPolicy = field(default_factory=RoutingPolicy)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    eps_des: float = 0.02
    c_pad: int = 2
    k_segments: int = 6
    gates: GateSet = field(default_factory=GateSet)
    header: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.circuit.n


@dataclass
class IntervalRecord:
    index: int
    step: int          # number of dispatches completed at emission
    segment: int
    cls: int
    backend: str
    theta: float
    value: float
    raw: float
    kl: float
    penalty: float
    decision: Optional[int]
    latency: float     # mean over the dispatches this interval covers
    power: float


STEP_FIELDS = ("dt", "b", "q", "zeta", "theta", "latency", "power", "codeword", "segment",
               "cls", "backend")


@dataclass
class EpisodeResult:
    outcome: Outcome
    reason: AbortReason
    steps: dict
    intervals: list
    attestation: bytes
    audit: AuditLog
    pf_fallbacks: int = 0
    switches: int = 0
    fused: list = field(default_factory=list)  # one summary per executed segment

    @property
    def n_steps(self) -> int:
        return len(self.steps["dt"])

    @property
    def aborted(self) -> bool:
        return self.outcome == Outcome.ABORTED


def _new_steps() -> dict:
    return {k: [] for k in STEP_FIELDS}


def _dispatch(pf_state, q, cfg, latency_fn, rng):
    """Returns (particles, theta, fell_back)."""
    try:
        pf_state = propose(pf_state, q, cfg, latency_fn, rng)
        return pf_state, sample_dispatch(pf_state, rng), False
    except DegenerateParticlesError:
        return ParticleSet.initial(cfg.N), 0.0, True


def run_job(spec: JobSpec, env: SimEnv, design_only: bool = False) -> EpisodeResult:
    """Execute one job against ``env``.

    With ``design_only`` the estimator, policy and audit are skipped and only
    the per-step cadence trace is produced (used to collect calibration data;
    codewords are then -1).
    """
    n = spec.n
    art = spec.artifacts
    if not design_only:
        if art is None:
            raise ArtifactError("a monitored job needs locked artifacts")
        art.verify(spec.estimator)
    rngs = np.random.SeedSequence([spec.seed, 1]).spawn(2)
    pf_rng = np.random.default_rng(rngs[0])
    pad_seed = rngs[1]

    padded = insert_tdesign(spec.circuit, PaddingSpec.for_n(n, spec.eps_des, spec.c_pad),
                            pad_seed, spec.gates)
    segments = segment(padded, spec.k_segments)

    th = spec.thresholds
    kill = th.delta_kill if th else math.inf
    router = Router(env.cfg.backends, spec.routing,
                    delta_budget=th.delta_budget if th else math.inf,
                    cooldown=spec.policy.cooldown)
    header = dict(spec.header)
    header.update({
        "n": n, "seed": spec.seed,
        "thresholds": th.to_dict() if th else None,
        "estimator": list(spec.estimator.locked_tuple()) + [spec.estimator.beta_est],
        "routing": [spec.routing.alpha, spec.routing.omega_leak, spec.routing.gamma,
                    spec.routing.tau_frac, spec.routing.m, spec.routing.delta],
        "policy": [spec.policy.strike_limit, spec.policy.cooldown],
        "artifacts": art.digest.hex() if art else None,
    })
    audit = AuditLog(header)
    window = WindowState(spec.estimator)
    if not design_only and PRIME_EMA:
        window.prime(art.reference.reference_for(n, segments[0].cls))
    pstate = PolicyState()
    particles = ParticleSet.initial(spec.pf.N)
    steps = _new_steps()
    intervals = []
    pending_flags = 0
    fallbacks = 0
    last_emit = 0
    outcome, reason = Outcome.COMPLETED, AbortReason.NONE
    final_value = 0.0
    fused = []

    for seg in segments:
        backend, switched = router.route(seg, env.queue_depths(), kill)
        if switched:
            pending_flags |= FLAG_SWITCH
        summary = {"segment": seg.index, "cls": seg.cls, "backend": backend.id,
                   "layers": 0, "ops": 0.0}
        fused.append(summary)
        latency_fn = env.latency_fn(backend.id)
        for layer in seg.layers:
            q = env.queue_state(backend.id)
            particles, theta, fell_back = _dispatch(particles, q, spec.pf, latency_fn, pf_rng)
            if fell_back:
                fallbacks += 1
                pending_flags |= FLAG_PF_FALLBACK
                log.debug("particle set degenerated at step %d; dispatching at theta=0", env.k)
            try:
                res = env.step(layer, theta, backend.id)
            except Exception as exc:  # environment fault ends the episode
                log.warning("environment failure: %s", exc)
                outcome, reason = Outcome.ABORTED, AbortReason.ENV_FAILURE
                break
            summary["layers"] += 1
            summary["ops"] += res.ops
            f = res.features
            if design_only:
                c = -1
            else:
                c = quantize(normalize(f, art.codebook, n), art.codebook, n, seg.cls)
            for key, v in (("dt", f.dt), ("b", f.b), ("q", int(f.q)), ("zeta", f.zeta),
                           ("theta", theta), ("latency", res.latency), ("power", res.power),
                           ("codeword", c), ("segment", seg.index), ("cls", seg.cls),
                           ("backend", backend.id)):
                steps[key].append(v)
            if design_only or window.push(c) is None:
                continue

            est = estimate(window, art.reference, n, seg.cls, env.crosstalk().lambda_c,
                           spec.estimator, kill)
            decision = evaluate(est, th, pstate, spec.policy.strike_limit) if th else None
            nstep = len(steps["dt"])
            intervals.append(IntervalRecord(
                index=len(intervals), step=nstep, segment=seg.index, cls=seg.cls,
                backend=backend.id, theta=theta, value=est.value, raw=est.raw, kl=est.kl,
                penalty=est.penalty, decision=None if decision is None else int(decision),
                latency=float(np.mean(steps["latency"][last_emit:nstep])),
                power=float(np.mean(steps["power"][last_emit:nstep])),
            ))
            last_emit = nstep
            audit.append(len(intervals) - 1, backend.id, theta, est.value,
                         MONITOR_ONLY if decision is None else decision,
                         segment=seg.index, flags=pending_flags)
            pending_flags = 0
            router.observe(est.value)
            if decision == Decision.ABORT:
                outcome, reason, final_value = Outcome.ABORTED, pstate.reason, est.value
                break
        if outcome == Outcome.ABORTED:
            break

    attestation = audit.finalize(outcome, reason, final_value)
    return EpisodeResult(
        outcome=outcome, reason=reason, steps=steps, intervals=intervals,
        attestation=attestation, audit=audit, pf_fallbacks=fallbacks, switches=router.switches,
        fused=fused,
    )
