"""Discrete-step cloud/backend environment with FIFO co-tenant queues.

One ``step`` is one dispatch of a padded layer.  The environment owns the
co-tenant queues, dispatch jitter, telemetry, crosstalk and the
latency/power accounting, and hosts the two scripted adversaries:

* ``rl``: a co-tenant modulating the effective batch size between two
  multiplier levels on a random (geometric dwell) schedule;
* ``timing``: a scheduler insider injecting periodic bursts that stretch the
  dispatch gap and flood the active queue.

Adversaries draw from their own RNG stream, so with zero strength the
``rl`` and ``timing`` environments evolve identically to ``none``.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .features import IntervalFeatures, QueueState
from .padding import Layer
from .router import Backend


class Workload(str, enum.Enum):
    NONE = "none"
    RL = "rl"
    TIMING = "timing"


WORKLOADS = tuple(w.value for w in Workload)


@dataclass(frozen=True)
class AdversaryConfig:
    rl_levels: tuple = (0.75, 1.3)
    rl_depth: float = 1.0          # 0 disables the rl adversary
    rl_mean_dwell: float = 16.0    # steps between hidden-bit flips (mean)
    rl_job_prob: float = 0.2       # chance per high-phase step of submitting one co-tenant job
    timing_period: int = 40
    timing_width: int = 10
    timing_amplitude: float = 5.0  # gap stretch, in control intervals; 0 disables
    timing_jobs: int = 6           # co-tenant jobs injected per burst step

    def __post_init__(self):
        if len(self.rl_levels) != 2 or min(self.rl_levels) <= 0 or self.rl_depth < 0:
            raise ConfigurationError("rl_levels must be two positive multipliers")
        if self.timing_period < 1 or not 0 <= self.timing_width <= self.timing_period:
            raise ConfigurationError("need 0 <= timing_width <= timing_period")
        if not 0 <= self.rl_job_prob <= 1:
            raise ConfigurationError("rl_job_prob must lie in [0, 1]")
        if self.timing_amplitude < 0 or self.timing_jobs < 0 or self.rl_mean_dwell < 1:
            raise ConfigurationError("invalid adversary strength")


DEFAULT_CROSSTALK = (
    (0.00, 0.04, 0.01),
    (0.04, 0.00, 0.04),
    (0.01, 0.04, 0.00),
)


@dataclass(frozen=True)
class EnvConfig:
    backends: tuple = (Backend("qpu0"),)
    control_interval: float = 6.3      # microseconds
    queue_edges: tuple = (0, 2, 5)     # backlog counts: 0 idle, <=2 light, <=5 moderate, else heavy
    queue_wait_est: tuple = (0.0, 2.0, 5.0, 9.0)  # predicted wait per queue state (us), for the PF
    dispatch_jitter: float = 0.0       # std-dev of uncontrolled dispatch jitter (us)
    wait_coupling: float = 0.3         # share of queue wait that delays the next dispatch
    dt_floor: float = 0.05
    op_overhead: float = 0.02          # service us per op, before backend scale
    nominal_ops_per_qubit: float = 0.5
    p_base: float = 20.0               # mW
    c_op: float = 0.5                  # mW per op
    c_act: float = 2.0                 # mW per unit co-tenant activity
    c_jit: float = 0.2                 # mW per us of |theta|
    zeta_noise: float = 0.1
    zeta_act: float = 0.5
    activity_ref: float = 5.0
    activity_halflife: float = 64.0    # steps
    crosstalk_base: tuple = DEFAULT_CROSSTALK
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)

    def __post_init__(self):
        if self.control_interval <= 0 or self.dt_floor <= 0:
            raise ConfigurationError("control interval and dt floor must be positive")
        if not self.backends:
            raise ConfigurationError("environment needs at least one backend")
        e = self.queue_edges
        if len(e) != 3 or any(b <= a for a, b in zip(e, e[1:])):
            raise ConfigurationError("queue_edges must be three increasing counts")
        w = self.queue_wait_est
        if len(w) != 4 or any(b < a for a, b in zip(w, w[1:])):
            raise ConfigurationError("queue_wait_est must be four non-decreasing values")
        vals = [self.p_base, self.c_op, self.c_act, self.c_jit, self.op_overhead,
                self.zeta_noise, self.activity_ref, self.activity_halflife, self.wait_coupling]
        if not all(np.isfinite(vals)) or min(vals) < 0 or self.activity_ref == 0:
            raise ConfigurationError("model coefficients must be finite and non-negative")

    def backend(self, backend_id: str) -> Backend:
        for b in self.backends:
            if b.id == backend_id:
                return b
        raise ConfigurationError(f"unknown backend {backend_id!r}")


def tier2_backends() -> tuple:
    """Default heterogeneous farm used for the emulation tier."""
    return (
        Backend("cpu0", "CPU", err_1q=2e-4, err_2q=2e-3, service_scale=4.0,
                arrival_rate=0.2, mean_work=6.0),
        Backend("gpu0", "GPU", err_1q=1e-4, err_2q=1e-3, service_scale=1.5,
                arrival_rate=0.6, mean_work=6.0),
        Backend("qpu0", "QPU", err_1q=1e-3, err_2q=1e-2, service_scale=1.0,
                arrival_rate=0.5, mean_work=6.0),
        Backend("tn0", "TN", err_1q=3e-4, err_2q=3e-3, service_scale=2.5,
                arrival_rate=0.3, mean_work=6.0),
    )


def tier2_env_config(base: Optional[EnvConfig] = None) -> EnvConfig:
    base = base or EnvConfig()
    return replace(base, backends=tier2_backends(), dispatch_jitter=0.3)


def queue_state_for(count: int, edges=(0, 2, 5)) -> QueueState:
    if count <= edges[0]:
        return QueueState.IDLE
    if count <= edges[1]:
        return QueueState.LIGHT
    if count <= edges[2]:
        return QueueState.MODERATE
    return QueueState.HEAVY


@dataclass(frozen=True)
class StepResult:
    features: IntervalFeatures
    latency: float
    power: float
    ops: float
    activity: float
    backend: str
    burst: bool = False


@dataclass
class CrosstalkState:
    lambda_c: np.ndarray

    @property
    def frobenius(self) -> float:
        return float(np.linalg.norm(self.lambda_c))


class SimEnv:
    """One environment instance per episode; evolution is a pure function of
    (seed, config, workload, dispatch sequence)."""

    def __init__(self, cfg: EnvConfig, n: int, workload="none", seed=0):
        self.cfg = cfg
        self.n = n
        self.workload = Workload(workload)
        ss = np.random.SeedSequence(seed)
        env_ss, adv_ss = ss.spawn(2)
        self.rng = np.random.default_rng(env_ss)
        self.adv_rng = np.random.default_rng(adv_ss)
        self.queues = {b.id: deque() for b in cfg.backends}
        self.k = 0
        self.prev_theta = 0.0
        self.activity_ema = 0.0
        self._act_decay = 2.0 ** (-1.0 / cfg.activity_halflife) if cfg.activity_halflife > 0 else 0.0
        self.rl_bit = 0
        self._crosstalk_base = np.asarray(cfg.crosstalk_base, dtype=float)
        self._rates = np.array([b.arrival_rate for b in cfg.backends])
        self._works = [b.mean_work for b in cfg.backends]
        self._ids = [b.id for b in cfg.backends]
        self.nominal_ops = max(cfg.nominal_ops_per_qubit * n, 1e-9)

    # -- observation helpers -------------------------------------------------

    def queue_count(self, backend_id: str) -> int:
        return len(self.queues[backend_id])

    def queue_depths(self) -> dict:
        return {bid: len(q) for bid, q in self.queues.items()}

    def queue_state(self, backend_id: str) -> QueueState:
        return queue_state_for(len(self.queues[backend_id]), self.cfg.queue_edges)

    def expected_service(self, backend_id: str) -> float:
        b = self.cfg.backend(backend_id)
        return b.service_scale * (0.1 + self.cfg.op_overhead * self.nominal_ops)

    def latency_fn(self, backend_id: str):
        """Predicted dispatch latency for candidate offsets under queue state q."""
        base = self.expected_service(backend_id)
        waits = self.cfg.queue_wait_est

        def fn(thetas, q):
            return base + waits[int(q)] + np.abs(thetas)

        return fn

    def crosstalk(self) -> CrosstalkState:
        return CrosstalkState(self._crosstalk_base * self.activity_ema)

    # -- adversaries ---------------------------------------------------------

    def adversary_rl(self) -> tuple:
        """(batch-size multiplier, co-tenant jobs submitted) for this step."""
        adv = self.cfg.adversary
        flip, submit = self.adv_rng.random(2)  # always drawn so streams stay aligned
        if flip < 1.0 / adv.rl_mean_dwell:
            self.rl_bit ^= 1
        if self.workload is not Workload.RL or adv.rl_depth == 0:
            return 1.0, 0
        level = adv.rl_levels[self.rl_bit]
        jobs = int(self.rl_bit == 1 and submit < adv.rl_job_prob)
        return 1.0 + adv.rl_depth * (level - 1.0), jobs

    def adversary_timing(self) -> tuple:
        """(extra gap in us, injected job count) for this step."""
        adv = self.cfg.adversary
        if self.workload is not Workload.TIMING or adv.timing_amplitude <= 0:
            return 0.0, 0
        if self.k % adv.timing_period < adv.timing_width:
            return adv.timing_amplitude * self.cfg.control_interval, adv.timing_jobs
        return 0.0, 0

    # -- dynamics ------------------------------------------------------------

    def _drain(self, elapsed: float):
        for q in self.queues.values():
            left = elapsed
            while q and left > 0:
                if q[0] <= left:
                    left -= q.popleft()
                else:
                    q[0] -= left
                    left = 0.0

    def step(self, layer: Layer, theta: float, backend_id: Optional[str] = None) -> StepResult:
        cfg = self.cfg
        bid = backend_id or self._ids[0]
        bk = cfg.backend(bid)
        rng = self.rng

        counts = rng.poisson(self._rates)
        for i, c in enumerate(counts):
            if c:
                self.queues[self._ids[i]].extend(rng.exponential(self._works[i], size=c).tolist())
        jitter = rng.normal(0.0, cfg.dispatch_jitter) if cfg.dispatch_jitter > 0 else 0.0
        noise = rng.normal(0.0, cfg.zeta_noise)

        mult, rl_jobs = self.adversary_rl()
        extra_gap, inject = self.adversary_timing()
        inject += rl_jobs
        queue = self.queues[bid]
        if inject:
            queue.extend([bk.mean_work] * inject)

        backlog = len(queue)
        wait = float(sum(queue))
        q = queue_state_for(backlog, cfg.queue_edges)
        ops = layer.n_ops * mult
        service = bk.service_scale * (layer.duration + cfg.op_overhead * ops)
        dt = cfg.control_interval + cfg.wait_coupling * wait + (theta - self.prev_theta) + jitter + extra_gap
        dt = max(dt, cfg.dt_floor)
        activity = backlog / cfg.activity_ref
        self.activity_ema = self._act_decay * self.activity_ema + (1 - self._act_decay) * activity

        feats = IntervalFeatures(
            dt=dt,
            b=ops / self.nominal_ops,
            q=q,
            zeta=ops / self.n + cfg.zeta_act * activity + noise,
        )
        latency = service + wait + abs(theta)
        power = cfg.p_base + cfg.c_op * ops + cfg.c_act * activity + cfg.c_jit * abs(theta)

        self._drain(dt)
        self.prev_theta = theta
        self.k += 1
        return StepResult(feats, latency, power, ops, activity, bid, burst=extra_gap > 0)
