"""Multi-objective backend selection with hysteresis-gated switching."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .errors import ConfigurationError
from .padding import Segment

BACKEND_KINDS = ("QPU", "TN", "CPU", "GPU")


@dataclass(frozen=True)
class Backend:
    id: str
    kind: str = "QPU"
    err_1q: float = 1e-3
    err_2q: float = 1e-2
    service_scale: float = 1.0
    # co-tenant load on this backend's FIFO queue
    arrival_rate: float = 0.5
    mean_work: float = 6.0

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ConfigurationError(f"unknown backend kind {self.kind!r}")
        if not (0 <= self.err_1q <= 1 and 0 <= self.err_2q <= 1):
            raise ConfigurationError(f"error rates of {self.id} outside [0, 1]")
        if self.service_scale <= 0 or self.arrival_rate < 0 or self.mean_work <= 0:
            raise ConfigurationError(f"invalid service/queue params for {self.id}")


@dataclass(frozen=True)
class RoutingPolicy:
    alpha: float = 1.0
    omega_leak: float = 1.0
    gamma: float = 0.5
    tau_frac: float = 0.1  # tau = tau_frac * delta_budget
    m: int = 3
    delta: float = 0.1
    depth_ref: float = 10.0

    def __post_init__(self):
        if min(self.alpha, self.omega_leak, self.gamma, self.tau_frac) < 0 or self.m < 1:
            raise ConfigurationError(f"invalid routing policy {self}")
        if not 0 < self.delta < 1 or self.depth_ref <= 0:
            raise ConfigurationError("delta must lie in (0, 1) and depth_ref > 0")


@dataclass
class RoutingState:
    """What the router can see: queue depths and the last estimate per backend."""

    queue_depth: Mapping[str, int] = field(default_factory=dict)
    leak: Mapping[str, float] = field(default_factory=dict)
    delta_kill: float = math.inf


def segment_fidelity(h: Backend, seg: Segment) -> float:
    log_fid = 0.0
    for layer in seg.layers:
        for op in layer.ops:
            err = h.err_2q if len(op.qubits) == 2 else h.err_1q
            if err >= 1.0:
                return 0.0
            log_fid += math.log1p(-err)
    return math.exp(log_fid)


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def leak_risk(h: Backend, state: RoutingState) -> float:
    kill = state.delta_kill
    if not math.isfinite(kill) or kill <= 0:
        return 0.0
    return _clip01(state.leak.get(h.id, 0.0) / kill)


def queue_penalty(h: Backend, state: RoutingState, policy: RoutingPolicy) -> float:
    return _clip01(state.queue_depth.get(h.id, 0) / policy.depth_ref)


def cost(h: Backend, seg: Segment, state: RoutingState, policy: RoutingPolicy,
         fidelity: Optional[float] = None) -> float:
    fid = segment_fidelity(h, seg) if fidelity is None else fidelity
    return (
        policy.alpha * (1.0 - fid)
        + policy.omega_leak * leak_risk(h, state)
        + policy.gamma * queue_penalty(h, state, policy)
    )


def select_backend(seg: Segment, backends: Sequence[Backend], state: RoutingState,
                   policy: RoutingPolicy) -> Backend:
    if not backends:
        raise ConfigurationError("no backends registered")
    return min(sorted(backends, key=lambda b: b.id), key=lambda b: cost(b, seg, state, policy))


def should_switch(recent_estimates: Sequence[float], current_cost: float, candidate_cost: float,
                  delta_budget: float, policy: RoutingPolicy) -> bool:
    """Hysteresis rule: sustained pressure near budget, or a large enough cost drop.

    Fewer than ``m`` recorded intervals never satisfies the pressure clause.
    """
    tau = policy.tau_frac * delta_budget
    recent = list(recent_estimates)[-policy.m:]
    pressure = len(recent) >= policy.m and all(v >= delta_budget - tau for v in recent)
    cheaper = candidate_cost < current_cost and candidate_cost <= (1.0 - policy.delta) * current_cost
    return pressure or cheaper


class Router:
    """Per-episode routing state: current backend, estimate history, cooldown."""

    def __init__(self, backends: Sequence[Backend], policy: RoutingPolicy,
                 delta_budget: float = math.inf, cooldown: int = 10):
        if not backends:
            raise ConfigurationError("no backends registered")
        self.backends = sorted(backends, key=lambda b: b.id)
        self.policy = policy
        self.delta_budget = delta_budget
        self.cooldown = cooldown
        self.cooldown_remaining = 0
        self.current: Optional[Backend] = None
        self.history: deque = deque(maxlen=policy.m)
        self.leak: dict = {}
        self.switches = 0

    def route(self, seg: Segment, queue_depth: Mapping[str, int], delta_kill: float):
        """Pick the backend for ``seg``; returns ``(backend, switched)``."""
        state = RoutingState(queue_depth=queue_depth, leak=self.leak, delta_kill=delta_kill)
        best = select_backend(seg, self.backends, state, self.policy)
        if self.current is None:
            self.current = best
            return best, False
        if best.id == self.current.id or self.cooldown_remaining > 0:
            return self.current, False
        budget = self.delta_budget if math.isfinite(self.delta_budget) else math.inf
        if should_switch(self.history, cost(self.current, seg, state, self.policy),
                         cost(best, seg, state, self.policy), budget, self.policy):
            self.current = best
            self.history.clear()
            self.cooldown_remaining = self.cooldown
            self.switches += 1
            return best, True
        return self.current, False

    def observe(self, delta_hat: float):
        """Record one interval's estimate against the current backend."""
        if self.current is not None:
            self.leak[self.current.id] = delta_hat
        self.history.append(delta_hat)
        if self.cooldown_remaining > 0:
            self.cooldown_remaining -= 1
