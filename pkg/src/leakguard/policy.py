"""Dual-threshold decisions, baseline-quantile calibration and threshold transfer."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import CalibrationError, ConfigurationError, LifecycleError
from .estimator import LeakageEstimate
from .features import nearest_rank

log = logging.getLogger(__name__)


class Decision(enum.IntEnum):
    CONTINUE = 0
    WARN = 1
    ABORT = 2


class AbortReason(enum.IntEnum):
    NONE = 0
    KILL_THRESHOLD = 1
    STRIKE_LIMIT = 2
    ENV_FAILURE = 3


@dataclass(frozen=True)
class Thresholds:
    delta_budget: float
    delta_kill: float
    clamped: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not 0 < self.delta_budget < self.delta_kill:
            raise ConfigurationError(
                f"need 0 < delta_budget < delta_kill, got ({self.delta_budget}, {self.delta_kill})"
            )

    def to_dict(self) -> dict:
        return {"delta_budget": self.delta_budget, "delta_kill": self.delta_kill}


@dataclass(frozen=True)
class PolicyConfig:
    strike_limit: int = 3
    cooldown: int = 10
    q_budget: float = 0.99
    q_kill: float = 0.999
    g_min: float = 0.01

    def __post_init__(self):
        if self.strike_limit < 1 or self.cooldown < 0 or self.g_min < 0:
            raise ConfigurationError(f"invalid policy config {self}")
        if not 0 < self.q_budget < self.q_kill <= 1:
            raise ConfigurationError("need 0 < q_budget < q_kill <= 1")


@dataclass
class PolicyState:
    strikes: int = 0
    cooldown_remaining: int = 0
    aborted: bool = False
    reason: AbortReason = AbortReason.NONE


def evaluate(est: Union[LeakageEstimate, float], th: Thresholds, st: PolicyState,
             strike_limit: int = 3) -> Decision:
    if st.aborted:
        raise LifecycleError("policy already aborted this episode")
    value = est.value if isinstance(est, LeakageEstimate) else float(est)
    if value >= th.delta_kill:
        st.aborted, st.reason = True, AbortReason.KILL_THRESHOLD
        return Decision.ABORT
    if value <= th.delta_budget:
        st.strikes = 0
        return Decision.CONTINUE
    st.strikes += 1
    if st.strikes >= strike_limit:
        st.aborted, st.reason = True, AbortReason.STRIKE_LIMIT
        return Decision.ABORT
    return Decision.WARN


def replay(values: Sequence[float], th: Thresholds, strike_limit: int = 3) -> list:
    """Apply the policy to a recorded estimate trace, stopping at the first ABORT.

    Values are clamped at ``th.delta_kill`` first, as the live estimator would.
    """
    st = PolicyState()
    out = []
    for v in values:
        d = evaluate(min(float(v), th.delta_kill), th, st, strike_limit)
        out.append(d)
        if d is Decision.ABORT:
            break
    return out


def calibrate(baseline: Sequence[float], q_budget: float = 0.99, q_kill: float = 0.999,
              g_min: float = 0.01, min_samples: int = 1000) -> Thresholds:
    """Thresholds at nearest-rank baseline quantiles, with a minimum relative gap."""
    if not q_budget < q_kill:
        raise CalibrationError("q_budget must be below q_kill")
    x = np.sort(np.asarray(baseline, dtype=float))
    if len(x) < min_samples:
        raise CalibrationError(f"{len(x)} baseline samples, need >= {min_samples}")
    if not np.all(np.isfinite(x)):
        raise CalibrationError("non-finite baseline samples")
    if x[0] == x[-1]:
        raise CalibrationError("degenerate baseline: all samples equal")
    budget = nearest_rank(x, q_budget)
    if budget <= 0:
        raise CalibrationError("budget quantile is not positive")
    kill = max(nearest_rank(x, q_kill), budget * (1.0 + g_min))
    if kill <= budget:
        kill = float(np.nextafter(budget, np.inf))
    return Thresholds(budget, kill)


def _rank_of(sorted_x: np.ndarray, v: float):
    """Fractional order-statistic position of v in sorted_x (0-based), and a clamp flag."""
    n = len(sorted_x)
    if v < sorted_x[0]:
        return 0.0, True
    if v > sorted_x[-1]:
        return float(n - 1), True
    j = int(np.searchsorted(sorted_x, v, side="right")) - 1
    if j >= n - 1:
        return float(n - 1), False
    lo, hi = sorted_x[j], sorted_x[j + 1]
    frac = 0.0 if hi == lo else (v - lo) / (hi - lo)
    return j + frac, False


def _value_at(sorted_y: np.ndarray, u: float) -> float:
    j = int(np.floor(u))
    frac = u - j
    if j >= len(sorted_y) - 1:
        return float(sorted_y[-1])
    if frac == 0.0:
        return float(sorted_y[j])
    return float(sorted_y[j] + frac * (sorted_y[j + 1] - sorted_y[j]))


def transfer(th1: Thresholds, base1: Sequence[float], base2: Sequence[float]) -> Thresholds:
    """Quantile-alignment map: same empirical rank in base1 -> same rank in base2.

    Ranks are interpolated between order statistics so the map is exactly the
    identity on equal baselines and scales with elementwise-scaled baselines.
    Thresholds outside base1's range clamp to its extreme rank and are flagged.
    """
    x = np.sort(np.asarray(base1, dtype=float))
    y = np.sort(np.asarray(base2, dtype=float))
    for name, s in (("base1", x), ("base2", y)):
        if len(s) < 2 or s[0] == s[-1]:
            raise CalibrationError(f"degenerate {name} for transfer")
    inside = all(x[0] <= v <= x[-1] for v in (th1.delta_budget, th1.delta_kill))
    if inside and len(x) == len(y) and np.array_equal(x, y):
        # the alignment map is the identity here; interpolation could drift by an ulp
        return Thresholds(th1.delta_budget, th1.delta_kill)
    scale = (len(y) - 1) / (len(x) - 1)
    out = []
    flagged = False
    for v in (th1.delta_budget, th1.delta_kill):
        u, clamped = _rank_of(x, v)
        flagged |= clamped
        out.append(_value_at(y, u * scale))
    if flagged:
        log.warning("threshold outside Tier I baseline range; clamped to extreme rank")
    budget, kill = out
    if kill <= budget:
        kill = float(np.nextafter(budget, np.inf))
    return Thresholds(budget, kill, clamped=flagged)
