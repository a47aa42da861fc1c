"""Advantage upper bound from per-interval budgets (Pinsker plus a hybrid over intervals).

Sums use ``math.fsum`` (correctly rounded), so the constant-trace case equals
the closed form ``T * term`` bit for bit and prefixes never exceed the whole.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import InputError

SQRT2 = math.sqrt(2.0)


def _check(name: str, values) -> list:
    out = [float(v) for v in values]
    for v in out:
        if not math.isfinite(v) or v < 0:
            raise InputError(f"{name} entries must be finite and >= 0, got {v}")
    return out


@dataclass(frozen=True)
class BoundInputs:
    """Budgets over the admitted intervals, calibration error per interval, sync slack."""

    budgets: tuple
    eps_est: tuple
    eps_sync: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "budgets", tuple(_check("budgets", self.budgets)))
        object.__setattr__(self, "eps_est", tuple(_check("eps_est", self.eps_est)))
        _check("eps_sync", [self.eps_sync])
        if len(self.budgets) != len(self.eps_est):
            raise InputError("budgets and eps_est must cover the same intervals")

    @classmethod
    def constant(cls, T: int, delta_budget: float, eps_est: float = 0.0, eps_sync: float = 0.0):
        if T < 0:
            raise InputError("T must be >= 0")
        return cls((delta_budget,) * T, (eps_est,) * T, eps_sync)

    def prefix(self, k: int) -> "BoundInputs":
        return BoundInputs(self.budgets[:k], self.eps_est[:k], self.eps_sync)

    @property
    def T(self) -> int:
        return len(self.budgets)


@dataclass(frozen=True)
class BoundResult:
    total: float
    budget_term: float
    error_term: float
    T: int

    @property
    def vacuous(self) -> bool:
        """An advantage bound above 1 says nothing, but is reported unclipped."""
        return self.total > 1.0

    def to_dict(self) -> dict:
        return {"bound": self.total, "budget_term": self.budget_term,
                "error_term": self.error_term, "T": self.T, "vacuous": self.vacuous}


def bound_terms(bi: BoundInputs) -> BoundResult:
    a = math.fsum(math.sqrt(2.0 * b) for b in bi.budgets)
    e = math.fsum(SQRT2 * (x + bi.eps_sync) for x in bi.eps_est)
    return BoundResult(a + e, a, e, bi.T)


def advantage_bound(bi: BoundInputs) -> float:
    return bound_terms(bi).total


def uniform_bound(T: int, delta_budget: float, eps_bar: float = 0.0, eps_sync: float = 0.0) -> float:
    _check("uniform bound inputs", [T, delta_budget, eps_bar, eps_sync])
    return T * math.sqrt(2.0 * delta_budget) + T * (SQRT2 * (eps_bar + eps_sync))


def inputs_from_episode(episode: dict, eps_est: float = 0.0, eps_sync: float = 0.0) -> BoundInputs:
    """Admitted intervals of a stored episode, each charged the runtime budget."""
    th = episode.get("thresholds")
    if not th:
        raise InputError("episode ran monitor-only; it has no budget to bound against")
    admitted = sum(1 for d in episode["decision"] if d != 2)
    return BoundInputs.constant(admitted, th["delta_budget"], eps_est, eps_sync)


def bound_from_file(path, eps_est: float = 0.0, eps_sync: float = 0.0) -> BoundResult:
    try:
        episode = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read episode file {path}: {exc}") from exc
    return bound_terms(inputs_from_episode(episode, eps_est, eps_sync))


def prefix_bounds(bi: BoundInputs) -> Sequence[float]:
    return [advantage_bound(bi.prefix(k)) for k in range(bi.T + 1)]
