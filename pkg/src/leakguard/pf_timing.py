"""Queue-aware dispatch jitter from a clamped random-walk particle filter."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DegenerateParticlesError
from .features import QueueState

# process-noise multipliers for idle/light/moderate/heavy, times sigma_base
SIGMA_PROC_SCALE = (0.25, 0.5, 1.0, 2.0)

LatencyFn = Callable[[np.ndarray, QueueState], np.ndarray]


@dataclass(frozen=True)
class PFConfig:
    N: int = 64
    sigma_t: float = 1.0
    ell_max: float = 12.0
    sigma_base: float = 0.4
    sigma_proc: tuple = ()

    def __post_init__(self):
        if not self.sigma_proc:
            object.__setattr__(
                self, "sigma_proc", tuple(s * self.sigma_base for s in SIGMA_PROC_SCALE)
            )
        sp = self.sigma_proc
        if self.N < 2 or self.sigma_t <= 0 or self.ell_max <= 0:
            raise ConfigurationError(f"invalid PF config {self}")
        if len(sp) != 4 or min(sp) < 0 or any(b < a for a, b in zip(sp, sp[1:])):
            raise ConfigurationError("sigma_proc needs 4 non-negative, non-decreasing values")


@dataclass
class ParticleSet:
    thetas: np.ndarray
    weights: np.ndarray
    # diagnostics of the last propose step
    ess_before: float = field(default=float("nan"))
    resampled: bool = False

    @classmethod
    def initial(cls, N: int) -> "ParticleSet":
        return cls(np.zeros(N), np.full(N, 1.0 / N))

    @property
    def N(self) -> int:
        return len(self.thetas)


def ess(weights) -> float:
    """1 / sum(w^2), with a correctly rounded sum so the value is order independent."""
    w = np.asarray(weights, dtype=float)
    return 1.0 / math.fsum(w * w)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    N = len(weights)
    positions = (rng.random() + np.arange(N)) / N
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right")


def propose(
    ps: ParticleSet,
    q: QueueState,
    cfg: PFConfig,
    latency_fn: LatencyFn,
    rng: np.random.Generator,
) -> ParticleSet:
    """One step of the timing sampler: diffuse, clamp, gate on latency, resample."""
    N = ps.N
    sigma = cfg.sigma_proc[int(q)]
    eta = rng.normal(0.0, sigma, size=N) if sigma > 0 else np.zeros(N)
    thetas = np.clip(ps.thetas + eta, -cfg.sigma_t, cfg.sigma_t)
    ok = np.asarray(latency_fn(thetas, q)) <= cfg.ell_max
    w = ps.weights * ok
    total = math.fsum(w)
    if total <= 0:
        raise DegenerateParticlesError("all particles violate the latency bound")
    w = w / total
    e = ess(w)
    resampled = e < N / 2
    if resampled:
        idx = systematic_resample(w, rng)
        thetas = thetas[idx]
        w = np.full(N, 1.0 / N)
    return ParticleSet(thetas, w, ess_before=e, resampled=resampled)


def sample_dispatch(ps: ParticleSet, rng: np.random.Generator) -> float:
    """Draw one particle in proportion to its weight and return its offset."""
    total = ps.weights.sum()
    if not total > 0:
        raise DegenerateParticlesError("cannot sample from a zero-weight set")
    cdf = np.cumsum(ps.weights)
    i = int(np.searchsorted(cdf, rng.random() * total, side="right"))
    return float(ps.thetas[min(i, ps.N - 1)])
