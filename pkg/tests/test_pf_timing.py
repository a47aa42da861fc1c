import numpy as np
import pytest
from hypothesis import given, strategies as st

from leakguard.errors import ConfigurationError, DegenerateParticlesError
from leakguard.features import QueueState
from leakguard.pf_timing import (
    ParticleSet, PFConfig, ess, propose, sample_dispatch, systematic_resample,
)

ALWAYS_OK = lambda th, q: np.zeros_like(th)  # noqa: E731


def test_config_defaults():
    cfg = PFConfig()
    assert cfg.sigma_proc == pytest.approx((0.1, 0.2, 0.4, 0.8))
    with pytest.raises(ConfigurationError):
        PFConfig(sigma_proc=(0.3, 0.2, 0.4, 0.8))
    with pytest.raises(ConfigurationError):
        PFConfig(N=1)


def test_ess_examples():
    assert ess(np.full(100, 0.01)) == pytest.approx(100)
    assert ess(np.eye(10)[3]) == 1.0
    assert ess([0.5, 0.5] + [0.0] * 8) == 2.0


def test_zero_noise_keeps_thetas():
    cfg = PFConfig(N=8, sigma_proc=(0.0, 0.0, 0.0, 0.0))
    ps = ParticleSet(np.linspace(-0.5, 0.5, 8), np.full(8, 1 / 8))
    out = propose(ps, QueueState.HEAVY, cfg, ALWAYS_OK, np.random.default_rng(0))
    assert np.array_equal(out.thetas, ps.thetas)
    assert np.array_equal(out.weights, ps.weights) and not out.resampled


def test_clamp_boundary():
    cfg = PFConfig(N=4, sigma_t=1.0)
    rng = np.random.default_rng(0)
    ps = ParticleSet(np.zeros(4), np.full(4, 0.25))
    # noise of several sigma_t saturates exactly at the bound
    cfg_big = PFConfig(N=4, sigma_t=1.0, sigma_proc=(50.0, 50.0, 50.0, 50.0))
    out = propose(ps, QueueState.IDLE, cfg_big, ALWAYS_OK, rng)
    assert np.all(np.abs(out.thetas) == 1.0)
    assert np.max(np.abs(propose(ps, QueueState.HEAVY, cfg, ALWAYS_OK, rng).thetas)) <= 1.0


def test_latency_gate_and_resample_trigger():
    cfg = PFConfig(N=10, sigma_proc=(0.0,) * 4)
    thetas = np.linspace(-1, 1, 10)
    ps = ParticleSet(thetas, np.full(10, 0.1))
    gate = lambda th, q: np.where(th > 0.5, 100.0, 0.0)  # noqa: E731
    out = propose(ps, QueueState.IDLE, cfg, gate, np.random.default_rng(0))
    assert out.ess_before == pytest.approx(7.0) and not out.resampled
    assert np.all(out.thetas[out.weights > 0] <= 0.5)
    gate2 = lambda th, q: np.where(th > -0.5, 100.0, 0.0)  # noqa: E731
    out2 = propose(ps, QueueState.IDLE, cfg, gate2, np.random.default_rng(0))
    assert out2.ess_before == pytest.approx(3.0) and out2.resampled
    assert np.all(out2.weights == 0.1)
    assert np.all(out2.thetas <= -0.5)


def test_degenerate_set():
    cfg = PFConfig(N=4)
    ps = ParticleSet.initial(4)
    with pytest.raises(DegenerateParticlesError):
        propose(ps, QueueState.IDLE, cfg, lambda th, q: np.full_like(th, 99.0), np.random.default_rng(0))
    with pytest.raises(DegenerateParticlesError):
        sample_dispatch(ParticleSet(np.zeros(3), np.zeros(3)), np.random.default_rng(0))


def test_sample_dispatch_examples():
    rng = np.random.default_rng(0)
    ps = ParticleSet(np.array([0.1, 0.2, 0.3]), np.array([0.0, 1.0, 0.0]))
    assert {sample_dispatch(ps, rng) for _ in range(200)} == {0.2}
    same = ParticleSet(np.full(5, 0.7), np.full(5, 0.2))
    assert sample_dispatch(same, rng) == 0.7


def test_sample_dispatch_frequencies():
    rng = np.random.default_rng(11)
    N, draws = 8, 100_000
    ps = ParticleSet(np.arange(N, dtype=float), np.full(N, 1 / N))
    counts = np.bincount([int(sample_dispatch(ps, rng)) for _ in range(draws)], minlength=N)
    sd = np.sqrt(draws * (1 / N) * (1 - 1 / N))
    assert np.all(np.abs(counts - draws / N) <= 3 * sd)


@given(w=st.lists(st.floats(0.0, 1.0), min_size=2, max_size=50), u=st.integers(0, 2**31))
def test_systematic_resample_counts(w, u):
    w = np.asarray(w)
    if w.sum() <= 0:
        return
    w = w / w.sum()
    idx = systematic_resample(w, np.random.default_rng(u))
    N = len(w)
    counts = np.bincount(idx, minlength=N)
    assert len(idx) == N and idx.max() < N
    assert np.all(counts[w == 0] == 0)
    assert np.all(np.abs(counts - N * w) < 1 + 1e-9)


@given(seed=st.integers(0, 2**32 - 1), q=st.sampled_from(list(QueueState)),
       limit=st.floats(0.1, 2.0))
def test_propose_invariants(seed, q, limit):
    cfg = PFConfig(N=32)
    rng = np.random.default_rng(seed)
    ps = ParticleSet(rng.uniform(-1, 1, 32), rng.dirichlet(np.ones(32)))
    lat = lambda th, q: 10.0 + 4.0 * np.abs(th) / limit  # noqa: E731
    try:
        out = propose(ps, q, cfg, lat, rng)
    except DegenerateParticlesError:
        return
    assert np.max(np.abs(out.thetas)) <= cfg.sigma_t
    assert np.all(lat(out.thetas[out.weights > 0], q) <= cfg.ell_max)
    assert abs(out.weights.sum() - 1) <= 1e-12
    assert out.resampled == (out.ess_before < 16)
    if out.resampled:
        assert np.all(out.weights == 1 / 32)


def test_reproducible_trajectories():
    cfg = PFConfig()

    def run(seed):
        rng = np.random.default_rng(seed)
        ps = ParticleSet.initial(cfg.N)
        thetas = []
        for k in range(50):
            ps = propose(ps, QueueState(k % 4), cfg, lambda th, q: 8 + 5 * th, rng)
            thetas.append(sample_dispatch(ps, rng))
        return thetas

    assert run(3) == run(3)
    assert run(3) != run(4)
