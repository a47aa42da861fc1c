import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import synthetic_batch
from leakguard.errors import (
    ArtifactCorruptionError, CalibrationError, ConfigMismatchError, ConfigurationError,
    DigestMismatchError, InputError,
)
from leakguard.estimator import (
    EstimatorConfig, ReferenceModel, WindowState, artifacts_from_bytes, artifacts_to_bytes,
    build_reference, build_reference_from_episodes, crosstalk_penalty, estimate, kl_divergence,
    load_artifacts, merge_references, push_interval, save_artifacts, smoothed_histogram,
)
from leakguard.features import build_codebook

CFG = EstimatorConfig()


def small_cfg(B=8, W=16, S=8, H=10.0):
    return EstimatorConfig(W=W, S=S, H=H, B=B)


def ref_for(p, cfg, key=(4, 0)):
    return ReferenceModel({key: np.asarray(p, dtype=float)}, cfg.locked_tuple())


def test_defaults():
    assert (CFG.W, CFG.S, CFG.H, CFG.alpha, CFG.lam, CFG.beta_est, CFG.B) == (
        128, 64, 10.0, 0.5, 1e-3, 0.1, 2560)
    assert CFG.decay == pytest.approx(0.5 ** 0.1)
    with pytest.raises(ConfigurationError):
        EstimatorConfig(S=200)


def test_first_window_of_constant_codeword():
    st_ = WindowState(CFG)
    hs = [push_interval(st_, 0) for _ in range(128)]
    assert all(h is None for h in hs[:-1])
    h = hs[-1]
    assert h[0] == pytest.approx(128.5 / 1408, abs=1e-15)
    assert h[0] == pytest.approx(0.09126, abs=1e-5)
    assert np.all(h[1:] == 0.5 / 1408)


def test_warm_up_and_half_overlap():
    st_ = WindowState(CFG)
    emitted = sum(st_.push(1) is not None for _ in range(127))
    assert emitted == 0 and not st_.ready
    emitted = sum(st_.push(1) is not None for _ in range(1 + 64))
    assert emitted == 2 and st_.windows_emitted == 2


def test_out_of_range_codeword():
    st_ = WindowState(CFG)
    with pytest.raises(InputError):
        st_.push(2560)
    with pytest.raises(InputError):
        st_.push(-1)


def test_window_matches_recount():
    cfg = small_cfg()
    rng = np.random.default_rng(0)
    codes = rng.integers(0, 8, size=200)
    st_ = WindowState(cfg)
    for i, c in enumerate(codes):
        h = st_.push(int(c))
        if h is not None:
            counts = np.bincount(codes[i + 1 - cfg.W:i + 1], minlength=8)
            assert np.array_equal(h, smoothed_histogram(counts, cfg.W, cfg.alpha))


def test_ema_fold_oracle():
    cfg = small_cfg()
    rng = np.random.default_rng(1)
    codes = rng.integers(0, 8, size=120)
    st_ = WindowState(cfg)
    ema = np.zeros(8)
    g = 2 ** (-1 / cfg.H)
    for c in codes:
        h = st_.push(int(c))
        if h is not None:
            ema = g * ema + (1 - g) * h
            ema = ema / ema.sum()
            np.testing.assert_allclose(st_.ema_hist, ema, rtol=1e-13)


def test_prime_starts_from_prior():
    cfg = small_cfg()
    st_ = WindowState(cfg)
    prior = np.full(8, 1 / 8)
    st_.prime(prior)
    for _ in range(cfg.W):
        h = st_.push(0)
    g = cfg.decay
    np.testing.assert_allclose(st_.ema_hist, g * prior + (1 - g) * h, rtol=1e-12)
    with pytest.raises(InputError):
        st_.prime(np.ones(3))


def test_kl_examples():
    assert kl_divergence([0.5, 0.5], [0.75, 0.25]) == pytest.approx(0.143841, abs=1e-6)
    assert kl_divergence([0.5, 0.5], [0.75, 0.25]) == pytest.approx(0.5 * math.log(4 / 3), rel=1e-12)
    p = np.array([0.2, 0.3, 0.5])
    assert kl_divergence(p, p) == 0.0
    assert kl_divergence([0.0, 1.0], [0.5, 0.5]) == pytest.approx(math.log(2))


def test_kl_one_hot_max_at_reference_minimum():
    rng = np.random.default_rng(2)
    for _ in range(20):
        q = rng.dirichlet(np.ones(8))
        vals = [kl_divergence(np.eye(8)[i], q) for i in range(8)]
        assert int(np.argmax(vals)) == int(np.argmin(q))


def test_kl_errors():
    with pytest.raises(InputError):
        kl_divergence([0.5, 0.5], [1.0])
    with pytest.raises(ArtifactCorruptionError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])


def prob_vectors(size):
    return arrays(np.float64, size, elements=st.floats(1e-6, 1.0)).map(lambda a: a / a.sum())


@given(p=prob_vectors(8), q=prob_vectors(8))
def test_kl_non_negative(p, q):
    assert kl_divergence(p, q) >= 0.0


@given(p=prob_vectors(8))
def test_kl_zero_iff_equal(p):
    assert abs(kl_divergence(p, p)) <= 1e-12
    q = np.roll(p, 1)
    if np.max(np.abs(q - p)) > 1e-3:
        assert kl_divergence(p, q) > 0


def test_crosstalk_penalty_identity():
    assert crosstalk_penalty(np.eye(3), 0.1) == pytest.approx(0.1 * math.sqrt(3))
    assert crosstalk_penalty(np.eye(3), 0.1) == pytest.approx(0.17321, abs=1e-5)
    assert crosstalk_penalty(None, 0.1) == 0.0


def _ready_state(cfg, codes):
    st_ = WindowState(cfg)
    for c in codes:
        st_.push(int(c))
    return st_


def test_estimate_examples():
    cfg = small_cfg()
    st_ = _ready_state(cfg, [0] * cfg.W)
    ref = ref_for(st_.ema_hist.copy(), cfg)
    e = estimate(st_, ref, 4, 0, np.zeros((3, 3)), cfg)
    assert e.value == 0.0 and not e.clamped
    e = estimate(st_, ref, 4, 0, np.eye(3), cfg)
    assert e.raw == pytest.approx(0.1 * math.sqrt(3))
    kill = e.raw - 1.0 if e.raw > 1 else 0.05
    e2 = estimate(st_, ref, 4, 0, np.eye(3) * 100, cfg, delta_kill=kill)
    assert e2.value == kill and e2.clamped and e2.raw > kill
    with pytest.raises(ConfigurationError):
        estimate(st_, ref, 8, 0, None, cfg)
    with pytest.raises(ConfigurationError):
        estimate(WindowState(cfg), ref, 4, 0, None, cfg)


def test_raw_kill_plus_one_clamps():
    cfg = small_cfg()
    st_ = _ready_state(cfg, [0] * cfg.W)
    ref = ref_for(np.full(8, 1 / 8), cfg)
    raw = estimate(st_, ref, 4, 0, None, cfg).raw
    e = estimate(st_, ref, 4, 0, None, cfg, delta_kill=raw - 1.0)
    assert e.value == raw - 1.0 and e.clamped


@given(scale=st.floats(0, 10), extra=st.floats(0, 10))
def test_penalty_monotone_until_clamp(scale, extra):
    cfg = small_cfg()
    st_ = _ready_state(cfg, list(range(8)) * 2)
    ref = ref_for(np.full(8, 1 / 8), cfg)
    a = estimate(st_, ref, 4, 0, np.eye(3) * scale, cfg, delta_kill=0.5)
    b = estimate(st_, ref, 4, 0, np.eye(3) * (scale + extra), cfg, delta_kill=0.5)
    assert b.value >= a.value
    assert a.value <= 0.5 and b.value <= 0.5


@given(codes=st.lists(st.integers(0, 7), min_size=16, max_size=80))
def test_ema_normalised_and_deterministic(codes):
    cfg = small_cfg()
    a, b = WindowState(cfg), WindowState(cfg)
    ref = ref_for(np.full(8, 1 / 8), cfg)
    for c in codes:
        ha = a.push(c)
        b.push(c)
        if ha is not None:
            assert abs(a.ema_hist.sum() - 1.0) <= 1e-9
            ea = estimate(a, ref, 4, 0, None, cfg)
            eb = estimate(b, ref, 4, 0, None, cfg)
            assert ea == eb


def test_uniform_stream_reference():
    cfg = EstimatorConfig(W=16, S=8, B=4)
    rng = np.random.default_rng(3)
    ref = build_reference({(4, 0): rng.integers(0, 4, size=100_000)}, cfg)
    np.testing.assert_allclose(ref.classes[(4, 0)], 0.25, atol=1e-2)


def test_reference_floor_and_determinism():
    rng = np.random.default_rng(4)
    stream = rng.integers(0, 50, size=5000)
    r1 = build_reference({(4, 0): stream}, CFG)
    r2 = build_reference({(4, 0): stream.copy()}, CFG)
    assert r1.classes[(4, 0)].min() >= 1e-3 / 2560 * (1 - 1e-12)
    assert r1.checksum == r2.checksum
    assert abs(r1.classes[(4, 0)].sum() - 1) <= 1e-9


def test_reference_oracle_average_then_mix():
    cfg = small_cfg()
    stream = np.array([0, 1, 2, 3, 4, 5, 6, 7] * 5 + [0] * 8)
    ref = build_reference({(4, 1): stream}, cfg)
    hs = [smoothed_histogram(np.bincount(stream[s:s + 16], minlength=8), 16, 0.5)
          for s in range(0, len(stream) - 16 + 1, 8)]
    p = (1 - cfg.lam) * np.mean(hs, axis=0) + cfg.lam / 8
    np.testing.assert_allclose(ref.classes[(4, 1)], p / p.sum(), rtol=1e-13)


def test_reference_errors():
    with pytest.raises(CalibrationError):
        build_reference({(4, 0): [1, 2, 3]}, CFG)
    with pytest.raises(CalibrationError):
        build_reference({}, CFG)
    with pytest.raises(CalibrationError):
        ReferenceModel({(4, 0): np.full(2560, 1.0)}, CFG.locked_tuple())
    bad = np.zeros(2560)
    bad[0] = 1.0
    with pytest.raises(CalibrationError):
        ReferenceModel({(4, 0): bad}, CFG.locked_tuple())


def test_reference_is_read_only():
    ref = build_reference({(4, 0): np.arange(300) % 40}, CFG)
    with pytest.raises(ValueError):
        ref.classes[(4, 0)][0] = 1.0


def test_reference_from_episodes_credits_emission_class():
    cfg = small_cfg()
    codes = np.array([0] * 16 + [7] * 8)
    labels = np.array([0] * 16 + [2] * 8)
    ref = build_reference_from_episodes([(codes, labels)], 4, cfg)
    assert set(ref.classes) == {(4, 0), (4, 2)}
    merged = merge_references([ref, build_reference({(8, 0): codes}, cfg)])
    assert set(merged.classes) == {(4, 0), (4, 2), (8, 0)}


@pytest.fixture(scope="module")
def artifacts():
    rng = np.random.default_rng(6)
    cb = build_codebook({(4, 0): synthetic_batch(rng, 2000)})
    ref = build_reference({(4, 0): rng.integers(0, 2560, 4000)}, CFG)
    return ref, cb


def test_artifact_round_trip(tmp_path, artifacts):
    ref, cb = artifacts
    path = tmp_path / "a.lgl"
    save_artifacts(path, ref, cb)
    ref2, cb2 = load_artifacts(path, CFG)
    assert ref2.checksum == ref.checksum and cb2.checksum == cb.checksum
    assert np.array_equal(ref2.classes[(4, 0)], ref.classes[(4, 0)])
    assert artifacts_to_bytes(ref2, cb2) == path.read_bytes()


def test_artifact_byte_flip(tmp_path, artifacts):
    blob = bytearray(artifacts_to_bytes(*artifacts))
    blob[len(blob) // 2] ^= 0x10
    with pytest.raises(DigestMismatchError):
        artifacts_from_bytes(bytes(blob), CFG)


def test_artifact_config_mismatch(artifacts):
    blob = artifacts_to_bytes(*artifacts)
    with pytest.raises(ConfigMismatchError):
        artifacts_from_bytes(blob, EstimatorConfig(W=64, S=32))
    # beta_est is not part of the locked tuple
    artifacts_from_bytes(blob, EstimatorConfig(beta_est=0.3))
