import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import synthetic_batch
from leakguard.errors import (
    ArtifactCorruptionError, CalibrationError, DegenerateEdgesError, DigestMismatchError,
    InputError, MissingBaselineError,
)
from leakguard.features import (
    B_EDGES, NUM_CODEWORDS, BinEdges, Codebook, FeatureBatch, IntervalFeatures,
    NormalizedFeatures, QueueState, build_codebook, nearest_rank, normalize, quantize,
    quantize_batch, unpack_codeword,
)


def nf(dt=1.0, b=1.0, q=0, zeta=0.0):
    return NormalizedFeatures(dt, b, QueueState(q), zeta)


def test_alphabet_size():
    assert NUM_CODEWORDS == 16 * 5 * 4 * 8 == 2560


def test_interval_features_validation():
    with pytest.raises(InputError):
        IntervalFeatures(0.0, 1.0, 0, 0.0)
    with pytest.raises(InputError):
        IntervalFeatures(1.0, -0.1, 0, 0.0)
    with pytest.raises(InputError):
        IntervalFeatures(1.0, 1.0, 0, math.nan)
    with pytest.raises(InputError):
        IntervalFeatures(1.0, 1.0, 7, 0.0)
    assert IntervalFeatures(1.0, 1.0, "heavy", 0.0).q is QueueState.HEAVY


def test_nearest_rank_oracle():
    x = np.arange(1, 101, dtype=float)
    assert nearest_rank(x, 0.99) == 99.0
    assert nearest_rank(x, 0.999) == 100.0
    assert nearest_rank(x, 0.5) == 50.0
    assert nearest_rank(x, 0.0) == 1.0


def test_identical_dt_is_degenerate():
    n = 2000
    batch = FeatureBatch(np.full(n, 6.3), np.ones(n), np.zeros(n), np.linspace(0, 1, n))
    with pytest.raises(DegenerateEdgesError):
        build_codebook({4: batch})


def test_too_few_samples():
    rng = np.random.default_rng(0)
    with pytest.raises(CalibrationError):
        build_codebook({4: synthetic_batch(rng, 999)})


def test_non_finite_design_sample():
    rng = np.random.default_rng(0)
    b = synthetic_batch(rng, 2000)
    b.zeta[5] = np.inf
    with pytest.raises(InputError):
        build_codebook({4: b})


def test_million_design_samples():
    rng = np.random.default_rng(1)
    cb = build_codebook({4: synthetic_batch(rng, 1_000_000)})
    e = cb.edges[(4, 0)]
    assert len(e.dt) == 15 and len(e.zeta) == 7
    assert cb.baselines[4][0] > 0
    # quantile edges split the normalised design sample into equal-mass bins
    codes = quantize_batch(synthetic_batch(rng, 200_000), cb, 4, 0)
    i_dt = np.array([unpack_codeword(c)[0] for c in codes[:20000]])
    frac = np.bincount(i_dt, minlength=16) / len(i_dt)
    assert np.all(np.abs(frac - 1 / 16) < 0.01)


def test_two_job_sizes():
    rng = np.random.default_rng(2)
    cb = build_codebook({4: synthetic_batch(rng, 3000), 8: synthetic_batch(rng, 3000, dt_mean=8.0)})
    assert len(cb.baselines) == 2
    assert set(cb.edges) == {(4, 0), (8, 0)}
    assert cb.baselines[4] != cb.baselines[8]


def test_normalize_examples(small_codebook):
    cb = small_codebook
    mu_dt, mu_b = cb.baselines[4]
    out = normalize(IntervalFeatures(mu_dt, 0.5 * mu_b, 1, 0.3), cb, 4)
    assert out.dt == 1.0
    assert out.b == 0.5
    assert out.zeta == 0.3 and out.q == QueueState.LIGHT
    with pytest.raises(MissingBaselineError):
        normalize(IntervalFeatures(1.0, 1.0, 0, 0.0), cb, 16)


def test_b_bins(small_codebook):
    cb = small_codebook
    assert unpack_codeword(quantize(nf(b=1.0), cb, 4))[1] == 2
    assert unpack_codeword(quantize(nf(b=2.0), cb, 4))[1] == 4
    # half-open (lo, hi]: an edge value stays in the lower bin
    assert [unpack_codeword(quantize(nf(b=v), cb, 4))[1] for v in B_EDGES] == [0, 1, 2, 3]
    assert unpack_codeword(quantize(nf(b=0.0), cb, 4))[1] == 0


def test_lowest_bins_give_codeword_zero(small_codebook):
    assert quantize(nf(dt=-1e9, b=0.0, q=0, zeta=-1e9), small_codebook, 4, 0) == 0
    assert quantize(nf(dt=1e9, b=1e9, q=3, zeta=1e9), small_codebook, 4, 0) == NUM_CODEWORDS - 1


def test_quantize_rejects_non_finite(small_codebook):
    with pytest.raises(InputError):
        quantize(nf(dt=math.inf), small_codebook, 4)
    with pytest.raises(MissingBaselineError):
        quantize(nf(), small_codebook, 4, k=9)


def test_index_formula_oracle():
    for c in [0, 1, 7, 8, 159, 160, 2559, 1234]:
        i_dt, i_b, i_q, i_z = unpack_codeword(c)
        assert ((i_dt * 5 + i_b) * 4 + i_q) * 8 + i_z == c


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(dt=finite, b=st.floats(0, 1e6), q=st.integers(0, 3), z=finite, k=st.integers(0, 2))
def test_quantize_total_and_in_range(small_codebook, dt, b, q, z, k):
    c = quantize(nf(dt, b, q, z), small_codebook, 4, k)
    assert 0 <= c < NUM_CODEWORDS


@given(a=finite, d=st.floats(0, 1e3), b=st.floats(0, 10), z=finite)
def test_quantize_monotone_per_feature(small_codebook, a, d, b, z):
    cb = small_codebook
    lo = unpack_codeword(quantize(nf(a, b, 0, z), cb, 4))
    hi = unpack_codeword(quantize(nf(a + d, b, 0, z), cb, 4))
    assert hi[0] >= lo[0] and hi[1:] == lo[1:]
    lo = unpack_codeword(quantize(nf(1.0, b, 0, a), cb, 4))
    hi = unpack_codeword(quantize(nf(1.0, b, 0, a + d), cb, 4))
    assert hi[3] >= lo[3]
    lo = unpack_codeword(quantize(nf(1.0, b, 0, z), cb, 4))
    hi = unpack_codeword(quantize(nf(1.0, b + d, 0, z), cb, 4))
    assert hi[1] >= lo[1]


def test_batch_matches_scalar(small_codebook):
    rng = np.random.default_rng(5)
    batch = synthetic_batch(rng, 500)
    ks = rng.integers(0, 3, size=500)
    vec = quantize_batch(batch, small_codebook, 4, ks)
    for i in range(500):
        f = IntervalFeatures(batch.dt[i], batch.b[i], int(batch.q[i]), batch.zeta[i])
        assert vec[i] == quantize(normalize(f, small_codebook, 4), small_codebook, 4, int(ks[i]))


def test_build_is_deterministic():
    a = build_codebook({4: synthetic_batch(np.random.default_rng(3), 2000)})
    b = build_codebook({4: synthetic_batch(np.random.default_rng(3), 2000)})
    assert a.checksum == b.checksum


def test_checksum_sensitive_to_every_edge_and_baseline(small_codebook):
    cb = small_codebook
    seen = {cb.checksum}
    for key, e in cb.edges.items():
        for field in ("dt", "zeta"):
            vals = list(getattr(e, field))
            for i in range(len(vals)):
                bumped = vals.copy()
                bumped[i] = np.nextafter(bumped[i], np.inf)
                edges = dict(cb.edges)
                edges[key] = BinEdges(**{**{"dt": e.dt, "zeta": e.zeta}, field: tuple(bumped)})
                seen.add(Codebook(cb.baselines, edges).checksum)
    mu_dt, mu_b = cb.baselines[4]
    seen.add(Codebook({4: (mu_dt * 1.000001, mu_b)}, cb.edges).checksum)
    seen.add(Codebook({4: (mu_dt, mu_b * 1.000001)}, cb.edges).checksum)
    assert len(seen) == 1 + 3 * 22 + 2


def test_codebook_round_trip_and_tamper(small_codebook):
    blob = small_codebook.to_bytes()
    back = Codebook.from_bytes(blob)
    assert back.checksum == small_codebook.checksum
    assert back.edges == small_codebook.edges and back.baselines == small_codebook.baselines
    bad = bytearray(blob)
    bad[40] ^= 1
    with pytest.raises(DigestMismatchError):
        Codebook.from_bytes(bytes(bad))
    with pytest.raises(ArtifactCorruptionError):
        Codebook.from_bytes(b"short")


def test_invalid_codebook_construction():
    e = BinEdges(tuple(range(15)), tuple(range(7)))
    with pytest.raises(CalibrationError):
        Codebook({4: (0.0, 1.0)}, {(4, 0): e})
    with pytest.raises(CalibrationError):
        Codebook({4: (1.0, 1.0)}, {(8, 0): e})
    with pytest.raises(CalibrationError):
        BinEdges(tuple(range(14)), tuple(range(7)))
