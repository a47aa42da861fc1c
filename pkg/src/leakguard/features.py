"""Per-interval cadence features and the fixed codeword alphabet.

Each dispatch interval is summarised by four observables (gap, batch ratio,
queue state, telemetry).  Gap and batch ratio are normalised by design-only
baselines for the job size, then every feature is binned and the bin tuple is
flattened to a single codeword index in ``[0, NUM_CODEWORDS)``.

Bins are half-open ``(lo, hi]``: values at or below the first edge land in
bin 0, values above the last edge land in the top bin.
"""

from __future__ import annotations

import enum
import hashlib
import math
import struct
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import (
    ArtifactCorruptionError,
    CalibrationError,
    DegenerateEdgesError,
    DigestMismatchError,
    InputError,
    MissingBaselineError,
)

N_DT_BINS = 16
N_B_BINS = 5
N_Q_BINS = 4
N_ZETA_BINS = 8
NUM_CODEWORDS = N_DT_BINS * N_B_BINS * N_Q_BINS * N_ZETA_BINS  # 2560

B_EDGES = (0.5, 0.9, 1.1, 1.5)
MIN_DESIGN_SAMPLES = 1000

CODEBOOK_MAGIC = b"LGCB"
CODEBOOK_VERSION = 1


class QueueState(enum.IntEnum):
    IDLE = 0
    LIGHT = 1
    MODERATE = 2
    HEAVY = 3

    @classmethod
    def coerce(cls, q) -> "QueueState":
        if isinstance(q, str):
            try:
                return cls[q.upper()]
            except KeyError:
                raise InputError(f"unknown queue state {q!r}") from None
        try:
            return cls(int(q))
        except ValueError:
            raise InputError(f"unknown queue state {q!r}") from None


@dataclass(frozen=True)
class IntervalFeatures:
    dt: float
    b: float
    q: QueueState
    zeta: float

    def __post_init__(self):
        if not (math.isfinite(self.dt) and math.isfinite(self.b) and math.isfinite(self.zeta)):
            raise InputError(f"non-finite feature in {self!r}")
        if self.dt <= 0:
            raise InputError(f"dt must be > 0, got {self.dt}")
        if self.b < 0:
            raise InputError(f"b must be >= 0, got {self.b}")
        if not isinstance(self.q, QueueState):
            object.__setattr__(self, "q", QueueState.coerce(self.q))


@dataclass(frozen=True)
class NormalizedFeatures:
    dt: float
    b: float
    q: QueueState
    zeta: float


@dataclass
class FeatureBatch:
    """Column-oriented feature samples, used for bulk calibration."""

    dt: np.ndarray
    b: np.ndarray
    q: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        self.dt = np.asarray(self.dt, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.q = np.asarray(self.q, dtype=np.int64)
        self.zeta = np.asarray(self.zeta, dtype=float)
        if not (len(self.dt) == len(self.b) == len(self.q) == len(self.zeta)):
            raise InputError("feature columns differ in length")

    def __len__(self):
        return len(self.dt)

    @classmethod
    def from_features(cls, feats: Sequence[IntervalFeatures]) -> "FeatureBatch":
        return cls(
            dt=[f.dt for f in feats],
            b=[f.b for f in feats],
            q=[int(f.q) for f in feats],
            zeta=[f.zeta for f in feats],
        )

    @classmethod
    def concat(cls, batches: Sequence["FeatureBatch"]) -> "FeatureBatch":
        return cls(
            dt=np.concatenate([x.dt for x in batches]),
            b=np.concatenate([x.b for x in batches]),
            q=np.concatenate([x.q for x in batches]),
            zeta=np.concatenate([x.zeta for x in batches]),
        )

    def validate(self):
        for name in ("dt", "b", "zeta"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InputError(f"non-finite values in feature column {name!r}")
        if np.any(self.dt <= 0):
            raise InputError("dt must be > 0")
        if np.any(self.b < 0):
            raise InputError("b must be >= 0")
        if np.any((self.q < 0) | (self.q >= N_Q_BINS)):
            raise InputError("queue state out of range")


def nearest_rank(sorted_values: np.ndarray, p: float) -> float:
    """Nearest-rank quantile of already sorted data: x_(ceil(p*n))."""
    n = len(sorted_values)
    if n == 0:
        raise CalibrationError("quantile of empty sample")
    # guard against 0.99*100 = 99.00000000000001 style rounding
    rank = math.ceil(p * n - 1e-9)
    rank = min(max(rank, 1), n)
    return float(sorted_values[rank - 1])


def _quantile_edges(values: np.ndarray, nbins: int, what: str) -> tuple:
    s = np.sort(values)
    edges = tuple(nearest_rank(s, j / nbins) for j in range(1, nbins))
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise DegenerateEdgesError(f"{what} quantile edges are not strictly increasing")
    return edges


@dataclass(frozen=True)
class BinEdges:
    dt: tuple
    zeta: tuple

    def __post_init__(self):
        if len(self.dt) != N_DT_BINS - 1 or len(self.zeta) != N_ZETA_BINS - 1:
            raise CalibrationError("wrong number of bin edges")
        for name, e in (("dt", self.dt), ("zeta", self.zeta)):
            if any(b <= a for a, b in zip(e, e[1:])):
                raise DegenerateEdgesError(f"{name} edges are not strictly increasing")


ClassKey = tuple  # (n, segment class)


@dataclass(frozen=True)
class Codebook:
    """Locked binning: per-n baselines plus quantile edges per (n, class)."""

    baselines: Mapping[int, tuple]
    edges: Mapping[ClassKey, BinEdges]
    b_edges: tuple = B_EDGES
    checksum: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for n, (mu_dt, mu_b) in self.baselines.items():
            if not (mu_dt > 0 and mu_b > 0):
                raise CalibrationError(f"baselines for n={n} must be strictly positive")
        for (n, _k) in self.edges:
            if n not in self.baselines:
                raise CalibrationError(f"edges for n={n} have no baseline")
        object.__setattr__(self, "checksum", hashlib.sha256(self._body()).digest())

    @property
    def num_codewords(self) -> int:
        return NUM_CODEWORDS

    def _body(self) -> bytes:
        out = [CODEBOOK_MAGIC, struct.pack("<H", CODEBOOK_VERSION)]
        out.append(struct.pack("<4d", *self.b_edges))
        out.append(struct.pack("<I", len(self.baselines)))
        for n in sorted(self.baselines):
            mu_dt, mu_b = self.baselines[n]
            out.append(struct.pack("<Idd", n, mu_dt, mu_b))
        out.append(struct.pack("<I", len(self.edges)))
        for key in sorted(self.edges):
            e = self.edges[key]
            out.append(struct.pack("<II", *key))
            out.append(struct.pack(f"<{N_DT_BINS - 1}d", *e.dt))
            out.append(struct.pack(f"<{N_ZETA_BINS - 1}d", *e.zeta))
        return b"".join(out)

    def to_bytes(self) -> bytes:
        body = self._body()
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Codebook":
        if len(blob) < 32:
            raise ArtifactCorruptionError("codebook blob too short")
        body, digest = blob[:-32], blob[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise DigestMismatchError("codebook digest mismatch")
        try:
            return cls._parse(body)
        except struct.error as exc:
            raise ArtifactCorruptionError(f"malformed codebook: {exc}") from exc

    @classmethod
    def _parse(cls, body: bytes) -> "Codebook":
        if body[:4] != CODEBOOK_MAGIC:
            raise ArtifactCorruptionError("bad codebook magic")
        (version,) = struct.unpack_from("<H", body, 4)
        if version != CODEBOOK_VERSION:
            raise ArtifactCorruptionError(f"unsupported codebook version {version}")
        off = 6
        b_edges = struct.unpack_from("<4d", body, off)
        off += 32
        (nb,) = struct.unpack_from("<I", body, off)
        off += 4
        baselines = {}
        for _ in range(nb):
            n, mu_dt, mu_b = struct.unpack_from("<Idd", body, off)
            off += 20
            baselines[n] = (mu_dt, mu_b)
        (ne,) = struct.unpack_from("<I", body, off)
        off += 4
        edges = {}
        for _ in range(ne):
            n, k = struct.unpack_from("<II", body, off)
            off += 8
            dt = struct.unpack_from(f"<{N_DT_BINS - 1}d", body, off)
            off += 8 * (N_DT_BINS - 1)
            zeta = struct.unpack_from(f"<{N_ZETA_BINS - 1}d", body, off)
            off += 8 * (N_ZETA_BINS - 1)
            edges[(n, k)] = BinEdges(dt=dt, zeta=zeta)
        if off != len(body):
            raise ArtifactCorruptionError("trailing bytes in codebook")
        return cls(baselines=baselines, edges=edges, b_edges=tuple(b_edges))


SampleSource = Union[FeatureBatch, Sequence[IntervalFeatures]]


def _as_batch(samples: SampleSource) -> FeatureBatch:
    if isinstance(samples, FeatureBatch):
        return samples
    return FeatureBatch.from_features(list(samples))


def build_codebook(
    design_samples: Mapping, min_samples: int = MIN_DESIGN_SAMPLES
) -> Codebook:
    """Calibrate bin edges and baselines from design-only samples.

    ``design_samples`` maps ``(n, k)`` (or a bare job size ``n``, taken as
    class 0) to samples.  Baselines are pooled over all classes of a job size;
    quantile edges are computed per ``(n, k)`` on normalised features.
    """
    keyed = {}
    for key, samples in design_samples.items():
        key = (int(key), 0) if isinstance(key, (int, np.integer)) else (int(key[0]), int(key[1]))
        batch = _as_batch(samples)
        batch.validate()
        if len(batch) < min_samples:
            raise CalibrationError(
                f"class {key} has {len(batch)} design samples, need >= {min_samples}"
            )
        keyed[key] = batch
    if not keyed:
        raise CalibrationError("no design samples")

    baselines = {}
    for n in sorted({k[0] for k in keyed}):
        pooled = FeatureBatch.concat([b for k, b in keyed.items() if k[0] == n])
        baselines[n] = (float(np.mean(pooled.dt)), float(np.mean(pooled.b)))
        if not baselines[n][1] > 0:
            raise CalibrationError(f"design batch ratio mean is zero for n={n}")

    edges = {}
    for key, batch in keyed.items():
        mu_dt, _ = baselines[key[0]]
        edges[key] = BinEdges(
            dt=_quantile_edges(batch.dt / mu_dt, N_DT_BINS, "dt"),
            zeta=_quantile_edges(batch.zeta, N_ZETA_BINS, "zeta"),
        )
    return Codebook(baselines=baselines, edges=edges)


def normalize(f: IntervalFeatures, cb: Codebook, n: int) -> NormalizedFeatures:
    try:
        mu_dt, mu_b = cb.baselines[n]
    except KeyError:
        raise MissingBaselineError(f"codebook has no baseline for n={n}") from None
    return NormalizedFeatures(f.dt / mu_dt, f.b / mu_b, f.q, f.zeta)


def quantize(nf: NormalizedFeatures, cb: Codebook, n: int, k: int = 0) -> int:
    if not (math.isfinite(nf.dt) and math.isfinite(nf.b) and math.isfinite(nf.zeta)):
        raise InputError("non-finite normalised feature")
    try:
        e = cb.edges[(n, k)]
    except KeyError:
        raise MissingBaselineError(f"codebook has no edges for class {(n, k)}") from None
    i_dt = bisect_left(e.dt, nf.dt)
    i_b = bisect_left(cb.b_edges, nf.b)
    i_z = bisect_left(e.zeta, nf.zeta)
    return ((i_dt * N_B_BINS + i_b) * N_Q_BINS + int(nf.q)) * N_ZETA_BINS + i_z


def quantize_batch(batch: FeatureBatch, cb: Codebook, n: int, k) -> np.ndarray:
    """Vectorised normalise + quantise.  ``k`` may be a scalar or per-sample array."""
    batch.validate()
    mu_dt, mu_b = cb.baselines[n]
    dt = batch.dt / mu_dt
    b = batch.b / mu_b
    ks = np.broadcast_to(np.asarray(k), dt.shape)
    out = np.empty(len(dt), dtype=np.int64)
    i_b = np.searchsorted(cb.b_edges, b, side="left")
    for cls in np.unique(ks):
        sel = ks == cls
        e = cb.edges[(n, int(cls))]
        i_dt = np.searchsorted(e.dt, dt[sel], side="left")
        i_z = np.searchsorted(e.zeta, batch.zeta[sel], side="left")
        out[sel] = ((i_dt * N_B_BINS + i_b[sel]) * N_Q_BINS + batch.q[sel]) * N_ZETA_BINS + i_z
    return out


def unpack_codeword(c: int) -> tuple:
    """Inverse of the index formula: (i_dt, i_b, i_q, i_zeta)."""
    c, i_z = divmod(int(c), N_ZETA_BINS)
    c, i_q = divmod(c, N_Q_BINS)
    i_dt, i_b = divmod(c, N_B_BINS)
    return i_dt, i_b, i_q, i_z
