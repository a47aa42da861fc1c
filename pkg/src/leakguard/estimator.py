"""Sliding-window codeword histograms and the clamped leakage estimate.

Online, the last ``W`` codewords are histogrammed every ``S`` pushes with
Jeffreys add-alpha smoothing and folded into an exponential moving average
whose half-life is ``H`` windows.  The estimate is the KL divergence (nats)
of that average from a locked design-only reference, plus a crosstalk
penalty ``beta_est * ||Lambda_C||_F``, clamped at the kill threshold.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    ArtifactCorruptionError,
    CalibrationError,
    ConfigMismatchError,
    ConfigurationError,
    DigestMismatchError,
    InputError,
)
from .features import NUM_CODEWORDS, Codebook


@dataclass(frozen=True)
class EstimatorConfig:
    W: int = 128
    S: int = 64
    H: float = 10.0
    alpha: float = 0.5
    lam: float = 1e-3
    beta_est: float = 0.1
    B: int = NUM_CODEWORDS

    def __post_init__(self):
        if not (self.W > 0 and 0 < self.S <= self.W and self.H > 0):
            raise ConfigurationError(f"bad window parameters W={self.W} S={self.S} H={self.H}")
        if not (self.alpha > 0 and 0 < self.lam < 1 and self.beta_est >= 0 and self.B >= 2):
            raise ConfigurationError("bad smoothing parameters")

    @property
    def decay(self) -> float:
        return 2.0 ** (-1.0 / self.H)

    def locked_tuple(self) -> tuple:
        """The parameters that must match between artifacts and runtime."""
        return (self.W, self.S, float(self.H), float(self.alpha), float(self.lam), self.B)


def smoothed_histogram(counts: np.ndarray, W: int, alpha: float) -> np.ndarray:
    return (counts + alpha) / (W + alpha * len(counts))


class WindowState:
    """Per-episode window buffer and EMA histogram (single writer)."""

    def __init__(self, cfg: EstimatorConfig):
        self.cfg = cfg
        self.buffer: deque = deque(maxlen=cfg.W)
        self.counts = np.zeros(cfg.B, dtype=np.int64)
        self.pushes = 0
        self.windows_emitted = 0
        self.ema_hist = np.zeros(cfg.B)
        self._gamma = cfg.decay

    def push(self, c: int) -> Optional[np.ndarray]:
        """Add one codeword; return the new window histogram when one is emitted."""
        cfg = self.cfg
        if not 0 <= c < cfg.B:
            raise InputError(f"codeword {c} outside [0, {cfg.B - 1}]")
        if len(self.buffer) == cfg.W:
            self.counts[self.buffer[0]] -= 1
        self.buffer.append(c)
        self.counts[c] += 1
        self.pushes += 1
        if self.pushes < cfg.W or (self.pushes - cfg.W) % cfg.S:
            return None
        h = smoothed_histogram(self.counts, cfg.W, cfg.alpha)
        ema = self._gamma * self.ema_hist + (1.0 - self._gamma) * h
        self.ema_hist = ema / ema.sum()
        self.windows_emitted += 1
        return h

    def prime(self, prior) -> None:
        """Start the EMA from ``prior`` instead of the first window."""
        p = np.asarray(prior, dtype=float)
        if p.shape != (self.cfg.B,):
            raise InputError(f"prior has shape {p.shape}, expected ({self.cfg.B},)")
        self.ema_hist = p / p.sum()

    @property
    def ready(self) -> bool:
        return self.windows_emitted > 0


def push_interval(st: WindowState, c: int) -> Optional[np.ndarray]:
    return st.push(c)


def kl_divergence(p_hat, p_des) -> float:
    """KL(p_hat || p_des) in nats, with 0 * ln(0/x) = 0."""
    p = np.asarray(p_hat, dtype=float)
    q = np.asarray(p_des, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise InputError(f"histogram shape mismatch {p.shape} vs {q.shape}")
    if np.any(q <= 0):
        raise ArtifactCorruptionError("reference distribution has a non-positive entry")
    nz = p > 0
    return max(0.0, float(np.sum(p[nz] * np.log(p[nz] / q[nz]))))


@dataclass(frozen=True)
class LeakageEstimate:
    value: float
    raw: float
    clamped: bool
    kl: float = 0.0
    penalty: float = 0.0


def crosstalk_penalty(lambda_c, beta_est: float) -> float:
    if lambda_c is None:
        return 0.0
    return beta_est * float(np.linalg.norm(np.asarray(lambda_c, dtype=float)))


def estimate(
    st: WindowState,
    ref: "ReferenceModel",
    n: int,
    k: int,
    lambda_c,
    cfg: EstimatorConfig,
    delta_kill: float = math.inf,
) -> LeakageEstimate:
    if not st.ready:
        raise ConfigurationError("no window emitted yet; estimate undefined during warm-up")
    p_des = ref.reference_for(n, k)
    kl = kl_divergence(st.ema_hist, p_des)
    pen = crosstalk_penalty(lambda_c, cfg.beta_est)
    raw = kl + pen
    return LeakageEstimate(
        value=min(raw, delta_kill), raw=raw, clamped=raw > delta_kill, kl=kl, penalty=pen
    )


# ---------------------------------------------------------------------------
# Locked reference model


@dataclass(frozen=True)
class ReferenceModel:
    classes: Mapping[tuple, np.ndarray]
    config: tuple  # EstimatorConfig.locked_tuple()
    checksum: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        W, S, H, alpha, lam, B = self.config
        floor = lam / B
        for key, p in self.classes.items():
            if p.shape != (B,):
                raise CalibrationError(f"reference {key} has shape {p.shape}, expected ({B},)")
            if abs(p.sum() - 1.0) > 1e-9:
                raise CalibrationError(f"reference {key} does not sum to 1")
            if p.min() < floor * (1 - 1e-9):
                raise CalibrationError(f"reference {key} has an entry below lambda/B")
            p.setflags(write=False)
        object.__setattr__(self, "checksum", hashlib.sha256(self.to_bytes()).digest())

    def reference_for(self, n: int, k: int) -> np.ndarray:
        try:
            return self.classes[(n, k)]
        except KeyError:
            raise ConfigurationError(f"reference model has no class {(n, k)}") from None

    def to_bytes(self) -> bytes:
        out = [struct.pack("<I", len(self.classes))]
        for key in sorted(self.classes):
            out.append(struct.pack("<II", *key))
            out.append(np.asarray(self.classes[key], dtype="<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes, config: tuple) -> "ReferenceModel":
        B = config[-1]
        try:
            (count,) = struct.unpack_from("<I", blob, 0)
            off = 4
            classes = {}
            for _ in range(count):
                n, k = struct.unpack_from("<II", blob, off)
                off += 8
                vec = np.frombuffer(blob, dtype="<f8", count=B, offset=off).astype(float)
                off += 8 * B
                classes[(n, k)] = vec
        except (struct.error, ValueError) as exc:
            raise ArtifactCorruptionError(f"malformed reference section: {exc}") from exc
        if off != len(blob):
            raise ArtifactCorruptionError("trailing bytes in reference section")
        try:
            return cls(classes=classes, config=config)
        except CalibrationError as exc:
            raise ArtifactCorruptionError(str(exc)) from exc


def _window_histograms(stream: np.ndarray, cfg: EstimatorConfig):
    for start in range(0, len(stream) - cfg.W + 1, cfg.S):
        counts = np.bincount(stream[start:start + cfg.W], minlength=cfg.B)
        yield smoothed_histogram(counts, cfg.W, cfg.alpha)


def _finish_reference(acc: np.ndarray, nwin: int, cfg: EstimatorConfig) -> np.ndarray:
    p = acc / nwin
    p = (1.0 - cfg.lam) * p + cfg.lam / cfg.B
    return p / p.sum()


def _check_stream(s, cfg) -> np.ndarray:
    s = np.asarray(s, dtype=np.int64)
    if s.size and (s.min() < 0 or s.max() >= cfg.B):
        raise InputError("design codeword out of range")
    return s


def build_reference(design_streams: Mapping, cfg: EstimatorConfig) -> ReferenceModel:
    """Average Jeffreys-smoothed window histograms per class, then mix in lambda.

    Each value is one codeword sequence or a list of sequences; windows never
    straddle two sequences.
    """
    classes = {}
    for key, streams in design_streams.items():
        if isinstance(streams, np.ndarray) and streams.ndim == 1 or (
            isinstance(streams, Sequence) and streams and np.isscalar(streams[0])
        ):
            streams = [streams]
        acc = np.zeros(cfg.B)
        nwin = 0
        for s in streams:
            for h in _window_histograms(_check_stream(s, cfg), cfg):
                acc += h
                nwin += 1
        if nwin == 0:
            raise CalibrationError(f"class {key} has fewer than W={cfg.W} design codewords")
        classes[tuple(key)] = _finish_reference(acc, nwin, cfg)
    if not classes:
        raise CalibrationError("no design streams")
    return ReferenceModel(classes=classes, config=cfg.locked_tuple())


def build_reference_from_episodes(
    episodes: Sequence, n: int, cfg: EstimatorConfig
) -> ReferenceModel:
    """Build references by replaying whole episodes through the online windowing.

    ``episodes`` holds ``(codewords, class_labels)`` pairs.  Every emitted
    window is credited to the segment class active at the emission step,
    which is exactly the lookup rule used online.
    """
    acc: dict = {}
    nwin: dict = {}
    for codes, labels in episodes:
        codes = _check_stream(codes, cfg)
        labels = np.asarray(labels)
        for start in range(0, len(codes) - cfg.W + 1, cfg.S):
            end = start + cfg.W
            counts = np.bincount(codes[start:end], minlength=cfg.B)
            key = (n, int(labels[end - 1]))
            if key not in acc:
                acc[key] = np.zeros(cfg.B)
                nwin[key] = 0
            acc[key] += smoothed_histogram(counts, cfg.W, cfg.alpha)
            nwin[key] += 1
    if not acc:
        raise CalibrationError("design episodes shorter than one window")
    classes = {key: _finish_reference(acc[key], nwin[key], cfg) for key in acc}
    return ReferenceModel(classes=classes, config=cfg.locked_tuple())


def merge_references(refs: Sequence[ReferenceModel]) -> ReferenceModel:
    classes = {}
    config = refs[0].config
    for r in refs:
        if r.config != config:
            raise ConfigMismatchError("cannot merge references built under different configs")
        classes.update({k: np.array(v) for k, v in r.classes.items()})
    return ReferenceModel(classes=classes, config=config)


# ---------------------------------------------------------------------------
# Artifact file
#
#   magic(8) version(u16) W(u32) S(u32) H(f64) alpha(f64) lam(f64) B(u32)
#   then two sections [codebook, reference], each: length(u64) body digest(32)
#   then sha256 over everything before it.

ARTIFACT_MAGIC = b"LGLOCKED"
ARTIFACT_VERSION = 1
_HEADER = struct.Struct("<8sHIIdddI")


def artifacts_to_bytes(ref: ReferenceModel, cb: Codebook) -> bytes:
    W, S, H, alpha, lam, B = ref.config
    out = [_HEADER.pack(ARTIFACT_MAGIC, ARTIFACT_VERSION, W, S, H, alpha, lam, B)]
    for body in (cb.to_bytes(), ref.to_bytes()):
        out.append(struct.pack("<Q", len(body)))
        out.append(body)
        out.append(hashlib.sha256(body).digest())
    blob = b"".join(out)
    return blob + hashlib.sha256(blob).digest()


def save_artifacts(path, ref: ReferenceModel, cb: Codebook) -> bytes:
    """Write the locked artifact file; returns its file digest."""
    blob = artifacts_to_bytes(ref, cb)
    Path(path).write_bytes(blob)
    return blob[-32:]


def artifacts_from_bytes(blob: bytes, expected: Optional[EstimatorConfig] = None):
    if len(blob) < _HEADER.size + 32:
        raise ArtifactCorruptionError("artifact file truncated")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DigestMismatchError("artifact file digest mismatch")
    magic, version, W, S, H, alpha, lam, B = _HEADER.unpack_from(body, 0)
    if magic != ARTIFACT_MAGIC:
        raise ArtifactCorruptionError("bad artifact magic")
    if version != ARTIFACT_VERSION:
        raise ArtifactCorruptionError(f"unsupported artifact version {version}")
    config = (W, S, H, alpha, lam, B)
    if expected is not None and config != expected.locked_tuple():
        raise ConfigMismatchError(
            f"artifact built under (W,S,H,alpha,lambda,B)={config}, "
            f"runtime expects {expected.locked_tuple()}"
        )
    off = _HEADER.size
    sections = []
    for name in ("codebook", "reference"):
        try:
            (length,) = struct.unpack_from("<Q", body, off)
        except struct.error:
            raise ArtifactCorruptionError(f"missing {name} section") from None
        off += 8
        sec = body[off:off + length]
        off += length
        sec_digest = body[off:off + 32]
        off += 32
        if len(sec) != length or hashlib.sha256(sec).digest() != sec_digest:
            raise DigestMismatchError(f"{name} section digest mismatch")
        sections.append(sec)
    if off != len(body):
        raise ArtifactCorruptionError("trailing bytes in artifact file")
    cb = Codebook.from_bytes(sections[0])
    ref = ReferenceModel.from_bytes(sections[1], config)
    return ref, cb


def load_artifacts(path, expected: Optional[EstimatorConfig] = None):
    """Load and verify ``(ReferenceModel, Codebook)``; any mismatch is fatal."""
    return artifacts_from_bytes(Path(path).read_bytes(), expected)
