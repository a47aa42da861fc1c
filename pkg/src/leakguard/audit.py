"""Append-only hash-chained audit log.

Records use a fixed little-endian layout hashed with SHA-256.  The file
format is a header (length-prefixed canonical JSON) followed by
length-prefixed records, each ``body || hash``.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import LifecycleError

ZERO_HASH = bytes(32)
LOG_MAGIC = b"LGAUDIT1"

# seq, kind, interval, segment, backend, theta, delta_hat, decision, reason, flags, aux, prev_hash
_BODY = struct.Struct("<QBqi16sddBBB32s32s")
BODY_SIZE = _BODY.size


class RecordKind(enum.IntEnum):
    INTERVAL = 0
    TERMINAL = 1


class Outcome(enum.IntEnum):
    COMPLETED = 0
    ABORTED = 1


# flag bits on interval records
FLAG_PF_FALLBACK = 1  # particle set degenerated since the previous record
FLAG_SWITCH = 2       # backend switched since the previous record


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    kind: int
    interval: int
    segment: int
    backend: str
    theta: float
    delta_hat: float
    decision: int
    reason: int
    flags: int
    aux: bytes
    prev_hash: bytes
    hash: bytes
    # bytes as read from disk; hashing uses them verbatim when present
    raw: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)

    def encode_body(self) -> bytes:
        if self.raw is not None:
            return self.raw
        return _BODY.pack(
            self.seq, self.kind, self.interval, self.segment,
            self.backend.encode("latin-1")[:16], self.theta, self.delta_hat,
            self.decision, self.reason, self.flags, self.aux, self.prev_hash,
        )

    def computed_hash(self) -> bytes:
        return hashlib.sha256(self.encode_body()).digest()

    @classmethod
    def from_body(cls, body: bytes, stored_hash: bytes) -> "AuditRecord":
        f = _BODY.unpack(body)
        rec = cls(f[0], f[1], f[2], f[3], f[4].rstrip(b"\0").decode("latin-1"), *f[5:], stored_hash)
        object.__setattr__(rec, "raw", bytes(body))
        return rec


def _make(seq, kind, interval, segment, backend, theta, delta_hat, decision, reason, flags,
          aux, prev_hash) -> AuditRecord:
    body = _BODY.pack(seq, kind, interval, segment, backend.encode("latin-1")[:16], theta,
                      delta_hat, decision, reason, flags, aux, prev_hash)
    return AuditRecord(seq, kind, interval, segment, backend, theta, delta_hat, decision,
                       reason, flags, aux, prev_hash, hashlib.sha256(body).digest())


def canonical_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode()


class AuditLog:
    def __init__(self, header: Optional[dict] = None):
        self.header = dict(header or {})
        self.records: list = []
        self.finalized = False

    @property
    def head(self) -> bytes:
        return self.records[-1].hash if self.records else ZERO_HASH

    def append(self, interval: int, backend: str, theta: float, delta_hat: float,
               decision: int, segment: int = -1, flags: int = 0) -> AuditRecord:
        if self.finalized:
            raise LifecycleError("audit log already finalised")
        rec = _make(len(self.records), RecordKind.INTERVAL, interval, segment, backend,
                    theta, delta_hat, int(decision), 0, flags, ZERO_HASH, self.head)
        self.records.append(rec)
        return rec

    def finalize(self, outcome: Outcome = Outcome.COMPLETED, reason: int = 0,
                 delta_hat: float = 0.0) -> bytes:
        """Append the terminal record and return its hash (the attestation digest).

        The terminal record also binds the header digest and the record count.
        """
        if self.finalized:
            raise LifecycleError("audit log already finalised")
        last = self.records[-1] if self.records else None
        rec = _make(len(self.records), RecordKind.TERMINAL,
                    last.interval if last else -1, last.segment if last else -1,
                    last.backend if last else "", last.theta if last else 0.0,
                    delta_hat, int(outcome), int(reason), 0,
                    hashlib.sha256(canonical_header(self.header)).digest(), self.head)
        self.records.append(rec)
        self.finalized = True
        return rec.hash

    @property
    def attestation(self) -> Optional[bytes]:
        return self.records[-1].hash if self.finalized else None

    # -- persistence --------------------------------------------------------

    def to_bytes(self) -> bytes:
        hdr = canonical_header(self.header)
        out = [LOG_MAGIC, struct.pack("<I", len(hdr)), hdr]
        for rec in self.records:
            out.append(encode_record(rec))
        return b"".join(out)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "AuditLog":
        if blob[:8] != LOG_MAGIC:
            raise AuditFormatError("bad audit log magic", 0)
        try:
            (hlen,) = struct.unpack_from("<I", blob, 8)
            header = json.loads(blob[12:12 + hlen])
        except (struct.error, ValueError) as exc:
            raise AuditFormatError(f"bad audit header: {exc}", 0) from exc
        log = cls(header)
        off = 12 + hlen
        while off < len(blob):
            rec, off = decode_record(blob, off, len(log.records))
            log.records.append(rec)
        log.finalized = bool(log.records) and log.records[-1].kind == RecordKind.TERMINAL
        return log

    @classmethod
    def load(cls, path) -> "AuditLog":
        return cls.from_bytes(Path(path).read_bytes())


class AuditFormatError(ValueError):
    def __init__(self, msg, index):
        super().__init__(msg)
        self.index = index


def encode_record(rec: AuditRecord) -> bytes:
    body = rec.encode_body()
    return struct.pack("<I", len(body)) + body + rec.hash


def decode_record(blob: bytes, off: int, index: int):
    try:
        (length,) = struct.unpack_from("<I", blob, off)
    except struct.error:
        raise AuditFormatError("truncated length prefix", index) from None
    if length != BODY_SIZE or off + 4 + length + 32 > len(blob):
        raise AuditFormatError(f"bad record length {length}", index)
    body = blob[off + 4:off + 4 + length]
    stored = blob[off + 4 + length:off + 4 + length + 32]
    return AuditRecord.from_body(body, stored), off + 4 + length + 32


def verify(log, start: int = 0):
    """Recompute the chain; returns ``(ok, first_bad_index)``.

    With ``start > 0`` the record before ``start`` is trusted as a checkpoint
    and only the suffix is checked.  Truncation of trailing records is not
    detectable here; compare the terminal hash with the attestation instead.
    """
    records = log.records if isinstance(log, AuditLog) else log
    if start > 0:
        anchor = records[start - 1]
        prev, expect_seq = anchor.hash, anchor.seq + 1
    else:
        prev, expect_seq = ZERO_HASH, 0
    for i in range(start, len(records)):
        rec = records[i]
        if rec.seq != expect_seq or rec.prev_hash != prev or rec.computed_hash() != rec.hash:
            return False, i
        if rec.kind == RecordKind.TERMINAL and i != len(records) - 1:
            return False, i + 1
        prev, expect_seq = rec.hash, expect_seq + 1
    return True, None


def verify_bytes(blob: bytes):
    try:
        log = AuditLog.from_bytes(blob)
    except AuditFormatError as exc:
        return False, exc.index
    ok, bad = verify(log)
    if ok and log.finalized:
        term = log.records[-1]
        if term.aux != hashlib.sha256(canonical_header(log.header)).digest():
            return False, len(log.records) - 1
    return ok, bad


def verify_file(path):
    return verify_bytes(Path(path).read_bytes())


def mutate_record(rec: AuditRecord, **changes) -> AuditRecord:
    """Copy of ``rec`` with fields replaced but the stored hash kept (tamper helper)."""
    return dataclasses.replace(rec, **changes)
