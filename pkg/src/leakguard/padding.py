"""Cover-traffic padding and duration-balanced segmentation.

Padding is simulated at the cadence level: dummy layers carry native gate
identities and durations so that they shape the dispatch stream, but they
are never applied as unitaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError

ONE_QUBIT_GATES = ("h", "s", "sx")
TWO_QUBIT_GATE = "cz"


@dataclass(frozen=True)
class GateSet:
    """Native gates and their durations (microseconds)."""

    one_qubit: tuple = ONE_QUBIT_GATES
    two_qubit: str = TWO_QUBIT_GATE
    d1: float = 0.02
    d2: float = 0.10
    p2q: float = 0.35  # chance of placing an entangler on a free coupled pair
    p1q: float = 0.7   # chance of a 1q gate on a remaining free qubit


@dataclass(frozen=True)
class Op:
    gate: str
    qubits: tuple
    duration: float
    dummy: bool = False


@dataclass(frozen=True)
class Layer:
    ops: tuple

    def __post_init__(self):
        seen = set()
        for op in self.ops:
            if op.duration <= 0:
                raise InputError(f"non-positive duration in {op}")
            if seen.intersection(op.qubits):
                raise InputError("two ops in one layer share a qubit")
            seen.update(op.qubits)

    @property
    def duration(self) -> float:
        return max((op.duration for op in self.ops), default=0.0)

    @property
    def n_ops(self) -> int:
        return len(self.ops)

    @property
    def n_2q(self) -> int:
        return sum(1 for op in self.ops if len(op.qubits) == 2)

    @property
    def is_dummy(self) -> bool:
        return bool(self.ops) and all(op.dummy for op in self.ops)


@dataclass(frozen=True)
class Circuit:
    n: int
    layers: tuple = ()

    def __post_init__(self):
        if self.n < 1:
            raise InputError("circuit needs at least one qubit")
        for layer in self.layers:
            for op in layer.ops:
                if any(q < 0 or q >= self.n for q in op.qubits):
                    raise InputError(f"{op} addresses a qubit outside 0..{self.n - 1}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def duration(self) -> float:
        return sum(layer.duration for layer in self.layers)


PaddedCircuit = Circuit


def design_order(n: int) -> int:
    if n < 1:
        raise InputError("n must be >= 1")
    return max(1, math.ceil(math.log2(n)))


@dataclass(frozen=True)
class PaddingSpec:
    t: int
    eps_des: float = 0.02
    c_pad: int = 2

    def __post_init__(self):
        if self.t < 1 or not 0 < self.eps_des < 1 or self.c_pad < 0:
            raise InputError(f"invalid padding spec {self}")

    @classmethod
    def for_n(cls, n: int, eps_des: float = 0.02, c_pad: int = 2) -> "PaddingSpec":
        return cls(t=design_order(n), eps_des=eps_des, c_pad=c_pad)

    def depth_budget(self, n: int) -> int:
        return self.c_pad * n * self.t


def line_coupling(n: int) -> tuple:
    return tuple((i, i + 1) for i in range(n - 1))


def random_layer(
    n: int, rng: np.random.Generator, gates: GateSet = GateSet(), dummy: bool = False,
    coupling: Optional[Sequence] = None,
) -> Layer:
    """One layer of native gates on a coupling graph (never empty)."""
    coupling = line_coupling(n) if coupling is None else coupling
    busy = set()
    ops = []
    for a, b in coupling:
        if a not in busy and b not in busy and rng.random() < gates.p2q:
            ops.append(Op(gates.two_qubit, (a, b), gates.d2, dummy))
            busy.update((a, b))
    for q in range(n):
        if q not in busy and rng.random() < gates.p1q:
            g = gates.one_qubit[int(rng.integers(len(gates.one_qubit)))]
            ops.append(Op(g, (q,), gates.d1, dummy))
            busy.add(q)
    if not ops:
        q = int(rng.integers(n))
        ops.append(Op(gates.one_qubit[0], (q,), gates.d1, dummy))
    return Layer(tuple(ops))


def random_circuit(n: int, depth: int, rng: np.random.Generator, gates: GateSet = GateSet()) -> Circuit:
    return Circuit(n, tuple(random_layer(n, rng, gates) for _ in range(depth)))


def insert_tdesign(
    c: Circuit,
    spec: PaddingSpec,
    rng_seed,
    gates: GateSet = GateSet(),
    n_dummy: Optional[int] = None,
) -> PaddedCircuit:
    """Interleave dummy layers (at most the depth budget) between real layers.

    Dummy layers come from the same native layer generator used for
    design-only calibration, so padded cadence matches the reference.
    """
    if c.n < 1:
        raise InputError("n must be >= 1")
    if spec.t != design_order(c.n):
        raise InputError(f"padding order t={spec.t} does not match ceil(log2 {c.n})")
    budget = spec.depth_budget(c.n)
    n_dummy = budget if n_dummy is None else min(int(n_dummy), budget)
    rng = np.random.default_rng(rng_seed)
    dummies = [random_layer(c.n, rng, gates, dummy=True) for _ in range(n_dummy)]
    # slot j in 0..depth receives the dummies placed before real layer j
    real = list(c.layers)
    slots = np.sort(rng.integers(0, len(real) + 1, size=n_dummy)) if n_dummy else []
    out = []
    it = iter(dummies)
    si = 0
    for j in range(len(real) + 1):
        while si < len(slots) and slots[si] == j:
            out.append(next(it))
            si += 1
        if j < len(real):
            out.append(real[j])
    return Circuit(c.n, tuple(out))


def strip_padding(c: Circuit) -> Circuit:
    """Drop dummy ops (and layers left empty), recovering the real circuit."""
    layers = []
    for layer in c.layers:
        ops = tuple(op for op in layer.ops if not op.dummy)
        if ops:
            layers.append(Layer(ops))
    return Circuit(c.n, tuple(layers))


SEGMENT_CLASSES = ("short", "medium", "long")


@dataclass(frozen=True)
class Segment:
    index: int
    start: int
    layers: tuple
    cls: int
    duration: float = field(default=0.0)

    @property
    def class_name(self) -> str:
        return SEGMENT_CLASSES[self.cls]


def _greedy_cuts(durations: np.ndarray, cap: float) -> list:
    cuts = []
    acc = 0.0
    for i, d in enumerate(durations):
        if acc > 0 and acc + d > cap:
            cuts.append(i)
            acc = 0.0
        acc += d
    return cuts


def _minimax_bounds(durations: np.ndarray, k: int) -> list:
    """Contiguous split into at most k parts minimising the largest part."""
    lo, hi = float(durations.max()), float(durations.sum())
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if len(_greedy_cuts(durations, mid)) + 1 <= k:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return _greedy_cuts(durations, hi)


def segment(pc: PaddedCircuit, k_target: int) -> list:
    """Duration-balanced contiguous split into ``min(k_target, depth)`` segments."""
    if k_target < 1:
        raise InputError("k_target must be >= 1")
    L = pc.depth
    if L == 0:
        return []
    K = min(k_target, L)
    durations = np.array([layer.duration for layer in pc.layers])
    cuts = _minimax_bounds(durations, K)
    bounds = [0] + cuts + [L]
    # greedy may use fewer parts; split the longest-by-count parts (never raises the max)
    while len(bounds) - 1 < K:
        spans = [(bounds[i + 1] - bounds[i], i) for i in range(len(bounds) - 1)]
        width, i = max(spans)
        bounds.insert(i + 1, bounds[i] + width // 2)
    parts = []
    for i in range(K):
        a, b = bounds[i], bounds[i + 1]
        parts.append((a, pc.layers[a:b], float(durations[a:b].sum())))
    # class = duration tercile by rank within the job
    order = sorted(range(K), key=lambda i: (parts[i][2], i))
    rank = {idx: r for r, idx in enumerate(order)}
    return [
        Segment(index=i, start=a, layers=layers, cls=min(2, 3 * rank[i] // K), duration=d)
        for i, (a, layers, d) in enumerate(parts)
    ]


# ---------------------------------------------------------------------------
# line-oriented text format: header "n=<qubits>", then one layer per line,
# ops separated by spaces as gate@q0,q1:duration,flag (flag 1 = dummy)


def dumps_circuit(c: Circuit) -> str:
    lines = [f"n={c.n}"]
    for layer in c.layers:
        lines.append(" ".join(
            f"{op.gate}@{','.join(map(str, op.qubits))}:{op.duration!r},{int(op.dummy)}"
            for op in layer.ops
        ))
    return "\n".join(lines) + "\n"


def loads_circuit(text: str) -> Circuit:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("n="):
        raise InputError("circuit text must start with 'n=<qubits>'")
    n = int(lines[0][2:])
    layers = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        ops = []
        for tok in line.split():
            try:
                gate, rest = tok.split("@", 1)
                qs, rest = rest.split(":", 1)
                dur, flag = rest.split(",")
                ops.append(Op(gate, tuple(int(q) for q in qs.split(",")), float(dur), flag == "1"))
            except ValueError:
                raise InputError(f"line {lineno}: cannot parse op {tok!r}") from None
        layers.append(Layer(tuple(ops)))
    return Circuit(n, tuple(layers))
