"""Exact dense simulation of noisy layered circuits in the Pauli basis,
finite-shot sampling, and the first-order perturbation theory of local
inversion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .circuit import Circuit, Gate, Layer, invert_layer
from .superop import (
    ErrorModel,
    NotCPTPError,
    Op,
    apply_local,
    compose_ops,
    error_generator,
    ideal_ptm,
    layer_ops,
)

MAX_QUBITS = 10
_NEG_TOL = 1e-12


@dataclass(frozen=True)
class ProbDist:
    """Distribution over bitstrings; index k has qubit 0 as the leading bit."""

    n: int
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (2**self.n,):
            raise ValueError(f"expected {2**self.n} probabilities, got shape {p.shape}")
        if np.min(p) < -_NEG_TOL:
            raise NotCPTPError(f"probability {np.min(p):.3g} below zero: model is not CPTP")
        p = np.clip(p, 0.0, None)
        total = p.sum()
        if abs(total - 1.0) > 1e-9:
            raise NotCPTPError(f"probabilities sum to {total:.12g}")
        p = p / total
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "ProbDist":
        counts = np.asarray(counts, dtype=float)
        n = int(round(np.log2(counts.size)))
        return cls(n, counts / counts.sum())

    def bitstring(self, k: int) -> str:
        return format(k, f"0{self.n}b")

    def as_dict(self, cutoff: float = 0.0) -> dict[str, float]:
        return {self.bitstring(k): float(v) for k, v in enumerate(self.probs) if v > cutoff}


def zero_state(n: int) -> np.ndarray:
    """Pauli coefficients tr(P rho) of |0...0><0...0| as an n-axis tensor."""
    state = np.array(1.0)
    for _ in range(n):
        state = np.multiply.outer(state, np.array([1.0, 0.0, 0.0, 1.0]))
    return state


def readout(state: np.ndarray) -> np.ndarray:
    """Computational-basis probabilities of a Pauli-vector state (linear in state)."""
    n = state.ndim
    t = state
    for axis in range(n):
        t = np.take(t, [0, 3], axis=axis)
    h = 0.5 * np.array([[1.0, 1.0], [1.0, -1.0]])
    for axis in range(n):
        t = np.moveaxis(np.tensordot(h, t, axes=([1], [axis])), 0, axis)
    return t.reshape(-1)


class DegradationTracker:
    """Numbers occurrences of scheduled gates while walking a circuit."""

    def __init__(self, model: ErrorModel):
        self.model = model
        self.counts = [0] * len(model.degradation)
        self.by_source: dict[tuple[int, int, tuple[int, ...]], int] = {}

    def probabilities(self, layer: Layer, position: int) -> dict[Gate, float]:
        out: dict[Gate, float] = {}
        if not self.model.degradation or not layer.is_physical:
            return out
        tag = layer.tag
        source = tag.source if tag is not None else position
        inserted = tag is not None and tag.copy > 0
        for g in layer.gates:
            for k, sched in enumerate(self.model.degradation):
                if not sched.matches(g):
                    continue
                key = (k, source, g.qubits)
                if inserted and self.model.counting == "provenance" and key in self.by_source:
                    ordinal = self.by_source[key]
                else:
                    self.counts[k] += 1
                    ordinal = self.counts[k]
                    self.by_source.setdefault(key, ordinal)
                out[g] = sched.probability(ordinal)
        return out


def circuit_ops(circuit: Circuit, model: ErrorModel,
                overrides: Iterable[int] = ()) -> list[list[Op]]:
    """Per-layer local operations; ``overrides`` are source indices simulated ideally."""
    overrides = set(overrides)
    tracker = DegradationTracker(model)
    out = []
    for position, layer in enumerate(circuit.layers, start=1):
        source = layer.tag.source if layer.tag is not None else position
        ideal = source in overrides
        degrade = tracker.probabilities(layer, position)
        out.append(layer_ops(layer, model, ideal=ideal, degrade=degrade))
    return out


def simulate(circuit: Circuit, model: ErrorModel, overrides: Iterable[int] = (),
             max_qubits: int = MAX_QUBITS) -> ProbDist:
    """Output distribution of ``circuit`` on |0...0> with perfect readout."""
    n = circuit.n
    if n > max_qubits:
        raise ValueError(f"{n} qubits exceeds the simulation cap of {max_qubits}")
    state = zero_state(n)
    corner = (0,) * n
    for ops in circuit_ops(circuit, model, overrides):
        for local, qubits in ops:
            state = apply_local(state, local, qubits)
        if abs(state[corner] - 1.0) > 1e-9:
            raise NotCPTPError("layer map is not trace preserving")
    return ProbDist(n, readout(state))


def sample(dist: ProbDist, shots: int, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Multinomial counts by inverse-CDF lookup of uniform draws."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cdf = np.cumsum(dist.probs)
    u = rng.random(shots) * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    return np.bincount(idx, minlength=cdf.size)


@dataclass(frozen=True)
class PerturbationResult:
    delta: np.ndarray        # Delta_k, inversion perturbation per outcome
    delta_ideal: np.ndarray  # Delta~_k, first-order effect of layer i's errors
    generator: np.ndarray    # error generator of the target layer
    inverse_generator: np.ndarray
    lam: np.ndarray          # Lambda_i = E_i + U_i E_i^(-1) U_i^dagger
    repetitions: int = 1

    @property
    def eta(self) -> float:
        return 0.5 * float(np.abs(self.delta).sum())

    @property
    def eta_ideal(self) -> float:
        return 0.5 * float(np.abs(self.delta_ideal).sum())


def _state_vector(ops_per_layer: Sequence[Sequence[Op]], n: int, start: np.ndarray | None = None) -> np.ndarray:
    state = zero_state(n) if start is None else start
    for ops in ops_per_layer:
        for local, qubits in ops:
            state = apply_local(state, local, qubits)
    return state


def first_order(circuit: Circuit, model: ErrorModel, i: int, repetitions: int = 1) -> PerturbationResult:
    """First-order prediction of eta^(i) and eta^(i,ideal).

    The target layer's error map is E_i = N_i U_i^-1 (noisy core times inverse
    ideal core); the inverse layer's is built the same way from its physical
    realization. Both go through the principal log.
    """
    if not 1 <= i <= circuit.depth:
        raise ValueError(f"layer {i} outside 1..{circuit.depth}")
    n = circuit.n
    layers = circuit.layers
    target = layers[i - 1]

    tracker = DegradationTracker(model)
    degrade_at = []
    for position, layer in enumerate(layers, start=1):
        degrade_at.append(tracker.probabilities(layer, position))
    degrade = degrade_at[i - 1]

    ideal_ops = [layer_ops(layer, model, ideal=True) for layer in layers]
    core = target.core()
    u_core = compose_ops(layer_ops(core, model, ideal=True), n)
    n_core = compose_ops(layer_ops(core, model, degrade=degrade), n)
    gen = error_generator(n_core @ u_core.T).matrix

    inv = invert_layer(target)
    u_inv = np.eye(4**n)
    n_inv = np.eye(4**n)
    for layer in inv:
        u_inv = compose_ops(layer_ops(layer, model, ideal=True), n) @ u_inv
        n_inv = compose_ops(layer_ops(layer, model, degrade=degrade), n) @ n_inv
    gen_inv = error_generator(n_inv @ u_inv.T).matrix

    lam = repetitions * (gen + u_core @ gen_inv @ u_core.T)

    pre_ops = [(ideal_ptm(g), g.qubits) for g in target.pre]
    post_ops = [(ideal_ptm(g), g.qubits) for g in target.post]
    before = _state_vector(ideal_ops[: i - 1] + [pre_ops], n)
    after_core = _state_vector([layer_ops(core, model, ideal=True)], n, before).reshape(-1)

    def push(vec: np.ndarray) -> np.ndarray:
        state = _state_vector([post_ops] + ideal_ops[i:], n, vec.reshape((4,) * n))
        return readout(state)

    delta = push(lam @ after_core)
    delta_ideal = push(gen @ after_core)
    return PerturbationResult(delta, delta_ideal, gen, gen_inv, lam, repetitions)


COUNTS_COLUMNS = ("circuit_id", "context_id", "bitstring", "count")


def write_counts_csv(path: str | Path, rows: Iterable[tuple[str, str, str, int]]) -> None:
    """Rows of (circuit_id, context_id, bitstring, count); bitstrings big-endian, qubit 0 leftmost."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNTS_COLUMNS)
        for row in rows:
            w.writerow(row)


def counts_rows(circuit_id: str, context_id: str, counts: np.ndarray, n: int,
                keep_zeros: bool = False) -> list[tuple[str, str, str, int]]:
    return [(circuit_id, context_id, format(k, f"0{n}b"), int(c))
            for k, c in enumerate(counts) if c or keep_zeros]


def read_counts_csv(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    """Returns (circuit ids, context ids, counts tensor [circuit, context, outcome]).

    Ids keep first-appearance order; outcomes cover all 2**n bitstrings.
    """
    circuits: dict[str, int] = {}
    contexts: dict[str, int] = {}
    records = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(COUNTS_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"counts CSV lacks columns {sorted(missing)}")
        for row in reader:
            bits = row["bitstring"].strip()
            if not bits or set(bits) - {"0", "1"}:
                raise ValueError(f"bad bitstring {bits!r}")
            if width is None:
                width = len(bits)
            elif len(bits) != width:
                raise ValueError("bitstrings of different lengths")
            count = int(row["count"])
            if count < 0:
                raise ValueError("negative count")
            c = circuits.setdefault(row["circuit_id"].strip(), len(circuits))
            s = contexts.setdefault(row["context_id"].strip(), len(contexts))
            records.append((c, s, int(bits, 2), count))
    if width is None:
        raise ValueError("counts CSV has no data rows")
    x = np.zeros((len(circuits), len(contexts), 2**width), dtype=np.int64)
    for c, s, k, count in records:
        x[c, s, k] += count
    return list(circuits), list(contexts), x
