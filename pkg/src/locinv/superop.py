"""Pauli-transfer-matrix algebra: ideal gate maps, noisy error maps,
embedding, error generators and fidelity metrics.

PTMs are real ``4**n x 4**n`` numpy arrays in the basis {I, X, Y, Z}^n with
qubit 0 the most significant factor. ``R[i, j] = tr(P_i L(P_j)) / 2**n``.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .circuit import CNOT, ID, PAULI, RZ, SX, Gate, Layer, gate_unitary

_P1 = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


class LogDomainError(ArithmeticError):
    """The matrix has an eigenvalue on the closed negative real axis."""


class NotCPTPError(ArithmeticError):
    """A map or distribution left the physical set by more than round-off."""


@functools.lru_cache(maxsize=None)
def pauli_basis(n: int) -> np.ndarray:
    """Stack of the 4**n Pauli strings, shape (4**n, 2**n, 2**n)."""
    mats = []
    for labels in itertools.product(range(4), repeat=n):
        m = np.array([[1]], dtype=complex)
        for k in labels:
            m = np.kron(m, _P1[k])
        mats.append(m)
    return np.array(mats)


def ptm_from_unitary(u: np.ndarray) -> np.ndarray:
    d = u.shape[0]
    n = int(round(math.log2(d)))
    basis = pauli_basis(n)
    image = np.einsum("ab,jbc,dc->jad", u, basis, u.conj())
    return np.einsum("iba,jab->ij", basis, image).real / d


@functools.lru_cache(maxsize=None)
def _fixed_ptm(kind: str, axis: str | None = None) -> np.ndarray:
    if kind == PAULI:
        return np.diag([1.0] + [1.0 if k == "IXYZ".index(axis) else -1.0 for k in (1, 2, 3)])
    if kind == ID:
        return np.eye(4)
    u = gate_unitary(Gate.cnot(0, 1) if kind == CNOT else Gate.sx(0))
    r = ptm_from_unitary(u)
    r[np.abs(r) < 1e-15] = 0.0
    return r


def rz_ptm(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1, 0, 0, 0], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1]], dtype=float)


def ideal_ptm(gate: Gate) -> np.ndarray:
    """Exact PTM of a native gate on its own qubits."""
    if gate.kind == RZ:
        return rz_ptm(gate.theta)
    return _fixed_ptm(gate.kind, gate.axis).copy()


def embed(local: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    """Lift a k-qubit PTM acting on ``qubits`` (in that order) to n qubits."""
    qubits = list(qubits)
    k = len(qubits)
    if local.shape != (4**k, 4**k):
        raise ValueError(f"local PTM shape {local.shape} does not match {k} qubit(s)")
    if len(set(qubits)) != k or any(not 0 <= q < n for q in qubits):
        raise ValueError(f"bad qubit list {qubits} for n={n}")
    rest = [q for q in range(n) if q not in qubits]
    full = np.kron(local, np.eye(4 ** (n - k))).reshape((4,) * (2 * n))
    perm = list(np.argsort(qubits + rest))
    return full.transpose(perm + [n + p for p in perm]).reshape(4**n, 4**n)


def apply_local(state: np.ndarray, local: np.ndarray, qubits: Sequence[int]) -> np.ndarray:
    """Apply a local PTM to a Pauli-vector state held as an n-axis tensor."""
    k = len(qubits)
    op = local.reshape((4,) * (2 * k))
    out = np.tensordot(op, state, axes=(list(range(k, 2 * k)), list(qubits)))
    return np.moveaxis(out, list(range(k)), list(qubits))


def depolarizing_ptm(p: float, k: int = 1) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"depolarizing probability {p} outside [0, 1]")
    diag = np.full(4**k, 1.0 - p)
    diag[0] = 1.0
    return np.diag(diag)


def check_ptm(r: np.ndarray, tol: float = 1e-9) -> None:
    """Raise NotCPTPError unless ``r`` is trace preserving with bounded entries."""
    r = np.asarray(r, dtype=float)
    dim = r.shape[0]
    if r.shape != (dim, dim) or 4 ** int(round(math.log(dim, 4))) != dim:
        raise ValueError(f"PTM must be square with side 4**n, got {r.shape}")
    first = np.zeros(dim)
    first[0] = 1.0
    if np.max(np.abs(r[0] - first)) > tol:
        raise NotCPTPError("first row of PTM is not (1, 0, ..., 0)")
    if np.max(np.abs(r)) > 1 + tol:
        raise NotCPTPError("PTM entry outside [-1, 1]")


def _sqrtm_db(a: np.ndarray, tol: float = 1e-14, max_iter: int = 100) -> np.ndarray:
    """Principal square root by the Denman-Beavers iteration."""
    y = a.copy()
    z = np.eye(a.shape[0])
    for _ in range(max_iter):
        y_inv = np.linalg.inv(y)
        z_inv = np.linalg.inv(z)
        y_next = 0.5 * (y + z_inv)
        z = 0.5 * (z + y_inv)
        delta = np.max(np.abs(y_next - y))
        y = y_next
        if delta < tol * max(1.0, np.max(np.abs(y))):
            break
    return y


def principal_log(a: np.ndarray, domain_tol: float = 1e-9) -> np.ndarray:
    """Principal matrix logarithm by inverse scaling and squaring.

    Repeated Denman-Beavers square roots bring ``a`` near the identity, where
    log(A) = 2 atanh((A - I)(A + I)^-1) is summed as a power series.
    """
    a = np.asarray(a, dtype=float)
    eig = np.linalg.eigvals(a)
    on_axis = eig[(np.abs(eig.imag) <= domain_tol) & (eig.real <= domain_tol)]
    if on_axis.size:
        raise LogDomainError(f"eigenvalue {on_axis[0].real:.6g} lies on the closed negative real axis")
    eye = np.eye(a.shape[0])
    x = a
    squarings = 0
    while np.linalg.norm(x - eye, 1) > 0.25:
        x = _sqrtm_db(x)
        squarings += 1
        if squarings > 64:
            raise LogDomainError("square-root iteration failed to approach the identity")
    z = np.linalg.solve((x + eye).T, (x - eye).T).T
    z2 = z @ z
    term = z.copy()
    total = z.copy()
    for k in range(1, 200):
        term = term @ z2
        step = term / (2 * k + 1)
        total += step
        if np.max(np.abs(step)) < 1e-18:
            break
    return (2.0**squarings) * 2.0 * total


@dataclass(frozen=True)
class ErrorGenerator:
    matrix: np.ndarray
    delta: float

    @property
    def n(self) -> int:
        return int(round(math.log(self.matrix.shape[0], 4)))


def error_generator(r: np.ndarray, roundtrip_tol: float = 1e-8) -> ErrorGenerator:
    """Generator L with exp(L) = r; ``delta`` is the max-abs-entry surrogate of its size."""
    gen = principal_log(r)
    back = scipy.linalg.expm(gen)
    if np.max(np.abs(back - r)) > roundtrip_tol:
        raise LogDomainError("matrix logarithm failed to round-trip through exp")
    return ErrorGenerator(gen, float(np.max(np.abs(gen))))


def _dim(r: np.ndarray) -> int:
    return int(round(math.sqrt(r.shape[0])))


def avg_gate_fidelity(ideal: np.ndarray, channel: np.ndarray) -> float:
    """(tr(R_g^T R_E) + d) / (d (d + 1)) for Hilbert-space dimension d."""
    if ideal.shape != channel.shape:
        raise ValueError(f"dimension mismatch: {ideal.shape} vs {channel.shape}")
    d = _dim(ideal)
    return float((np.trace(ideal.T @ channel) + d) / (d * (d + 1)))


def entanglement_infidelity(ideal: np.ndarray, channel: np.ndarray) -> float:
    d = _dim(ideal)
    f_avg = avg_gate_fidelity(ideal, channel)
    return 1.0 - (f_avg * (d + 1) - 1.0) / d


def _vec_basis(n: int) -> tuple[np.ndarray, np.ndarray]:
    basis = pauli_basis(n)
    # column-stacking vec: vec(A)[a + b*d] = A[a, b]
    vec_p = np.stack([p.reshape(-1, order="F") for p in basis], axis=1)
    vec_pt = np.stack([p.T.reshape(-1, order="F") for p in basis], axis=1)
    return vec_p, vec_pt


def ptm_to_computational(r: np.ndarray) -> np.ndarray:
    """Superoperator S with vec(L(rho)) = S vec(rho), column-stacked vec.

    Implements L(rho) = (1/d) sum_ij tr(P_j rho) R_ij P_i; a unitary channel
    maps to conj(U) kron U.
    """
    n = int(round(math.log(r.shape[0], 4)))
    d = 2**n
    vec_p, vec_pt = _vec_basis(n)
    return vec_p @ r @ vec_pt.T / d


def computational_to_ptm(s: np.ndarray) -> np.ndarray:
    n = int(round(math.log(s.shape[0], 4)))
    d = 2**n
    vec_p, vec_pt = _vec_basis(n)
    return (vec_pt.T @ s @ vec_p / d).real


@dataclass(frozen=True)
class Degradation:
    """Depolarizing probability per successive occurrence of a gate on a qubit pair."""

    gate: str
    qubits: frozenset[int]
    p: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "qubits", frozenset(self.qubits))
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        if not self.p:
            raise ValueError("degradation schedule is empty")
        if any(not 0.0 <= x <= 1.0 for x in self.p):
            raise ValueError("degradation probabilities must lie in [0, 1]")

    def matches(self, gate: Gate) -> bool:
        return gate.kind == self.gate and frozenset(gate.qubits) == self.qubits

    def probability(self, ordinal: int) -> float:
        """p for the 1-based occurrence; saturates at the last listed value."""
        return self.p[min(ordinal, len(self.p)) - 1]


@dataclass(frozen=True)
class ErrorModel:
    """Noisy PTMs per gate kind (RZ is always ideal) plus optional degradation.

    ``counting`` picks how degradation occurrences are numbered:
    "provenance" numbers occurrences in the original circuit and gives
    inserted inverse/repeat copies the ordinal of their source layer;
    "execution" numbers every occurrence in execution order.
    """

    gates: Mapping[str, np.ndarray]
    degradation: tuple[Degradation, ...] = ()
    noisy_paulis: bool = False
    counting: str = "provenance"
    annotations: Mapping[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        gates = {k: np.array(v, dtype=float) for k, v in self.gates.items()}
        expected = {CNOT: (16, 16), SX: (4, 4), ID: (4, 4)}
        for kind, r in gates.items():
            if kind not in expected:
                raise ValueError(f"noise model has unknown gate {kind!r}")
            if r.shape != expected[kind]:
                raise ValueError(f"{kind} PTM has shape {r.shape}, expected {expected[kind]}")
            check_ptm(r)
            r.setflags(write=False)
        object.__setattr__(self, "gates", gates)
        object.__setattr__(self, "degradation", tuple(self.degradation))
        if self.counting not in ("provenance", "execution"):
            raise ValueError(f"unknown degradation counting {self.counting!r}")

    @classmethod
    def ideal(cls) -> "ErrorModel":
        return cls({k: _fixed_ptm(k) for k in (CNOT, SX, ID)})

    @classmethod
    def from_json(cls, doc: dict) -> "ErrorModel":
        gates = {name: entry["ptm"] for name, entry in doc.get("gates", {}).items()}
        sched = tuple(Degradation(d["gate"], frozenset(d["qubits"]), tuple(d["p"]))
                      for d in doc.get("degradation", []))
        return cls(gates, sched, noisy_paulis=bool(doc.get("noisy_paulis", False)),
                   counting=doc.get("counting", "provenance"),
                   annotations=doc.get("annotations", {}))

    def to_json(self) -> dict:
        return {
            "gates": {k: {"ptm": v.tolist()} for k, v in self.gates.items()},
            "degradation": [{"gate": d.gate, "qubits": sorted(d.qubits), "p": list(d.p)}
                            for d in self.degradation],
            "noisy_paulis": self.noisy_paulis,
            "counting": self.counting,
        }

    def noisy(self, kind: str) -> np.ndarray:
        try:
            return self.gates[kind]
        except KeyError:
            raise ValueError(f"noise model has no PTM for {kind}") from None

    def with_degradation(self, *schedules: Degradation) -> "ErrorModel":
        return ErrorModel(self.gates, tuple(schedules), self.noisy_paulis, self.counting, self.annotations)


def load_model(path: str | Path) -> ErrorModel:
    with open(path) as fh:
        return ErrorModel.from_json(json.load(fh))


def bundled_model() -> ErrorModel:
    """The GST-derived Ourense process matrices shipped with the package."""
    text = resources.files("locinv").joinpath("data/ourense.json").read_text()
    return ErrorModel.from_json(json.loads(text))


Op = tuple[np.ndarray, tuple[int, ...]]


def _pauli_ops(gate: Gate, model: ErrorModel) -> list[Op]:
    q = gate.qubits
    if not model.noisy_paulis:
        return [(ideal_ptm(gate), q)]
    sx = model.noisy(SX)
    z = ideal_ptm(Gate.rz(q[0], math.pi))
    if gate.axis == "Z":
        return [(z, q)]
    ops = [(sx, q), (sx, q)]
    return [(z, q)] + ops if gate.axis == "Y" else ops


def layer_ops(layer: Layer, model: ErrorModel, ideal: bool = False,
              degrade: Mapping[Gate, float] | None = None) -> list[Op]:
    """Local PTMs of a layer in execution order.

    Frames and virtual layers are ideal. Physical gates (ID included) take
    the model's noisy PTM unless ``ideal``; ``degrade`` maps core gates to a
    depolarizing probability composed after the gate.
    """
    ops: list[Op] = [(ideal_ptm(g), g.qubits) for g in layer.pre]
    for g in layer.gates:
        if g.kind == RZ:
            ops.append((ideal_ptm(g), g.qubits))
        elif g.kind == PAULI:
            ops.extend([(ideal_ptm(g), g.qubits)] if ideal else _pauli_ops(g, model))
        elif ideal:
            ops.append((ideal_ptm(g), g.qubits))
        else:
            r = model.noisy(g.kind)
            p = degrade.get(g, 0.0) if degrade else 0.0
            if p:
                r = depolarizing_ptm(p, len(g.qubits)) @ r
            ops.append((r, g.qubits))
    ops.extend((ideal_ptm(g), g.qubits) for g in layer.post)
    return ops


def compose_ops(ops: Sequence[Op], n: int) -> np.ndarray:
    full = np.eye(4**n)
    for local, qubits in ops:
        full = embed(local, qubits, n) @ full
    return full


def layer_superop(layer: Layer, model: ErrorModel, n: int, ideal: bool = False,
                  instances: Mapping[Gate, int] | None = None) -> np.ndarray:
    """Full n-qubit PTM of a layer.

    ``instances`` gives the 1-based degradation ordinal of core gates that
    match a schedule entry of the model.
    """
    degrade = {}
    for g, ordinal in (instances or {}).items():
        for sched in model.degradation:
            if sched.matches(g):
                degrade[g] = sched.probability(ordinal)
    return compose_ops(layer_ops(layer, model, ideal=ideal, degrade=degrade), n)
