"""Layered circuit IR over the native set {CNOT, SX, RZ, ID} and the passes
that build locally inverted and Pauli-twirled circuit variants.

A :class:`Layer` has a *core* of gates acting on disjoint qubits plus two
optional *frames* of virtual RZ gates (``pre`` runs before the core, ``post``
after it). Frames model virtual Z rotations that sit between physical layers
without occupying a clock cycle; they are never inverted and never noisy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CNOT = "CNOT"
SX = "SX"
RZ = "RZ"
ID = "ID"
PAULI = "PAULI"

PAULI_AXES = ("X", "Y", "Z")
_ARITY = {CNOT: 2, SX: 1, RZ: 1, ID: 1, PAULI: 1}


class CircuitError(ValueError):
    """Malformed gate, layer, circuit or inversion request."""


def canonical_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    t = math.remainder(float(theta), 2 * math.pi)
    if t <= -math.pi:
        t += 2 * math.pi
    return t


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    theta: float | None = None
    axis: str | None = None

    def __post_init__(self):
        if self.kind not in _ARITY:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        qubits = tuple(int(q) for q in self.qubits)
        object.__setattr__(self, "qubits", qubits)
        if len(qubits) != _ARITY[self.kind]:
            raise CircuitError(f"{self.kind} acts on {_ARITY[self.kind]} qubit(s), got {qubits}")
        if any(q < 0 for q in qubits):
            raise CircuitError(f"negative qubit index in {qubits}")
        if len(set(qubits)) != len(qubits):
            raise CircuitError(f"CNOT control and target coincide: {qubits}")
        if self.kind == RZ:
            if self.theta is None:
                raise CircuitError("RZ needs an angle")
            object.__setattr__(self, "theta", canonical_angle(self.theta))
        elif self.theta is not None:
            raise CircuitError(f"{self.kind} takes no angle")
        if self.kind == PAULI:
            if self.axis not in PAULI_AXES:
                raise CircuitError(f"Pauli axis must be one of {PAULI_AXES}, got {self.axis!r}")
        elif self.axis is not None:
            raise CircuitError(f"{self.kind} takes no axis")

    @classmethod
    def cnot(cls, control: int, target: int) -> "Gate":
        return cls(CNOT, (control, target))

    @classmethod
    def sx(cls, qubit: int) -> "Gate":
        return cls(SX, (qubit,))

    @classmethod
    def rz(cls, qubit: int, theta: float) -> "Gate":
        return cls(RZ, (qubit,), theta=theta)

    @classmethod
    def idle(cls, qubit: int) -> "Gate":
        return cls(ID, (qubit,))

    @classmethod
    def pauli(cls, qubit: int, axis: str) -> "Gate":
        return cls(PAULI, (qubit,), axis=axis)

    @property
    def is_virtual(self) -> bool:
        return self.kind == RZ

    def to_json(self) -> dict:
        if self.kind == PAULI:
            return {"gate": self.axis, "qubits": list(self.qubits)}
        d = {"gate": self.kind, "qubits": list(self.qubits)}
        if self.kind == RZ:
            d["theta"] = self.theta
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Gate":
        try:
            name = d["gate"]
            qubits = tuple(d["qubits"])
        except (KeyError, TypeError) as exc:
            raise CircuitError(f"bad gate object {d!r}") from exc
        if name in PAULI_AXES:
            return cls.pauli(qubits[0], name)
        if name == RZ:
            if "theta" not in d:
                raise CircuitError(f"RZ without theta: {d!r}")
            return cls(RZ, qubits, theta=float(d["theta"]))
        return cls(name, qubits)

    def __str__(self):
        if self.kind == RZ:
            return f"RZ({self.qubits[0]}, {self.theta:.4g})"
        if self.kind == PAULI:
            return f"{self.axis}({self.qubits[0]})"
        return f"{self.kind}({', '.join(map(str, self.qubits))})"


@dataclass(frozen=True)
class Provenance:
    """Where a layer of a transformed circuit came from.

    ``source`` is the 1-based index of the originating layer; ``copy`` is 0
    for the original layer and counts inserted layers of the same source in
    execution order.
    """

    source: int
    copy: int = 0
    role: str = "original"  # original | inverse | repeat | twirl


def _merge_frame(gates: Iterable[Gate]) -> tuple[Gate, ...]:
    """Compose RZ gates per qubit (in order) and drop identities."""
    angles: dict[int, float] = {}
    for g in gates:
        if g.kind != RZ:
            raise CircuitError(f"frames hold RZ gates only, got {g}")
        q = g.qubits[0]
        angles[q] = angles.get(q, 0.0) + g.theta
    out = []
    for q in sorted(angles):
        theta = canonical_angle(angles[q])
        if abs(theta) > 1e-15:
            out.append(Gate.rz(q, theta))
    return tuple(out)


@dataclass(frozen=True)
class Layer:
    gates: tuple[Gate, ...]
    pre: tuple[Gate, ...] = ()
    post: tuple[Gate, ...] = ()
    tag: Provenance | None = field(default=None, compare=False)

    def __post_init__(self):
        gates = tuple(sorted(self.gates, key=lambda g: g.qubits[0]))
        object.__setattr__(self, "gates", gates)
        seen: set[int] = set()
        for g in gates:
            if seen.intersection(g.qubits):
                raise CircuitError(f"overlapping gates in one layer: {g}")
            seen.update(g.qubits)
        kinds = {g.kind for g in gates}
        if RZ in kinds and kinds != {RZ}:
            raise CircuitError("RZ gates must live in virtual layers or frames")
        if PAULI in kinds and kinds != {PAULI}:
            raise CircuitError("twirl Pauli gates must form their own layer")
        if not gates and not (self.pre or self.post):
            raise CircuitError("empty layer")
        object.__setattr__(self, "pre", _merge_frame(self.pre))
        object.__setattr__(self, "post", _merge_frame(self.post))
        if self.is_virtual and (self.pre or self.post):
            raise CircuitError("virtual layers carry no frames")

    @property
    def support(self) -> frozenset[int]:
        return frozenset(q for g in self.gates for q in g.qubits)

    @property
    def is_virtual(self) -> bool:
        return all(g.kind == RZ for g in self.gates)

    @property
    def is_twirl(self) -> bool:
        return bool(self.gates) and all(g.kind == PAULI for g in self.gates)

    @property
    def is_physical(self) -> bool:
        return not (self.is_virtual or self.is_twirl)

    @property
    def active(self) -> frozenset[int]:
        """Qubits acted on by SX or CNOT."""
        return frozenset(q for g in self.gates if g.kind in (SX, CNOT) for q in g.qubits)

    def with_tag(self, tag: Provenance | None) -> "Layer":
        return replace(self, tag=tag)

    def core(self) -> "Layer":
        """The layer without its frames."""
        return Layer(self.gates, tag=self.tag)

    def __str__(self):
        parts = []
        if self.pre:
            parts.append("[" + " ".join(map(str, self.pre)) + "]")
        parts.append(" ".join(str(g) for g in self.gates if g.kind != ID) or "ID")
        if self.post:
            parts.append("[" + " ".join(map(str, self.post)) + "]")
        return " ".join(parts)


def make_layer(gates: Iterable[Gate], n: int, pre=(), post=(), tag=None) -> Layer:
    """Build a layer, hoisting stray RZ gates into the pre frame and filling
    uncovered qubits of physical layers with ID."""
    gates = list(gates)
    rz = [g for g in gates if g.kind == RZ]
    rest = [g for g in gates if g.kind != RZ]
    if rest and rz:
        pre = tuple(pre) + tuple(rz)
        gates = rest
    covered = {q for g in gates for q in g.qubits}
    if any(q >= n for q in covered):
        raise CircuitError(f"gate references qubit >= n={n}")
    kinds = {g.kind for g in gates}
    if gates and kinds - {RZ, PAULI}:
        gates = gates + [Gate.idle(q) for q in range(n) if q not in covered]
    return Layer(tuple(gates), tuple(pre), tuple(post), tag)


@dataclass(frozen=True)
class TwirlLayer:
    """One random Pauli pair around an inverse layer.

    ``pre`` is the random Pauli applied after the inverse layer; ``post`` is the
    compensating Pauli applied before it, so that
    ``pre . U_inverse . post == U_inverse`` up to a global phase. ``sign`` is
    the phase (+1/-1) dropped when propagating ``pre`` through the layer.
    """

    pre: tuple[str, ...]
    post: tuple[str, ...]
    sign: int
    seed: tuple[int, ...] = ()


@dataclass(frozen=True)
class Circuit:
    n: int
    layers: tuple[Layer, ...]
    twirls: tuple[TwirlLayer, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.n < 1:
            raise CircuitError("circuit needs at least one qubit")
        if not self.layers:
            raise CircuitError("circuit needs at least one layer")
        for layer in self.layers:
            qs = set(layer.support) | {g.qubits[0] for g in layer.pre + layer.post}
            if any(q >= self.n for q in qs):
                raise CircuitError(f"layer {layer} references qubit >= n={self.n}")
            if layer.is_physical and layer.support != frozenset(range(self.n)):
                raise CircuitError(f"physical layer does not cover every qubit: {layer}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def physical_depth(self) -> int:
        return sum(1 for layer in self.layers if layer.is_physical)

    @classmethod
    def from_layers(cls, n: int, layers: Iterable[Iterable[Gate] | Layer]) -> "Circuit":
        built = [layer if isinstance(layer, Layer) else make_layer(layer, n) for layer in layers]
        return cls(n, tuple(built))

    def tagged(self) -> "Circuit":
        """Copy with every untagged layer labelled by its 1-based position."""
        return replace(self, layers=tuple(
            layer if layer.tag is not None else layer.with_tag(Provenance(k))
            for k, layer in enumerate(self.layers, start=1)))

    def flatten(self) -> list[Gate]:
        """Gate sequence in execution order; ID fill is dropped."""
        out: list[Gate] = []
        for layer in self.layers:
            out.extend(layer.pre)
            out.extend(g for g in layer.gates if g.kind != ID)
            out.extend(layer.post)
        return out

    def to_json(self) -> dict:
        layers = []
        for layer in self.layers:
            gates = [g.to_json() for g in layer.gates]
            if layer.pre or layer.post:
                layers.append({"pre": [g.to_json() for g in layer.pre],
                               "gates": gates,
                               "post": [g.to_json() for g in layer.post]})
            else:
                layers.append(gates)
        return {"n": self.n, "layers": layers}

    def __str__(self):
        return "\n".join(f"L{k:<3d}{'v' if layer.is_virtual else ' '} {layer}"
                         for k, layer in enumerate(self.layers, start=1))


def circuit_from_json(doc: dict, absorb_virtual: bool = False) -> Circuit:
    """Read either the layered form (``layers``) or a flat ``gates`` list."""
    if "n" not in doc:
        raise CircuitError("circuit JSON needs 'n'")
    n = int(doc["n"])
    if "layers" in doc:
        layers = []
        for entry in doc["layers"]:
            if isinstance(entry, dict):
                layers.append(make_layer([Gate.from_json(g) for g in entry.get("gates", [])], n,
                                         pre=[Gate.from_json(g) for g in entry.get("pre", [])],
                                         post=[Gate.from_json(g) for g in entry.get("post", [])]))
            else:
                if not entry:
                    raise CircuitError("empty layer in circuit JSON")
                layers.append(make_layer([Gate.from_json(g) for g in entry], n))
        return Circuit(n, tuple(layers))
    if "gates" in doc:
        gates = [Gate.from_json(g) for g in doc["gates"]]
        moments = [g.get("moment") for g in doc["gates"]]
        return split_into_layers(gates, n, moments=moments, absorb_virtual=absorb_virtual)
    raise CircuitError("circuit JSON needs 'layers' or 'gates'")


def load_circuit(path: str | Path, absorb_virtual: bool = False) -> Circuit:
    with open(path) as fh:
        return circuit_from_json(json.load(fh), absorb_virtual=absorb_virtual)


def _check_moments(gates: Sequence[Gate], moments: Sequence[int | None]):
    used: dict[int, set[int]] = {}
    for g, m in zip(gates, moments):
        if m is None:
            continue
        qs = used.setdefault(int(m), set())
        if qs.intersection(g.qubits):
            raise CircuitError(f"gate {g} overlaps another gate in moment {m}")
        qs.update(g.qubits)


def split_into_layers(gates: Sequence[Gate], n: int, moments: Sequence[int | None] | None = None,
                      absorb_virtual: bool = False) -> Circuit:
    """Greedy as-soon-as-possible layering on the qubit-dependency DAG.

    RZ gates go to their own virtual layers; SX and CNOT share physical
    layers. With ``absorb_virtual`` the RZ gates instead become frames of the
    physical layers around them, so only physical layers are counted.
    """
    gates = list(gates)
    if not gates:
        raise CircuitError("no gates to layer")
    if any(q >= n for g in gates for q in g.qubits):
        raise CircuitError(f"gate references qubit >= n={n}")
    if any(g.kind in (ID, PAULI) for g in gates):
        raise CircuitError("gate lists take CNOT, SX and RZ only")
    if moments is not None:
        _check_moments(gates, moments)
    if absorb_virtual and any(g.kind != RZ for g in gates):
        return _split_absorbed(gates, n)

    slots: list[list[Gate]] = []
    virtual: list[bool] = []
    frontier = [-1] * n
    for g in gates:
        earliest = max(frontier[q] for q in g.qubits) + 1
        want_virtual = g.kind == RZ
        k = earliest
        while k < len(slots) and virtual[k] != want_virtual:
            k += 1
        if k == len(slots):
            slots.append([])
            virtual.append(want_virtual)
        slots[k].append(g)
        for q in g.qubits:
            frontier[q] = k
    return Circuit(n, tuple(make_layer(s, n) for s in slots))


def _split_absorbed(gates: list[Gate], n: int) -> Circuit:
    slots: list[list[Gate]] = []
    frontier = [-1] * n
    where: list[int | None] = []
    for g in gates:
        if g.kind == RZ:
            where.append(None)
            continue
        k = max(frontier[q] for q in g.qubits) + 1
        if k == len(slots):
            slots.append([])
        slots[k].append(g)
        for q in g.qubits:
            frontier[q] = k
        where.append(k)

    pre: list[list[Gate]] = [[] for _ in slots]
    post: list[list[Gate]] = [[] for _ in slots]
    last = [-1] * n
    pending: list[list[Gate]] = [[] for _ in range(n)]
    for g, k in zip(gates, where):
        if k is None:
            q = g.qubits[0]
            if last[q] >= 0:
                post[last[q]].append(g)
            else:
                pending[q].append(g)
            continue
        for q in g.qubits:
            if pending[q]:
                pre[k].extend(pending[q])
                pending[q] = []
            last[q] = k
    for q in range(n):
        pre[0].extend(pending[q])
    return Circuit(n, tuple(make_layer(s, n, pre=a, post=b) for s, a, b in zip(slots, pre, post)))


def invert_layer(layer: Layer) -> list[Layer]:
    """Physical realization of the inverse of the layer's core.

    CNOT and ID are self-inverse, RZ(t) becomes RZ(-t), and SX becomes the
    physical SX conjugated by virtual Z(pi)/Z(-pi), carried as frames.
    """
    if layer.is_twirl or any(g.kind == PAULI for g in layer.gates):
        raise CircuitError("cannot invert a twirl layer")
    if layer.is_virtual:
        return [Layer(tuple(Gate.rz(g.qubits[0], -g.theta) for g in layer.gates))]
    sx = [g.qubits[0] for g in layer.gates if g.kind == SX]
    return [Layer(layer.gates,
                  pre=tuple(Gate.rz(q, -math.pi) for q in sx),
                  post=tuple(Gate.rz(q, math.pi) for q in sx))]


@dataclass(frozen=True)
class TwirlConfig:
    instances: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.instances < 1:
            raise CircuitError("twirl needs at least one instance")


@dataclass(frozen=True)
class InversionSpec:
    target: int
    repetitions: int = 1
    twirl: TwirlConfig | None = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise CircuitError("repetitions must be >= 1")

    def check(self, circuit: Circuit):
        if not 1 <= self.target <= circuit.depth:
            raise CircuitError(f"target layer {self.target} outside 1..{circuit.depth}")


def build_inverted(circuit: Circuit, spec: InversionSpec) -> Circuit:
    """L_d ... L_{i+1} L_i [L_i^-1 L_i]^m L_{i-1} ... L_1 with provenance tags.

    The target's frames stay outside the inserted block: its pre frame runs
    before the first copy and its post frame after the last.
    """
    spec.check(circuit)
    src = circuit.tagged()
    i = spec.target
    target = src.layers[i - 1]
    source = target.tag.source
    inverse = invert_layer(target)
    out = list(src.layers[: i - 1])
    out.append(replace(target, post=(), tag=Provenance(source, 0, "original")))
    copy = 0
    for rep in range(spec.repetitions):
        for inv in inverse:
            copy += 1
            out.append(inv.with_tag(Provenance(source, copy, "inverse")))
        copy += 1
        last = rep == spec.repetitions - 1
        out.append(Layer(target.gates, post=target.post if last else (),
                         tag=Provenance(source, copy, "repeat")))
    out.extend(src.layers[i:])
    return Circuit(circuit.n, tuple(out))


_SX_U = 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]])
_CNOT_U = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_PAULI_U = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def gate_unitary(gate: Gate) -> np.ndarray:
    """Unitary of a gate on its own qubits (first listed qubit most significant)."""
    if gate.kind == CNOT:
        return _CNOT_U
    if gate.kind == SX:
        return _SX_U
    if gate.kind == ID:
        return _PAULI_U["I"]
    if gate.kind == PAULI:
        return _PAULI_U[gate.axis]
    half = gate.theta / 2
    return np.diag([np.exp(-1j * half), np.exp(1j * half)])


def _conjugate_pauli(u: np.ndarray, labels: str) -> tuple[str, int]:
    """Return (labels', sign) with u P u^dagger = sign * P'."""
    p = np.array([[1]], dtype=complex)
    for ch in labels:
        p = np.kron(p, _PAULI_U[ch])
    image = u @ p @ u.conj().T
    dim = image.shape[0]
    for cand in _pauli_strings(len(labels)):
        q = np.array([[1]], dtype=complex)
        for ch in cand:
            q = np.kron(q, _PAULI_U[ch])
        overlap = np.trace(q @ image) / dim
        if abs(abs(overlap) - 1) < 1e-9:
            if abs(overlap.imag) > 1e-9:
                raise CircuitError("conjugation produced a non-Hermitian Pauli")
            return cand, int(round(overlap.real))
    raise CircuitError("gate is not Clifford; cannot propagate a Pauli through it")


def _pauli_strings(k: int) -> list[str]:
    out = [""]
    for _ in range(k):
        out = [s + c for s in out for c in "IXYZ"]
    return out


def propagate_pauli(layer: Layer, paulis: dict[int, str]) -> tuple[dict[int, str], int]:
    """Conjugate a per-qubit Pauli assignment through the layer's core unitary."""
    out: dict[int, str] = {}
    sign = 1
    for g in layer.gates:
        labels = "".join(paulis.get(q, "I") for q in g.qubits)
        if set(labels) == {"I"}:
            continue
        if g.kind not in (SX, CNOT):
            raise CircuitError(f"cannot twirl through {g}")
        image, s = _conjugate_pauli(gate_unitary(g), labels)
        sign *= s
        for q, ch in zip(g.qubits, image):
            if ch != "I":
                out[q] = ch
    return out, sign


def draw_twirl(layer: Layer, rng: np.random.Generator, seed: tuple[int, ...] = ()) -> TwirlLayer:
    """Random Paulis on the SX/CNOT qubits of ``layer`` plus their compensator."""
    if layer.is_virtual:
        raise CircuitError("virtual layers are not twirled")
    bad = [g for g in layer.gates if g.kind not in (SX, CNOT, ID)]
    if bad:
        raise CircuitError(f"cannot twirl through {bad[0]}")
    active = sorted(layer.active)
    draws = rng.integers(0, 4, size=len(active))
    chosen = {q: "IXYZ"[k] for q, k in zip(active, draws) if k}
    image, sign = propagate_pauli(layer, chosen)
    n_labels = max(layer.support) + 1
    pre = tuple(chosen.get(q, "I") for q in range(n_labels))
    post = tuple(image.get(q, "I") for q in range(n_labels))
    return TwirlLayer(pre=pre, post=post, sign=sign, seed=seed)


def _pauli_layer(labels: Sequence[str], tag: Provenance) -> Layer | None:
    gates = tuple(Gate.pauli(q, ch) for q, ch in enumerate(labels) if ch != "I")
    return Layer(gates, tag=tag) if gates else None


def apply_twirls(inverted: Circuit, twirls: Sequence[TwirlLayer]) -> Circuit:
    """Insert one TwirlLayer around each inverse layer, in execution order."""
    inverse_positions = [k for k, layer in enumerate(inverted.layers)
                         if layer.tag is not None and layer.tag.role == "inverse"]
    if len(inverse_positions) != len(twirls):
        raise CircuitError(f"{len(inverse_positions)} inverse layers but {len(twirls)} twirls")
    out: list[Layer] = []
    it = iter(twirls)
    for layer in inverted.layers:
        if layer.tag is not None and layer.tag.role == "inverse":
            tw = next(it)
            tag = Provenance(layer.tag.source, layer.tag.copy, "twirl")
            before = _pauli_layer(tw.post, tag)
            after = _pauli_layer(tw.pre, tag)
            if before is not None:
                out.append(before)
            out.append(layer)
            if after is not None:
                out.append(after)
        else:
            out.append(layer)
    return Circuit(inverted.n, tuple(out), twirls=tuple(twirls))


def attach_twirl(inverted: Circuit, spec: InversionSpec,
                 rng: np.random.Generator | int | None = None) -> list[Circuit]:
    """R twirled instances of an inverted circuit.

    Each instance gets an independent generator spawned from ``rng`` (or from
    ``spec.twirl.seed`` when ``rng`` is None), so instance r is reproducible on
    its own.
    """
    if spec.twirl is None:
        raise CircuitError("spec has twirling switched off")
    targets = [layer for layer in inverted.layers
               if layer.tag is not None and layer.tag.role == "original"
               and layer.tag.source == spec.target]
    if not targets:
        raise CircuitError("inverted circuit has no target layer tagged for this spec")
    target = targets[0]
    if target.is_virtual:
        raise CircuitError("twirling is suppressed on virtual target layers")
    if isinstance(rng, np.random.Generator):
        seeds = [np.random.SeedSequence(int(s)) for s in rng.integers(0, 2**63, size=spec.twirl.instances)]
    else:
        base = spec.twirl.seed if rng is None else int(rng)
        seeds = np.random.SeedSequence([base, spec.target]).spawn(spec.twirl.instances)
    blocks = sum(1 for layer in inverted.layers if layer.tag is not None and layer.tag.role == "inverse")
    out = []
    for ss in seeds:
        gen = np.random.default_rng(ss)
        key = tuple(int(x) for x in np.atleast_1d(ss.entropy)) + tuple(ss.spawn_key)
        tws = [draw_twirl(target, gen, seed=key) for _ in range(blocks)]
        out.append(apply_twirls(inverted, tws))
    return out
