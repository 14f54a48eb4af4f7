"""Built-in circuits reconstructed from the published figure captions.

The exact gate-by-gate drawings are not available, so these are
reconstructions: they match the stated layer counts, the all-SX layers of the
QAOA circuit (1, 8 and 9), and the positions of the degraded CNOTs of the QFT
circuit (layers 6, 7, 12, 13, 14).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .circuit import Circuit, Gate, split_into_layers
from .superop import Degradation, ErrorModel, bundled_model

QAOA_WEIGHTS = {(0, 1): 26, (0, 3): 9, (0, 2): 20, (1, 2): 14, (1, 3): 29, (2, 3): 7}

# theta_1..theta_7; theta_4 is the mixer angle, the others are gamma * w_edge
QAOA_ANGLES = {
    "optimized": (4.426, 1.192, 2.383, 3.8411, 1.532, 3.404, 4.937),
    "random": (4.6, 1.238, 2.477, 4.471, 1.592, 3.538, 5.131),
}

# which edge each cost angle belongs to, grouped in rounds of disjoint pairs
_QAOA_ROUNDS = (
    (((0, 1), 0), ((2, 3), 1)),
    (((1, 2), 2), ((0, 3), 4)),
    (((0, 2), 5), ((1, 3), 6)),
)
_QAOA_MIXER = 3

DEGRADATION_P = (0.025, 0.051, 0.076, 0.102, 0.127)


def hadamard(q: int) -> list[Gate]:
    return [Gate.rz(q, math.pi / 2), Gate.sx(q), Gate.rz(q, math.pi / 2)]


def qaoa_gates(angles: str | tuple[float, ...] = "optimized") -> list[Gate]:
    """One-round QAOA for weighted Max-Cut on K4 in {CNOT, SX, RZ}."""
    theta = QAOA_ANGLES[angles] if isinstance(angles, str) else tuple(angles)
    if len(theta) != 7:
        raise ValueError("QAOA fixture takes seven angles")
    gates: list[Gate] = []
    for q in range(4):
        gates += hadamard(q)
    for rnd in _QAOA_ROUNDS:
        gates += [Gate.cnot(a, b) for (a, b), _ in rnd]
        gates += [Gate.rz(b, theta[k]) for (a, b), k in rnd]
        gates += [Gate.cnot(a, b) for (a, b), _ in rnd]
    beta = theta[_QAOA_MIXER]
    for q in range(4):
        gates += [Gate.rz(q, math.pi / 2), Gate.sx(q), Gate.rz(q, beta), Gate.sx(q)]
    return gates


def controlled_phase(control: int, target: int, phi: float) -> list[Gate]:
    return [Gate.rz(control, phi / 2), Gate.cnot(control, target), Gate.rz(target, -phi / 2),
            Gate.cnot(control, target), Gate.rz(target, phi / 2)]


def swap(a: int, b: int) -> list[Gate]:
    return [Gate.cnot(a, b), Gate.cnot(b, a), Gate.cnot(a, b)]


def qft_gates(n: int, prep: bool = True, swaps: bool = True) -> list[Gate]:
    """QFT (highest qubit first, then swaps) on a Hadamard-prepared input.

    Each swap starts with a CNOT controlled on the higher qubit. The input Hadamards make the ideal output a single bitstring; the
    back-to-back Hadamards on the highest qubit cancel and are dropped.
    """
    top = n - 1
    gates: list[Gate] = []
    if prep:
        for q in range(top):
            gates += hadamard(q)
    for j in range(top, -1, -1):
        if not (prep and j == top):
            gates += hadamard(j)
        for k in range(j - 1, -1, -1):
            gates += controlled_phase(k, j, math.pi / 2 ** (j - k))
    if swaps:
        for q in range(n // 2):
            gates += swap(n - 1 - q, q)
    return gates


def degraded_model(model: ErrorModel | None = None) -> ErrorModel:
    model = bundled_model() if model is None else model
    return model.with_degradation(Degradation("CNOT", frozenset({1, 2}), DEGRADATION_P))


@dataclass(frozen=True)
class Fixture:
    name: str
    description: str
    circuit: Callable[[], Circuit]
    model: Callable[[], ErrorModel]


FIXTURES = {
    "qaoa4-optimized": Fixture(
        "qaoa4-optimized", "4-qubit QAOA Max-Cut, optimized angles, 9 physical layers",
        lambda: split_into_layers(qaoa_gates("optimized"), 4, absorb_virtual=True), bundled_model),
    "qaoa4-random": Fixture(
        "qaoa4-random", "4-qubit QAOA Max-Cut, random angles, 9 physical layers",
        lambda: split_into_layers(qaoa_gates("random"), 4, absorb_virtual=True), bundled_model),
    "qft4": Fixture(
        "qft4", "4-qubit QFT on a Hadamard-prepared input, 15 physical layers",
        lambda: split_into_layers(qft_gates(4), 4, absorb_virtual=True), bundled_model),
    "qft4-degraded": Fixture(
        "qft4-degraded", "qft4 with degrading CNOTs between qubits 1 and 2",
        lambda: split_into_layers(qft_gates(4), 4, absorb_virtual=True), degraded_model),
    "qft3": Fixture(
        "qft3", "3-qubit QFT with Z rotations in their own virtual layers",
        lambda: split_into_layers(qft_gates(3), 3), bundled_model),
}


def get_fixture(name: str) -> Fixture:
    try:
        return FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
