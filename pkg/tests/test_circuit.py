import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locinv.circuit import (
    Circuit,
    CircuitError,
    Gate,
    InversionSpec,
    Layer,
    TwirlConfig,
    attach_twirl,
    build_inverted,
    canonical_angle,
    circuit_from_json,
    gate_unitary,
    invert_layer,
    make_layer,
    propagate_pauli,
    split_into_layers,
)
from locinv.fixtures import FIXTURES, qaoa_gates, qft_gates

from oracles import dm_simulate, statevector
from strategies import circuits


# gates ----------------------------------------------------------------------

@given(st.floats(-100, 100, allow_nan=False))
def test_angle_canonical_range_and_equivalence(theta):
    t = canonical_angle(theta)
    assert -math.pi < t <= math.pi
    assert math.isclose(math.cos(t), math.cos(theta), abs_tol=1e-9)
    assert math.isclose(math.sin(t), math.sin(theta), abs_tol=1e-9)


def test_angle_pi_maps_to_plus_pi():
    assert Gate.rz(0, -math.pi).theta == pytest.approx(math.pi)
    assert Gate.rz(0, 3 * math.pi).theta == pytest.approx(math.pi)


@pytest.mark.parametrize("bad", [
    lambda: Gate.cnot(1, 1),
    lambda: Gate.sx(-1),
    lambda: Gate("SX", (0, 1)),
    lambda: Gate("RZ", (0,)),
    lambda: Gate("H", (0,)),
    lambda: Gate.pauli(0, "W"),
])
def test_bad_gates_rejected(bad):
    with pytest.raises(CircuitError):
        bad()


def test_gate_json_round_trip():
    for g in [Gate.cnot(0, 2), Gate.sx(1), Gate.rz(3, 0.25), Gate.idle(0), Gate.pauli(1, "Y")]:
        assert Gate.from_json(json.loads(json.dumps(g.to_json()))) == g


# layers ---------------------------------------------------------------------

def test_overlapping_gates_rejected():
    with pytest.raises(CircuitError):
        Layer((Gate.cnot(0, 1), Gate.sx(1)))


def test_physical_layer_gets_idle_fill():
    layer = make_layer([Gate.sx(1)], 3)
    assert layer.support == frozenset({0, 1, 2})
    assert sorted(g.kind for g in layer.gates) == ["ID", "ID", "SX"]


def test_virtual_layer_has_no_fill():
    layer = make_layer([Gate.rz(0, 0.3)], 3)
    assert layer.is_virtual and layer.support == frozenset({0})


def test_circuit_requires_full_cover_of_physical_layers():
    with pytest.raises(CircuitError):
        Circuit(2, (Layer((Gate.sx(0),)),))


def test_split_puts_rz_in_virtual_layers():
    c = split_into_layers([Gate.sx(0), Gate.rz(0, 1.0), Gate.sx(1), Gate.cnot(0, 1)], 2)
    assert [layer.is_virtual for layer in c.layers] == [False, True, False]


def test_split_rejects_empty():
    with pytest.raises(CircuitError):
        split_into_layers([], 2)


def test_moment_overlap_rejected():
    doc = {"n": 2, "gates": [{"gate": "SX", "qubits": [0], "moment": 0},
                             {"gate": "CNOT", "qubits": [0, 1], "moment": 0}]}
    with pytest.raises(CircuitError):
        circuit_from_json(doc)


@settings(max_examples=40, deadline=None)
@given(circuits())
def test_layering_preserves_ideal_action(c):
    psi = statevector(c.flatten(), c.n)
    assert np.allclose(np.abs(psi) ** 2, dm_simulate(c), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(circuits())
def test_layered_json_round_trip(c):
    again = circuit_from_json(json.loads(json.dumps(c.to_json())))
    assert again == c


# fixtures -------------------------------------------------------------------

def test_qaoa_fixture_has_nine_layers_with_sx_only_ends():
    for name in ("qaoa4-optimized", "qaoa4-random"):
        c = FIXTURES[name].circuit()
        assert c.depth == 9 and c.physical_depth == 9
        sx_only = [k for k, layer in enumerate(c.layers, 1)
                   if {g.kind for g in layer.gates} <= {"SX", "ID"}]
        assert sx_only == [1, 8, 9]


def test_qft4_fixture_places_degraded_cnots():
    c = FIXTURES["qft4"].circuit()
    assert c.depth == 15
    pos = [k for k, layer in enumerate(c.layers, 1)
           if any(g.kind == "CNOT" and set(g.qubits) == {1, 2} for g in layer.gates)]
    assert pos == [6, 7, 12, 13, 14]


def test_qft_fixture_ideal_output_is_a_single_bitstring():
    for n in (3, 4):
        probs = np.abs(statevector(qft_gates(n), n)) ** 2
        assert probs.max() == pytest.approx(1.0, abs=1e-12)


def test_qaoa_angles_match_table():
    gates = qaoa_gates("optimized")
    thetas = sorted({round(g.theta, 4) for g in gates if g.kind == "RZ"})
    expect = [4.426, 1.192, 2.383, 3.8411, 1.532, 3.404, 4.937]
    for t in expect:
        assert round(canonical_angle(t), 4) in thetas


# inversion ------------------------------------------------------------------

def test_invert_sx_layer_frames():
    layer = make_layer([Gate.sx(0), Gate.cnot(1, 2)], 3)
    (inv,) = invert_layer(layer)
    assert inv.gates == layer.gates
    assert [g.theta for g in inv.pre] == pytest.approx([math.pi])
    assert [g.theta for g in inv.post] == pytest.approx([math.pi])
    u = gate_unitary(Gate.sx(0))
    rz = np.diag([1, -1])
    prod = rz @ u @ rz @ u
    assert np.allclose(prod, prod[0, 0] * np.eye(2)) and abs(abs(prod[0, 0]) - 1) < 1e-12


def test_invert_virtual_layer_negates_angles():
    (inv,) = invert_layer(Layer((Gate.rz(0, 0.4), Gate.rz(1, -1.1))))
    assert [g.theta for g in inv.gates] == pytest.approx([-0.4, 1.1])


@pytest.mark.parametrize("m", [1, 2, 3])
def test_inverted_structure(m):
    c = FIXTURES["qft4"].circuit()
    inv = build_inverted(c, InversionSpec(6, m))
    assert inv.depth == c.depth + 2 * m
    roles = [layer.tag.role for layer in inv.layers[5:6 + 2 * m]]
    assert roles == ["original"] + ["inverse", "repeat"] * m
    original, last = inv.layers[5], inv.layers[5 + 2 * m]
    assert original.pre == c.layers[5].pre and original.post == ()
    assert last.post == c.layers[5].post


def test_inversion_target_out_of_range():
    c = FIXTURES["qft3"].circuit()
    with pytest.raises(CircuitError):
        build_inverted(c, InversionSpec(c.depth + 1))
    with pytest.raises(CircuitError):
        InversionSpec(1, repetitions=0)


@settings(max_examples=40, deadline=None)
@given(circuits(), st.integers(1, 3), st.data())
def test_ideal_inversion_cancels(c, m, data):
    i = data.draw(st.integers(1, c.depth))
    base = dm_simulate(c)
    inv = build_inverted(c, InversionSpec(i, m))
    assert np.allclose(dm_simulate(inv), base, atol=1e-10)


# twirl ----------------------------------------------------------------------

def _unitary(layers, n):
    u = np.eye(2**n, dtype=complex)
    for layer in layers:
        for g in layer.pre + layer.gates + layer.post:
            if g.kind == "ID":
                continue
            k = len(g.qubits)
            full = np.eye(2**n, dtype=complex).reshape((2,) * (2 * n))
            gu = gate_unitary(g).reshape((2,) * (2 * k))
            # act on the row indices of the listed qubits
            full = np.tensordot(gu, full, axes=(list(range(k, 2 * k)), list(g.qubits)))
            full = np.moveaxis(full, list(range(k)), list(g.qubits)).reshape(2**n, 2**n)
            u = full @ u
    return u


def test_propagate_pauli_matches_conjugation():
    rng = np.random.default_rng(3)
    layer = make_layer([Gate.cnot(0, 1), Gate.sx(2)], 3)
    u = _unitary([layer], 3)
    for _ in range(20):
        labels = {q: "IXYZ"[rng.integers(4)] for q in range(3)}
        out, sign = propagate_pauli(layer, labels)
        p_in = _unitary([make_layer([Gate.pauli(q, a) for q, a in labels.items() if a != "I"], 3)
                         ] if any(a != "I" for a in labels.values()) else [], 3)
        p_out = _unitary([make_layer([Gate.pauli(q, a) for q, a in out.items() if a != "I"], 3)
                          ] if any(a != "I" for a in out.values()) else [], 3)
        assert np.allclose(u @ p_in @ u.conj().T, sign * p_out, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(circuits(max_n=3, max_gates=8), st.integers(1, 2), st.integers(0, 2**31), st.data())
def test_twirled_instances_preserve_ideal_output(c, m, seed, data):
    physical = [k for k, layer in enumerate(c.layers, 1) if not layer.is_virtual]
    if not physical:
        return
    i = data.draw(st.sampled_from(physical))
    spec = InversionSpec(i, m, TwirlConfig(4, seed))
    inv = build_inverted(c, spec)
    base = dm_simulate(c)
    for tw in attach_twirl(inv, spec):
        assert np.allclose(dm_simulate(tw), base, atol=1e-10)


def test_twirl_seed_reproducible_and_varied():
    c = FIXTURES["qaoa4-optimized"].circuit()
    spec = InversionSpec(2, 1, TwirlConfig(10, 7))
    inv = build_inverted(c, spec)
    a = attach_twirl(inv, spec)
    b = attach_twirl(inv, spec)
    assert [x.layers for x in a] == [x.layers for x in b]
    assert len({x.layers for x in a}) > 1
    other = attach_twirl(inv, InversionSpec(2, 1, TwirlConfig(10, 8)))
    assert [x.layers for x in a] != [x.layers for x in other]


def test_twirl_only_touches_active_qubits():
    c = split_into_layers([Gate.sx(0), Gate.cnot(1, 2)], 4)
    spec = InversionSpec(1, 1, TwirlConfig(30, 1))
    for tw in attach_twirl(build_inverted(c, spec), spec):
        for layer in tw.layers:
            if layer.is_twirl:
                assert layer.support <= {0, 1, 2}


def test_twirl_refuses_virtual_target():
    c = split_into_layers([Gate.rz(0, 0.3), Gate.sx(0)], 1)
    spec = InversionSpec(1, 1, TwirlConfig(2, 0))
    with pytest.raises(CircuitError):
        attach_twirl(build_inverted(c, spec), spec)
