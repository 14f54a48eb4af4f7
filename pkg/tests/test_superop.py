import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from locinv.circuit import Gate, make_layer
from locinv.superop import (
    Degradation,
    ErrorModel,
    LogDomainError,
    NotCPTPError,
    avg_gate_fidelity,
    bundled_model,
    check_ptm,
    compose_ops,
    computational_to_ptm,
    depolarizing_ptm,
    embed,
    entanglement_infidelity,
    error_generator,
    ideal_ptm,
    layer_ops,
    layer_superop,
    principal_log,
    ptm_from_unitary,
    ptm_to_computational,
    rz_ptm,
)

from oracles import CX, SX, ptm_of, rz

MODEL = bundled_model()


def random_unitary(rng, d):
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_channel_ptm(rng, k, strength=0.1):
    """Random CPTP map as a mixture of unitaries close to the identity."""
    d = 2**k
    weights = rng.dirichlet(np.ones(3))
    total = np.zeros((4**k, 4**k))
    for w in weights:
        h = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        h = strength * (h + h.conj().T) / 2
        total += w * ptm_of(scipy.linalg.expm(-1j * h))
    return total


# ideal maps -----------------------------------------------------------------

def test_native_ptms_match_independent_construction():
    assert np.allclose(ideal_ptm(Gate.sx(0)), ptm_of(SX), atol=1e-14)
    assert np.allclose(ideal_ptm(Gate.cnot(0, 1)), ptm_of(CX), atol=1e-14)
    assert np.allclose(ideal_ptm(Gate.idle(0)), np.eye(4))


def test_sx_ptm_is_x_rotation():
    expect = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]])
    assert np.allclose(ideal_ptm(Gate.sx(0)), expect, atol=1e-14)


@given(st.floats(-10, 10, allow_nan=False))
def test_rz_closed_form_matches_unitary(theta):
    assert np.allclose(rz_ptm(theta), ptm_of(rz(theta)), atol=1e-12)


@pytest.mark.parametrize("axis", ["X", "Y", "Z"])
def test_pauli_ptm(axis):
    from oracles import PAULIS
    assert np.allclose(ideal_ptm(Gate.pauli(0, axis)), ptm_of(PAULIS[axis]), atol=1e-14)


def test_embed_matches_kron_for_swapped_cnot():
    # CNOT with control 1, target 0 on two qubits
    swap = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]])
    assert np.allclose(embed(ideal_ptm(Gate.cnot(0, 1)), (1, 0), 2),
                       ptm_of(swap @ CX @ swap), atol=1e-13)


def test_embed_single_qubit_on_three():
    u = np.kron(np.kron(np.eye(2), SX), np.eye(2))
    assert np.allclose(embed(ideal_ptm(Gate.sx(0)), (1,), 3), ptm_of(u), atol=1e-13)


def test_embed_rejects_bad_qubits():
    with pytest.raises(ValueError):
        embed(np.eye(4), (3,), 2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ptm_from_unitary_is_orthogonal(seed):
    u = random_unitary(np.random.default_rng(seed), 4)
    r = ptm_from_unitary(u)
    assert np.allclose(r @ r.T, np.eye(16), atol=1e-12)
    assert np.allclose(r, ptm_of(u), atol=1e-12)


# conversions ----------------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 2))
def test_computational_round_trip(seed, k):
    r = random_channel_ptm(np.random.default_rng(seed), k)
    assert np.allclose(computational_to_ptm(ptm_to_computational(r)), r, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unitary_superoperator_is_conj_kron(seed):
    u = random_unitary(np.random.default_rng(seed), 2)
    assert np.allclose(ptm_to_computational(ptm_of(u)), np.kron(u.conj(), u), atol=1e-12)


def test_computational_form_acts_on_column_stacked_rho():
    rng = np.random.default_rng(0)
    r = MODEL.gates["SX"]
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    out = (ptm_to_computational(r) @ rho.reshape(-1, order="F")).reshape(2, 2, order="F")
    from oracles import PAULIS
    ps = [PAULIS[c] for c in "IXYZ"]
    c_in = np.array([np.trace(p @ rho).real for p in ps])
    c_out = np.array([np.trace(p @ out).real for p in ps])
    assert np.allclose(c_out, r @ c_in, atol=1e-12)


# fidelities -----------------------------------------------------------------

def test_fidelity_anchors():
    sx = MODEL.gates["SX"]
    z = rz_ptm(math.pi)
    zm = rz_ptm(-math.pi)
    f1 = avg_gate_fidelity(ideal_ptm(Gate.sx(0)), sx @ (z @ sx @ zm) @ sx)
    f2 = avg_gate_fidelity(np.linalg.matrix_power(ideal_ptm(Gate.sx(0)), 3), sx @ sx @ sx)
    # frozen from an independent Choi-matrix computation of the same maps
    assert f1 == pytest.approx(0.9974749, abs=1e-6)
    assert f2 == pytest.approx(0.9970835, abs=1e-6)


def _choi_fidelity(ideal, channel):
    """Process fidelity via computational superoperators, then average fidelity."""
    d = int(round(math.sqrt(ideal.shape[0])))
    s_ideal = ptm_to_computational(ideal)
    s_chan = ptm_to_computational(channel)
    f_pro = np.trace(s_ideal.conj().T @ s_chan).real / d**2
    return (d * f_pro + 1) / (d + 1)


@pytest.mark.parametrize("kind", ["ID", "SX", "CNOT"])
def test_avg_fidelity_agrees_with_superoperator_route(kind):
    ideal = ideal_ptm(Gate.cnot(0, 1) if kind == "CNOT" else Gate(kind, (0,)))
    assert avg_gate_fidelity(ideal, MODEL.gates[kind]) == pytest.approx(
        _choi_fidelity(ideal, MODEL.gates[kind]), abs=1e-12)


@pytest.mark.parametrize("kind,ent,avg", [
    ("ID", 4.175e-3, 2.7833333e-3),
    ("SX", 1.325e-3, 8.833333e-4),
    ("CNOT", 2.375e-2, 1.9e-2),
])
def test_bundled_gate_infidelities(kind, ent, avg):
    ideal = ideal_ptm(Gate.cnot(0, 1) if kind == "CNOT" else Gate(kind, (0,)))
    r = MODEL.gates[kind]
    assert entanglement_infidelity(ideal, r) == pytest.approx(ent, rel=1e-6)
    assert 1 - avg_gate_fidelity(ideal, r) == pytest.approx(avg, rel=1e-6)


def test_identity_has_unit_fidelity():
    assert avg_gate_fidelity(np.eye(16), np.eye(16)) == pytest.approx(1.0)
    assert entanglement_infidelity(np.eye(4), np.eye(4)) == pytest.approx(0.0)


def test_depolarizing_fidelity():
    p = 0.03
    # F_pro = 1 - p (d^2 - 1)/d^2 for the Pauli-diagonal depolarizing PTM
    assert entanglement_infidelity(np.eye(4), depolarizing_ptm(p)) == pytest.approx(0.75 * p)


# log and generators ---------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 2))
def test_principal_log_matches_scipy(seed, k):
    r = random_channel_ptm(np.random.default_rng(seed), k)
    ours = principal_log(r)
    assert np.allclose(ours, scipy.linalg.logm(r).real, atol=1e-9)
    assert np.allclose(scipy.linalg.expm(ours), r, atol=1e-10)


def test_bundled_generators_round_trip():
    for kind, r in MODEL.gates.items():
        gen = error_generator(r)
        assert np.allclose(scipy.linalg.expm(gen.matrix), r, atol=1e-10)


def test_log_domain_error_for_negative_eigenvalue():
    with pytest.raises(LogDomainError, match="eigenvalue"):
        principal_log(ideal_ptm(Gate.pauli(0, "X")))


def test_log_of_identity_is_zero():
    assert np.allclose(principal_log(np.eye(16)), 0)


# model ----------------------------------------------------------------------

def test_check_ptm_rejects_non_trace_preserving():
    bad = np.eye(4)
    bad[0, 1] = 0.1
    with pytest.raises(NotCPTPError):
        check_ptm(bad)
    with pytest.raises(ValueError):
        check_ptm(np.eye(3))


def test_model_json_round_trip():
    m = MODEL.with_degradation(Degradation("CNOT", {1, 2}, (0.1, 0.2)))
    again = ErrorModel.from_json(m.to_json())
    assert again.degradation == m.degradation
    for k in m.gates:
        assert np.array_equal(again.gates[k], m.gates[k])


def test_model_rejects_unknown_gate_and_bad_shape():
    with pytest.raises(ValueError):
        ErrorModel({"H": np.eye(4)})
    with pytest.raises(ValueError):
        ErrorModel({"CNOT": np.eye(4)})


def test_degradation_saturates_and_matches_unordered_pair():
    d = Degradation("CNOT", {1, 2}, (0.1, 0.2, 0.3))
    assert [d.probability(k) for k in (1, 2, 3, 4, 9)] == [0.1, 0.2, 0.3, 0.3, 0.3]
    assert d.matches(Gate.cnot(2, 1)) and not d.matches(Gate.cnot(0, 1))


def test_layer_ops_frames_are_ideal():
    layer = make_layer([Gate.sx(0)], 1, pre=[Gate.rz(0, 0.3)], post=[Gate.rz(0, -0.2)])
    full = compose_ops(layer_ops(layer, MODEL), 1)
    expect = rz_ptm(-0.2) @ MODEL.gates["SX"] @ rz_ptm(0.3)
    assert np.allclose(full, expect)


def test_degraded_gate_composes_depolarizing_after():
    layer = make_layer([Gate.cnot(1, 2)], 3)
    sched = Degradation("CNOT", {1, 2}, (0.05,))
    m = MODEL.with_degradation(sched)
    got = layer_superop(layer, m, 3, instances={Gate.cnot(1, 2): 1})
    expect = (embed(MODEL.gates["ID"], (0,), 3)
              @ embed(depolarizing_ptm(0.05, 2) @ MODEL.gates["CNOT"], (1, 2), 3))
    assert np.allclose(got, expect)


def test_ideal_model_layers_are_unitary_ptms():
    layer = make_layer([Gate.cnot(0, 1), Gate.sx(2)], 3)
    r = layer_superop(layer, ErrorModel.ideal(), 3)
    assert np.allclose(r @ r.T, np.eye(64), atol=1e-12)
