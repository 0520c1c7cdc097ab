import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from oqft import hamiltonian as ham
from oqft.errors import IncompatibleHistories
from oqft.fock import FockBasis, StateVector, coherent_state, hamiltonian_matrix
from oqft.histories import (
    HistorySpec,
    balanced_rotation_family,
    check_projector_set,
    class_operator,
    coarse_grain,
    decoherence_functional,
    decoherence_matrix,
    fock_projectors,
    full_family,
    is_consistent,
    merge_time,
    propagator,
)

B3 = FockBasis(3)
P3 = fock_projectors(B3)
IDENTITY = (np.eye(3),)


def random_state(seed, n=3):
    v = np.random.default_rng(seed).normal(size=(n, 2)) @ np.array([1, 1j])
    return StateVector(FockBasis(n), v / np.linalg.norm(v))


def test_single_time_is_projected_propagator():
    H = ham.harmonic(0.7) + ham.drive(0.3)
    spec = HistorySpec((0.9,), (P3,), H, (1,), B3)
    U = linalg.expm(-0.9j * hamiltonian_matrix(H, B3))
    assert np.allclose(class_operator(spec), P3[1] @ U)


def test_identity_projectors_give_propagator():
    H = ham.kerr(0.4) + ham.drive(0.2j)
    spec = HistorySpec((0.5, 1.2, 2.0), (IDENTITY,) * 3, H, (0, 0, 0), B3)
    assert np.allclose(class_operator(spec), propagator(H, B3, 2.0))


def test_two_time_hand_computation():
    # H = (pi/4) sigma_x on two levels: each unit interval is (1 - i sigma_x)/sqrt(2)
    family, psi = balanced_rotation_family()
    vecs = {h.selection: class_operator(h) @ psi.amplitudes for h in family}
    assert np.allclose(vecs[(0, 0)], [0.5, 0])
    assert np.allclose(vecs[(0, 1)], [0, -0.5j])
    assert np.allclose(vecs[(1, 0)], [-0.5, 0])
    assert np.allclose(vecs[(1, 1)], [0, -0.5j])
    d = decoherence_functional(family[0], family[2], psi)
    assert d == pytest.approx(-0.25)


def test_fine_family_inconsistent_coarse_family_consistent():
    family, psi = balanced_rotation_family()
    fine = is_consistent(family, psi)
    assert not fine.consistent and fine.probabilities is None
    assert fine.max_off_diagonal == pytest.approx(0.25)
    ops, keys = merge_time(family, 0)
    coarse = is_consistent(ops, psi, labels=keys)
    assert coarse.consistent
    assert keys == [(0,), (1,)]
    assert np.allclose(coarse.probabilities, [0, 1])


def test_trivial_family_consistent():
    H = ham.kerr(0.3) + ham.drive(0.5)
    base = HistorySpec((1.0,), (IDENTITY,), H, (0,), B3)
    rep = is_consistent([base], random_state(0))
    assert rep.consistent and rep.probabilities == pytest.approx([1.0])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 2.0), st.floats(0.1, 2.0))
def test_decoherence_matrix_hermitian_and_normalized(seed, t1, dt):
    H = ham.harmonic(0.4) + ham.drive(0.3 - 0.2j) + ham.kerr(0.1)
    base = HistorySpec((t1, t1 + dt), (P3, P3), H, (0, 0), B3)
    D = decoherence_matrix([class_operator(h) for h in full_family(base)], random_state(seed))
    assert np.allclose(D, D.conj().T, atol=1e-12)
    assert np.trace(D) == pytest.approx(1, abs=1e-12)
    assert np.all(np.real(np.diag(D)) >= -1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 2 * np.pi), st.integers(0, 1000))
def test_global_phase_leaves_functional_unchanged(theta, seed):
    family, _ = balanced_rotation_family(t1=0.7, t2=1.9)
    psi = random_state(seed, 2)
    ops = [class_operator(h) for h in family]
    a = decoherence_matrix(ops, psi)
    b = decoherence_matrix([np.exp(1j * theta) * C for C in ops], psi)
    assert np.allclose(a, b, atol=1e-12)


def test_commuting_dynamics_are_consistent():
    # occupation projectors commute with a number-conserving Hamiltonian
    H = ham.harmonic(1.0) + ham.kerr(0.3)
    base = HistorySpec((0.4, 1.1, 2.5), (P3, P3, P3), H, (0, 0, 0), B3)
    psi = random_state(3)
    rep = is_consistent(full_family(base), psi)
    assert rep.consistent
    assert rep.probability_sum == pytest.approx(1)
    assert np.allclose(np.sort(rep.probabilities)[-3:], np.sort(np.abs(psi.amplitudes) ** 2))


def test_coarse_grain_sums_class_operators():
    family, psi = balanced_rotation_family()
    ops = coarse_grain(family, [[0, 1, 2, 3]])
    assert np.allclose(ops[0], propagator(family[0].hamiltonian, family[0].basis, 2.0))
    with pytest.raises(ValueError):
        coarse_grain(family, [[0, 1], [1, 2, 3]])


def test_incompatible_histories_rejected():
    H = ham.harmonic(1.0)
    a = HistorySpec((1.0,), (P3,), H, (0,), B3)
    b = HistorySpec((2.0,), (P3,), H, (0,), B3)
    c = HistorySpec((1.0,), (P3,), ham.harmonic(2.0), (0,), B3)
    psi = random_state(1)
    for other in (b, c):
        with pytest.raises(IncompatibleHistories):
            decoherence_functional(a, other, psi)
        with pytest.raises(IncompatibleHistories):
            is_consistent([a, other], psi)
    with pytest.raises(IncompatibleHistories):
        decoherence_functional(a, a, coherent_state(0.0, FockBasis(5)))


def test_projector_validation():
    with pytest.raises(ValueError):
        check_projector_set([P3[0], P3[1]], 3)  # incomplete
    with pytest.raises(ValueError):
        check_projector_set([0.5 * np.eye(3), 0.5 * np.eye(3)], 3)  # not idempotent
    with pytest.raises(ValueError):
        check_projector_set([P3[0] + P3[1], P3[1] + P3[2]], 3)
    check_projector_set(fock_projectors(B3, [[0], [1, 2]]), 3)


def test_spec_validation():
    H = ham.harmonic(1.0)
    with pytest.raises(ValueError):
        HistorySpec((2.0, 1.0), (P3, P3), H, (0, 0), B3)
    with pytest.raises(ValueError):
        HistorySpec((1.0,), (P3,), H, (5,), B3)
    with pytest.raises(ValueError):
        HistorySpec((1.0,), (P3,), ham.beam_splitter(1.0), (0,), B3)


def test_json_roundtrip():
    family, psi = balanced_rotation_family()
    h = family[1]
    back = HistorySpec.from_json(h.to_json())
    assert back.compatible_with(h) and back.selection == h.selection
    assert np.allclose(class_operator(back), class_operator(h))
