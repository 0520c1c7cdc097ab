import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oqft import hamiltonian as ham
from oqft.fock import FockBasis, hamiltonian_matrix
from oqft.hamiltonian import PolynomialHamiltonian, normal_order
from oqft.polynomial import Poly, binomial_expand


def dense_ladder(dim):
    a = np.diag(np.sqrt(np.arange(1, dim)), 1).astype(complex)
    return a, a.conj().T


def word_matrix(word, dim):
    a, ad = dense_ladder(dim)
    out = np.eye(dim, dtype=complex)
    for _, is_raise in word:
        out = out @ (ad if is_raise else a)
    return out


def ordered_matrix(terms, dim):
    a, ad = dense_ladder(dim)
    out = np.zeros((dim, dim), dtype=complex)
    for (r, l), c in terms.items():
        out += c * np.linalg.matrix_power(ad, r[0]) @ np.linalg.matrix_power(a, l[0])
    return out


def test_commutator():
    assert normal_order([(0, False), (0, True)], 1) == {((1,), (1,)): 1, ((0,), (0,)): 1}


def test_distinct_modes_commute():
    assert normal_order([(0, False), (1, True)], 2) == {((0, 1), (1, 0)): 1}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=6))
def test_normal_order_matches_matrices(raises):
    # compare in a basis large enough that truncation never touches the low block
    word = [(0, r) for r in raises]
    dim, keep = 16, 8
    lhs = word_matrix(word, dim)[:keep, :keep]
    rhs = ordered_matrix(normal_order(word, 1), dim)[:keep, :keep]
    assert np.allclose(lhs, rhs)


def test_non_hermitian_rejected():
    with pytest.raises(ValueError):
        PolynomialHamiltonian(1, (((2,), (0,), 1.0),))


def test_from_words_hermitian_combination():
    # x^2 = (a + a^dag)^2 = a^2 + a^dag^2 + 2 a^dag a + 1
    words = [(1.0, [(0, i), (0, j)]) for i in (False, True) for j in (False, True)]
    H = PolynomialHamiltonian.from_words(1, words)
    assert H.as_dict() == {((2,), (0,)): 1, ((0,), (2,)): 1, ((1,), (1,)): 2, ((0,), (0,)): 1}


def test_builders_are_hermitian_matrices():
    b1, b2 = FockBasis(6), FockBasis(4, 2)
    singles = [ham.harmonic(0.7), ham.parametric_amplifier(0.3), ham.kerr(0.2), ham.drive(0.4 - 0.1j)]
    doubles = [ham.beam_splitter(0.5j), ham.two_mode_squeezer(0.2), ham.cross_kerr(0.1)]
    for H in singles:
        M = hamiltonian_matrix(H, b1)
        assert np.allclose(M, M.conj().T)
    for H in doubles:
        M = hamiltonian_matrix(H, b2)
        assert np.allclose(M, M.conj().T)


def test_degree_and_json_roundtrip():
    H = ham.kerr(0.3) + ham.drive(1j)
    assert H.degree == 4
    assert PolynomialHamiltonian.from_json(H.to_json()).as_dict() == H.as_dict()


def test_amplifier_matrix_elements():
    M = hamiltonian_matrix(ham.parametric_amplifier(2.0), FockBasis(4))
    # <2| i (a^dag^2 - a^2) |0> = i sqrt(2)
    assert M[2, 0] == pytest.approx(1j * np.sqrt(2))
    assert M[0, 2] == pytest.approx(-1j * np.sqrt(2))


# -- polynomial ring ----------------------------------------------------------------

coef = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False)
polys = st.dictionaries(st.tuples(st.integers(0, 3), st.integers(0, 3)), coef, max_size=5).map(lambda d: Poly(2, d))
points = st.tuples(st.floats(-2, 2), st.floats(-2, 2)).map(lambda t: np.array([t]))


@settings(max_examples=60, deadline=None)
@given(polys, polys, points)
def test_ring_ops_agree_with_evaluation(p, q, pt):
    assert np.allclose((p * q)(pt), p(pt) * q(pt))
    assert np.allclose((p + q)(pt), p(pt) + q(pt))
    assert np.allclose((p - q)(pt), p(pt) - q(pt))


@settings(max_examples=40, deadline=None)
@given(polys, points)
def test_diff_matches_finite_difference(p, pt):
    h = 1e-6
    e = np.array([[h, 0.0]])
    fd = (p(pt + e) - p(pt - e)) / (2 * h)
    assert np.allclose(p.diff(0)(pt), fd, atol=1e-5 * (1 + p.max_abs_coef()))


def test_binomial_expand():
    x, y = Poly.var(2, 0), Poly.var(2, 1)
    assert binomial_expand(2, 0, 1, 3, 2, -1) == (x * 2 - y) ** 3


def test_substitute_and_json():
    x, y = Poly.var(2, 0), Poly.var(2, 1)
    p = x * x * 3 + y * 1j
    assert p.substitute([y, x]) == y * y * 3 + x * 1j
    assert Poly.from_json(2, p.to_json()) == p
