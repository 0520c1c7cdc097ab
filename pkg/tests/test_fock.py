import numpy as np
import pytest
from scipy import linalg, stats

from oqft.errors import TruncationError
from oqft.fock import (
    DensityMatrix,
    FockBasis,
    PhasePoint,
    StateVector,
    antinormal_expectation,
    coherent_state,
    evolve,
    field_at,
    grid_integral,
    q_function,
    q_grid,
    q_marginal,
    q_moments,
    quadrature_density,
    quadrature_eigenstate,
    superposition,
)
from oqft.hamiltonian import drive, harmonic, kerr, parametric_amplifier


def dense_ops(dim):
    a = np.diag(np.sqrt(np.arange(1, dim)), 1).astype(complex)
    return a, a.conj().T


def brute_squeezed(x_i, r, dim):
    # D(alpha) S(r)|0> by matrix exponentials on a large space
    a, ad = dense_ops(dim)
    alpha = x_i / 2
    S = linalg.expm(0.5 * r * (a @ a - ad @ ad))
    D = linalg.expm(alpha * ad - np.conj(alpha) * a)
    vac = np.zeros(dim, dtype=complex)
    vac[0] = 1
    return D @ S @ vac


def q_grid_moments(state, half=14.0, step=0.1):
    xs = np.arange(-half, half + step / 2, step)
    Q = q_grid(state, xs, xs)
    X, P = np.meshgrid(xs, xs, indexing="ij")
    w = Q * step * step / 4
    mx, mp = (w * X).sum(), (w * P).sum()
    return w.sum(), np.array([mx, mp]), np.array([
        [(w * X * X).sum() - mx * mx, (w * X * P).sum() - mx * mp],
        [(w * X * P).sum() - mx * mp, (w * P * P).sum() - mp * mp],
    ])


def test_coherent_photon_statistics_are_poisson():
    s = coherent_state(1.5 - 0.5j, FockBasis(40))
    probs = np.abs(s.amplitudes) ** 2
    assert np.allclose(probs, stats.poisson.pmf(np.arange(40), 2.5), atol=1e-12)


def test_coherent_truncation_raises():
    with pytest.raises(TruncationError):
        coherent_state(3.0, FockBasis(5))


def test_squeezed_matches_matrix_exponentials():
    s = quadrature_eigenstate(1.3, 0.8, FockBasis(50))
    ref = brute_squeezed(1.3, 0.8, 200)[:50]
    assert abs(np.vdot(ref / np.linalg.norm(ref), s.amplitudes)) ** 2 == pytest.approx(1, abs=1e-10)


@pytest.mark.parametrize("r", [0.0, 0.5, 1.0, 1.5])
def test_squeezed_q_variances(r):
    m = q_moments(quadrature_eigenstate(0.7, r, FockBasis(200)))
    assert m.mean() == pytest.approx([0.7, 0.0], abs=1e-9)
    assert np.allclose(m.cov(), np.diag([1 + np.exp(-2 * r), 1 + np.exp(2 * r)]), atol=1e-8)


def test_squeezed_truncation_raises():
    with pytest.raises(TruncationError):
        quadrature_eigenstate(3.0, 2.0, FockBasis(64))


def test_vacuum_q_peak_and_normalization():
    vac = coherent_state(0.0, FockBasis(20))
    assert q_function(vac, PhasePoint(0.0)) == pytest.approx(1 / np.pi)
    xs = np.arange(-8, 8.0001, 0.05)
    assert grid_integral(q_grid(vac, xs, xs), 0.05, 0.05) == pytest.approx(1, abs=1e-3)


def test_coherent_q_closed_form():
    alpha = 1.0 + 0.5j
    s = coherent_state(alpha, FockBasis(40))
    for beta in [0, 1, 1 + 0.5j, -0.3 + 2j]:
        assert q_function(s, PhasePoint(beta)) == pytest.approx(np.exp(-abs(alpha - beta) ** 2) / np.pi, abs=1e-12)


def test_coherent_peak_location():
    s = coherent_state(1.0, FockBasis(30))
    xs = np.arange(-6, 6.0001, 0.05)
    Q = q_grid(s, xs, xs)
    i, j = np.unravel_index(np.argmax(Q), Q.shape)
    assert (xs[i], xs[j]) == pytest.approx((2.0, 0.0), abs=1e-9)


@pytest.mark.parametrize(
    "state, half",
    [
        (coherent_state(0.0, FockBasis(30)), 14.0),
        (coherent_state(2.0 * np.exp(0.7j), FockBasis(60)), 18.0),
        (quadrature_eigenstate(0.0, 1.5, FockBasis(200)), 30.0),
        (quadrature_eigenstate(1.0, 1.0, FockBasis(90)), 20.0),
    ],
)
def test_q_moments_match_grid_integrals(state, half):
    total, mean, cov = q_grid_moments(state, half=half, step=0.1)
    m = q_moments(state)
    assert total == pytest.approx(1, abs=1e-6)
    assert np.allclose(m.mean(), mean, atol=1e-6)
    assert np.allclose(m.cov(), cov, atol=1e-5)


def test_fourth_order_q_moment_vacuum():
    # Q of vacuum is N(0, 2) in each quadrature: <x^4> = 3 * 2^2
    m = q_moments(coherent_state(0.0, FockBasis(10)), order=4)
    assert m[(4, 0)] == pytest.approx(12.0)
    assert m[(2, 2)] == pytest.approx(4.0)


def test_antinormal_vacuum():
    vac = coherent_state(0.0, FockBasis(5))
    assert antinormal_expectation(vac, [1], [1]) == pytest.approx(1.0)
    assert antinormal_expectation(vac, [2], [2]) == pytest.approx(2.0)


def test_harmonic_evolution_rotates_coherent_state():
    b = FockBasis(40)
    s = evolve(coherent_state(1.2, b), harmonic(0.9), 1.7)
    ref = coherent_state(1.2 * np.exp(-0.9j * 1.7), b)
    assert s.fidelity(ref) == pytest.approx(1, abs=1e-10)


def test_drive_displaces():
    # H = f a^dag + f* a moves alpha by -i f t
    b = FockBasis(40)
    s = evolve(coherent_state(0.0, b), drive(0.5), 2.0)
    assert q_moments(s).mean() == pytest.approx([0.0, -2.0], abs=1e-9)


def test_amplifier_evolution_squeezes():
    s = evolve(coherent_state(0.0, FockBasis(80)), parametric_amplifier(1.0), 0.8)
    g = np.exp(0.8)
    assert np.allclose(q_moments(s).cov(), np.diag([1 + g * g, 1 + 1 / g ** 2]), atol=1e-8)


def test_density_matrix_evolution_matches_pure():
    b = FockBasis(30)
    psi = quadrature_eigenstate(0.5, 0.3, b)
    H = kerr(0.2) + harmonic(1.0)
    pure = evolve(psi, H, 0.6)
    mixed = evolve(psi.density(), H, 0.6)
    assert np.allclose(mixed.matrix, np.outer(pure.amplitudes, pure.amplitudes.conj()), atol=1e-10)


def test_leakage_detected():
    with pytest.raises(TruncationError):
        evolve(coherent_state(0.0, FockBasis(12)), parametric_amplifier(1.0), 2.0)


def test_density_matrix_validation():
    b = FockBasis(3)
    with pytest.raises(ValueError):
        DensityMatrix(b, np.diag([0.5, 0.6, 0.0]))
    with pytest.raises(ValueError):
        DensityMatrix(b, np.diag([1.5, -0.5, 0.0]))
    with pytest.raises(ValueError):
        StateVector(b, np.array([1.0, 1.0, 0.0]))


def test_mixture_weights_validated():
    b = FockBasis(10)
    s = [coherent_state(0.5, b), coherent_state(-0.5, b)]
    with pytest.raises(ValueError):
        DensityMatrix.mixture(s, [0.7, 0.7])
    rho = DensityMatrix.mixture(s, [0.25, 0.75])
    assert rho.purity() < 1


@pytest.mark.parametrize("r", [0.0, 0.8, 1.5])
def test_quadrature_density_is_gaussian(r):
    s = quadrature_eigenstate(1.0, r, FockBasis(400))
    xs = np.linspace(-3, 5, 41)
    ref = stats.norm.pdf(xs, 1.0, np.exp(-r))
    assert np.allclose(quadrature_density(s, xs, "x"), ref, atol=1e-8)
    assert np.allclose(quadrature_density(s, xs, "p"), stats.norm.pdf(xs, 0.0, np.exp(r)), atol=1e-8)


def test_quadrature_density_far_from_origin():
    # underflowing Hermite prefactors must not zero out a displaced state
    s = coherent_state(30.0, FockBasis(1300))
    xs = np.array([59.0, 60.0, 61.0])
    assert np.allclose(quadrature_density(s, xs), stats.norm.pdf(xs, 60.0, 1.0), rtol=1e-7)


@pytest.mark.parametrize("quad", ["x", "p"])
def test_q_marginal_matches_grid_integration(quad):
    b = FockBasis(200)
    cat = superposition([quadrature_eigenstate(-1, 1.5, b), quadrature_eigenstate(1, 1.5, b)], [0.5, 0.5])
    xs = np.linspace(-8, 8, 65)
    ps = np.arange(-30, 30.0001, 0.1)
    grid = q_grid(cat, xs, ps) if quad == "x" else q_grid(cat, ps, xs).T
    assert np.allclose(q_marginal(cat, xs, quad), grid.sum(axis=1) * 0.1 / 4, atol=1e-4)


def test_field_single_mode():
    pt = PhasePoint([1 + 1j], [0.5j])
    val = field_at(pt, [[2.0]], [3.0], 4.0, [0.25])
    phase = np.exp(0.5j)
    assert val == pytest.approx((phase * (1 + 1j) + np.conj(phase) * np.conj(0.5j)) / np.sqrt(24))


def test_phase_point_quadratures():
    pt = PhasePoint.from_quadratures([2.0], [-1.0])
    assert pt.alphas[0] == pytest.approx(1 - 0.5j)
    assert pt.x[0] == pytest.approx(2.0) and pt.p[0] == pytest.approx(-1.0)


def test_two_mode_moments():
    s = coherent_state([0.5, -1j], FockBasis(15, 2))
    m = q_moments(s)
    assert np.allclose(m.mean(), [1.0, 0.0, 0.0, -2.0], atol=1e-9)
    assert np.allclose(m.cov(), 2 * np.eye(4), atol=1e-8)
