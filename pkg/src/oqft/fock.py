"""Exact truncated Fock-space oracle.

Conventions used throughout the package: hbar = 1, quadratures
``x = a + a^dagger`` and ``p = -i(a - a^dagger)``, so a coherent amplitude
is ``alpha = (x + i p) / 2`` and the vacuum Q-function has variance 2 in
each quadrature.  ``q_function`` returns a density per unit ``d^2 alpha``;
integrating over ``dx dp`` needs the Jacobian factor 1/4.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, reduce
from typing import Sequence, Union

import numpy as np
from scipy import linalg, signal, sparse
from scipy.special import gammainc

from .errors import TruncationError
from .hamiltonian import PolynomialHamiltonian
from .polynomial import Poly

TAIL_TOL = 1e-8
LEAK_TOL = 1e-6
NORM_TOL = 1e-10
DEFAULT_DIM = 60


@dataclass(frozen=True)
class FockBasis:
    dim: int = DEFAULT_DIM
    n_modes: int = 1

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("Fock cutoff must be at least 2")
        if self.n_modes < 1:
            raise ValueError("need at least one mode")

    @property
    def size(self) -> int:
        return self.dim ** self.n_modes

    def lowering(self, mode: int = 0) -> sparse.csr_matrix:
        a = sparse.diags(np.sqrt(np.arange(1, self.dim)), 1, format="csr")
        return _embed(a, mode, self.dim, self.n_modes)

    def raising(self, mode: int = 0) -> sparse.csr_matrix:
        return self.lowering(mode).T.conj().tocsr()

    def number(self, mode: int = 0) -> sparse.csr_matrix:
        return self.raising(mode) @ self.lowering(mode)

    def padded(self, extra: int) -> FockBasis:
        return FockBasis(self.dim + extra, self.n_modes)


def _embed(op: sparse.spmatrix, mode: int, dim: int, n_modes: int) -> sparse.csr_matrix:
    eye = sparse.identity(dim, format="csr")
    factors = [op if m == mode else eye for m in range(n_modes)]
    return reduce(lambda x, y: sparse.kron(x, y, format="csr"), factors)


def _pad_vector(vec: np.ndarray, basis: FockBasis, extra: int) -> np.ndarray:
    shape = (basis.dim,) * basis.n_modes
    out = np.zeros((basis.dim + extra,) * basis.n_modes, dtype=complex)
    out[tuple(slice(0, basis.dim) for _ in shape)] = vec.reshape(shape)
    return out.ravel()


def _pad_matrix(mat: np.ndarray, basis: FockBasis, extra: int) -> np.ndarray:
    n, d = basis.n_modes, basis.dim
    out = np.zeros((d + extra,) * (2 * n), dtype=complex)
    out[tuple(slice(0, d) for _ in range(2 * n))] = mat.reshape((d,) * (2 * n))
    size = (d + extra) ** n
    return out.reshape(size, size)


@dataclass(frozen=True, eq=False)
class StateVector:
    basis: FockBasis
    amplitudes: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.basis.size,):
            raise ValueError(f"expected {self.basis.size} amplitudes, got {amps.shape}")
        if abs(np.linalg.norm(amps) - 1.0) > NORM_TOL:
            raise ValueError("state vector is not normalized")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def density(self) -> DensityMatrix:
        return DensityMatrix(self.basis, np.outer(self.amplitudes, self.amplitudes.conj()), check_positive=False)

    def fidelity(self, other: StateVector) -> float:
        return float(abs(np.vdot(self.amplitudes, other.amplitudes)) ** 2)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    basis: FockBasis
    matrix: np.ndarray
    check_positive: bool = field(default=True, repr=False)

    def __post_init__(self):
        rho = np.asarray(self.matrix, dtype=complex)
        n = self.basis.size
        if rho.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix, got {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T), initial=0.0) > NORM_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > NORM_TOL:
            raise ValueError("density matrix does not have unit trace")
        if self.check_positive and np.linalg.eigvalsh(rho)[0] < -1e-8:
            raise ValueError("density matrix has a negative eigenvalue")
        rho.setflags(write=False)
        object.__setattr__(self, "matrix", rho)

    @classmethod
    def mixture(cls, states: Sequence[StateVector], weights: Sequence[float]) -> DensityMatrix:
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
            raise ValueError("mixture weights must be a probability vector")
        basis = states[0].basis
        rho = sum(w * np.outer(s.amplitudes, s.amplitudes.conj()) for s, w in zip(states, weights))
        return cls(basis, rho)

    @cached_property
    def factors(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigen-weights and vectors with negligible weights dropped."""
        w, v = np.linalg.eigh(self.matrix)
        keep = w > 1e-15 * max(w[-1], 1e-300)
        return w[keep], v[:, keep]

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))


State = Union[StateVector, DensityMatrix]


def _factors(state: State) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(state, StateVector):
        return np.ones(1), state.amplitudes[:, None]
    return state.factors


@dataclass(frozen=True)
class PhasePoint:
    alphas: np.ndarray
    betas: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))

    def __post_init__(self):
        object.__setattr__(self, "alphas", np.atleast_1d(np.asarray(self.alphas, dtype=complex)))
        object.__setattr__(self, "betas", np.atleast_1d(np.asarray(self.betas, dtype=complex)))

    @classmethod
    def from_quadratures(cls, x, p, betas=()) -> PhasePoint:
        return cls((np.asarray(x) + 1j * np.asarray(p)) / 2, betas)

    @property
    def x(self) -> np.ndarray:
        return 2 * self.alphas.real

    @property
    def p(self) -> np.ndarray:
        return 2 * self.alphas.imag


# -- state construction ------------------------------------------------------

def coherent_amplitudes(alpha, dim: int) -> np.ndarray:
    """Untruncated coherent-state amplitudes <n|alpha> for n < dim.

    ``alpha`` may be an array; the Fock index is appended as the last axis.
    """
    alpha = np.asarray(alpha, dtype=complex)
    out = np.empty((dim,) + alpha.shape, dtype=complex)
    out[0] = np.exp(-0.5 * np.abs(alpha) ** 2)
    for n in range(1, dim):
        out[n] = out[n - 1] * (alpha / np.sqrt(n))
    return np.moveaxis(out, 0, -1)


def _poisson_tail(mean: float, dim: int) -> float:
    # P(N >= dim) for N ~ Poisson(mean)
    return float(gammainc(dim, mean)) if mean > 0 else 0.0


def coherent_state(alpha, basis: FockBasis) -> StateVector:
    alphas = np.atleast_1d(np.asarray(alpha, dtype=complex))
    if alphas.shape != (basis.n_modes,):
        raise ValueError(f"need one amplitude per mode ({basis.n_modes})")
    kept = 1.0
    for a in alphas:
        kept *= 1.0 - _poisson_tail(abs(a) ** 2, basis.dim)
    tail = 1.0 - kept
    if tail >= TAIL_TOL:
        raise TruncationError(f"coherent state |{alphas}> loses tail mass {tail:.3g} at dim={basis.dim}")
    vec = reduce(np.kron, [coherent_amplitudes(a, basis.dim) for a in alphas])
    return StateVector(basis, vec / np.linalg.norm(vec), tail_mass=tail)


def _displaced_squeezed(alpha: complex, r: float, length: int) -> np.ndarray:
    # Fock amplitudes of D(alpha) S(r)|0>, S = exp(r/2 (a^2 - a^dagger^2)), from
    # the annihilator (a - alpha) cosh r + (a^dagger - alpha*) sinh r.
    ch, sh = np.cosh(r), np.sinh(r)
    gamma = alpha * ch + np.conj(alpha) * sh
    c = np.zeros(length, dtype=complex)
    c[0] = 1.0
    prev, cur = 0.0, 1.0 + 0j
    for n in range(length - 1):
        nxt = (gamma * cur - sh * np.sqrt(n) * prev) / (ch * np.sqrt(n + 1))
        c[n + 1] = nxt
        prev, cur = cur, nxt
        scale = abs(cur) + abs(prev)
        if scale > 1e150:
            c[: n + 2] /= scale
            prev, cur = prev / scale, cur / scale
    return c


def quadrature_eigenstate(x_i: float, squeeze_r: float, basis: FockBasis) -> StateVector:
    """Squeezed displaced state approximating the x-quadrature eigenstate |x_i>.

    Mean x equals ``x_i`` and the operator variance of x is ``exp(-2 r)``.
    """
    if basis.n_modes != 1:
        raise ValueError("quadrature eigenstates are single-mode")
    if squeeze_r < 0:
        raise ValueError("squeeze_r must be non-negative")
    if squeeze_r == 0:
        return coherent_state(x_i / 2, basis)
    mean_n = (x_i / 2) ** 2 + np.sinh(squeeze_r) ** 2
    length = int(max(4 * basis.dim, basis.dim + 400, 8 * mean_n + 400))
    c = _displaced_squeezed(x_i / 2, squeeze_r, length)
    probs = np.abs(c) ** 2
    total = probs.sum()
    if probs[-50:].sum() > 1e-14 * total:
        raise TruncationError("padding too short to normalize the squeezed state")
    tail = float(probs[basis.dim:].sum() / total)
    if tail >= TAIL_TOL:
        raise TruncationError(f"squeezed state (x={x_i}, r={squeeze_r}) loses tail mass {tail:.3g} at dim={basis.dim}")
    vec = c[: basis.dim]
    return StateVector(basis, vec / np.linalg.norm(vec), tail_mass=tail)


def superposition(states: Sequence[StateVector], weights: Sequence[float]) -> StateVector:
    """Normalized sum of sqrt(weight) * state (no phase between branches)."""
    vec = sum(np.sqrt(w) * s.amplitudes for s, w in zip(states, weights))
    return StateVector(states[0].basis, vec / np.linalg.norm(vec))


# -- dynamics ------------------------------------------------------------------

def hamiltonian_matrix(H: PolynomialHamiltonian, basis: FockBasis) -> np.ndarray:
    if H.n_modes != basis.n_modes:
        raise ValueError("Hamiltonian and basis disagree on the number of modes")
    out = sparse.csr_matrix((basis.size, basis.size), dtype=complex)
    for raise_p, lower_p, c in H.terms:
        op = sparse.identity(basis.size, dtype=complex, format="csr")
        for m in range(basis.n_modes):
            # normally ordered, so truncated products are exact in the retained space
            if raise_p[m]:
                op = op @ (basis.raising(m) ** raise_p[m])
        for m in range(basis.n_modes):
            if lower_p[m]:
                op = op @ (basis.lowering(m) ** lower_p[m])
        out = out + c * op
    return out.toarray()


def top_level_population(state: State, levels: int = 2) -> float:
    """Probability of finding any mode in its top ``levels`` Fock states."""
    basis = state.basis
    shape = (basis.dim,) * basis.n_modes
    if isinstance(state, StateVector):
        probs = np.abs(state.amplitudes) ** 2
    else:
        probs = np.real(np.diag(state.matrix))
    probs = probs.reshape(shape)
    mask = np.zeros(shape, dtype=bool)
    for m in range(basis.n_modes):
        idx = [slice(None)] * basis.n_modes
        idx[m] = slice(basis.dim - levels, basis.dim)
        mask[tuple(idx)] = True
    return float(probs[mask].sum())


def _check_leak(state: State, t: float) -> None:
    leak = top_level_population(state)
    if leak > LEAK_TOL:
        raise TruncationError(f"population {leak:.3g} in the top two Fock levels at t={t:.4g}")


def _default_steps(t: float) -> int:
    return max(1, int(np.ceil(abs(t) / 0.05)))


def evolve(rho: State, H: PolynomialHamiltonian, t: float, steps: int | None = None) -> State:
    """Evolve under ``d rho/dt = i[rho, H]`` by exact exponentiation.

    The propagator for ``t/steps`` is computed once; ``steps`` sets how often
    the truncation-leakage monitor runs.  Pure states stay pure.
    """
    steps = _default_steps(t) if steps is None else int(steps)
    if steps < 1:
        raise ValueError("steps must be positive")
    if not H.terms or t == 0:
        return rho
    basis = rho.basis
    U = linalg.expm(-1j * hamiltonian_matrix(H, basis) * (t / steps))
    _check_leak(rho, 0.0)
    if isinstance(rho, StateVector):
        vec = rho.amplitudes.copy()
        for k in range(steps):
            vec = U @ vec
            _check_leak(StateVector(basis, vec / np.linalg.norm(vec)), (k + 1) * t / steps)
        return StateVector(basis, vec / np.linalg.norm(vec))
    mat = np.array(rho.matrix)
    for k in range(steps):
        mat = U @ mat @ U.conj().T
        mat = 0.5 * (mat + mat.conj().T)
        out = DensityMatrix(basis, mat, check_positive=False)
        _check_leak(out, (k + 1) * t / steps)
    return out


# -- Q-function ----------------------------------------------------------------

def q_values(state: State, alphas: np.ndarray) -> np.ndarray:
    """Q-function at many points; ``alphas`` has shape (..., n_modes)."""
    basis = state.basis
    alphas = np.asarray(alphas, dtype=complex)
    if alphas.shape[-1] != basis.n_modes:
        raise ValueError("last axis of alphas must index modes")
    lead = alphas.shape[:-1]
    flat = alphas.reshape(-1, basis.n_modes)
    weights, vecs = _factors(state)
    out = np.empty(flat.shape[0])
    chunk = max(1, 2_000_000 // basis.size)
    for start in range(0, flat.shape[0], chunk):
        block = flat[start:start + chunk]
        coh = coherent_amplitudes(block[:, 0], basis.dim)
        for m in range(1, basis.n_modes):
            nxt = coherent_amplitudes(block[:, m], basis.dim)
            coh = (coh[:, :, None] * nxt[:, None, :]).reshape(block.shape[0], -1)
        overlaps = coh.conj() @ vecs
        out[start:start + chunk] = (np.abs(overlaps) ** 2) @ weights
    out /= np.pi ** basis.n_modes
    out[(out < 0) & (out > -1e-12)] = 0.0
    return out.reshape(lead)


def q_function(rho: State, point: PhasePoint) -> float:
    """<alpha|rho|alpha> / pi^M at one phase-space point."""
    if point.alphas.shape != (rho.basis.n_modes,):
        raise ValueError("phase point does not match the number of modes")
    return float(q_values(rho, point.alphas[None, :])[0])


def q_grid(state: State, xs: np.ndarray, ps: np.ndarray) -> np.ndarray:
    """Single-mode Q on the tensor grid ``xs`` x ``ps`` (shape len(xs), len(ps))."""
    X, P = np.meshgrid(xs, ps, indexing="ij")
    return q_values(state, ((X + 1j * P) / 2)[..., None])


def grid_integral(values: np.ndarray, dx: float, dp: float) -> float:
    """Integral over x and p of a single-mode Q grid (d^2 alpha = dx dp / 4)."""
    return float(values.sum() * dx * dp / 4)


def quadrature_density(state: State, xs: np.ndarray, quadrature: str = "x") -> np.ndarray:
    """Operator probability density of x = a + a^dagger (or p) at ``xs``.

    Hermite functions are generated by their three-term recurrence with a
    per-point log scale, so points far outside the bulk underflow gracefully
    instead of poisoning the sum.
    """
    if state.basis.n_modes != 1:
        raise ValueError("quadrature densities are provided for single-mode states")
    if quadrature not in ("x", "p"):
        raise ValueError("quadrature must be 'x' or 'p'")
    weights, vecs = _factors(state)
    if quadrature == "p":
        vecs = vecs * ((-1j) ** np.arange(state.basis.dim))[:, None]
    X = np.asarray(xs, dtype=float).reshape(-1) / np.sqrt(2)
    logscale = -0.5 * X ** 2 - 0.25 * np.log(np.pi)
    prev = np.zeros_like(X)
    cur = np.ones_like(X)
    acc = cur[:, None] * vecs[0][None, :]
    for n in range(1, state.basis.dim):
        prev, cur = cur, np.sqrt(2.0 / n) * X * cur - np.sqrt((n - 1) / n) * prev
        acc += cur[:, None] * vecs[n][None, :]
        big = np.abs(cur) > 1e100
        if big.any():
            f = np.where(big, 1e-100, 1.0)
            prev, cur, acc = prev * f, cur * f, acc * f[:, None]
            logscale = logscale + np.where(big, 100 * np.log(10.0), 0.0)
    amp2 = (np.abs(acc) ** 2) @ weights
    with np.errstate(under="ignore"):
        dens = amp2 * np.exp(2 * logscale) / np.sqrt(2)
    return dens.reshape(np.shape(xs))


def q_marginal(state: State, xs: np.ndarray, quadrature: str = "x") -> np.ndarray:
    """Density of one quadrature under the single-mode Q distribution.

    The Q marginal of a quadrature is its operator density smoothed by the
    unit-variance vacuum Gaussian; the smoothing is done on a fine uniform
    grid and interpolated to ``xs``.
    """
    xs = np.asarray(xs, dtype=float)
    mom = q_moments(state, 2)
    k = (1, 0) if quadrature == "x" else (0, 1)
    mean = mom[k]
    var_q = max(mom[tuple(2 * j for j in k)] - mean ** 2, 1.0)
    std_op = np.sqrt(max(var_q - 1.0, 1e-4))
    step = min(0.05, std_op / 20)
    lo = min(xs.min(), mean - 14 * np.sqrt(var_q)) - 10
    hi = max(xs.max(), mean + 14 * np.sqrt(var_q)) + 10
    fine = np.arange(lo, hi + step, step)
    dens = quadrature_density(state, fine, quadrature)
    half = int(np.ceil(10 / step))
    ker_x = step * np.arange(-half, half + 1)
    kernel = np.exp(-0.5 * ker_x ** 2) / np.sqrt(2 * np.pi) * step
    smooth = signal.fftconvolve(dens, kernel, mode="same")
    return np.clip(np.interp(xs, fine, smooth), 0, None)


# -- Q-moments -----------------------------------------------------------------

class MomentTable(dict):
    """Q-moments keyed by exponent tuples over (x_1, p_1, x_2, p_2, ...)."""

    def __init__(self, n_modes: int, values: dict):
        super().__init__(values)
        self.n_modes = n_modes

    def _unit(self, i: int, k: int = 1) -> tuple[int, ...]:
        e = [0] * (2 * self.n_modes)
        e[i] += k
        return tuple(e)

    def mean(self) -> np.ndarray:
        return np.array([self[self._unit(i)] for i in range(2 * self.n_modes)])

    def cov(self) -> np.ndarray:
        n = 2 * self.n_modes
        mu = self.mean()
        c = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                e = list(self._unit(i))
                e[j] += 1
                c[i, j] = self[tuple(e)] - mu[i] * mu[j]
        return c


def _exponents(nvars: int, order: int):
    if nvars == 0:
        yield ()
        return
    for k in range(order + 1):
        for rest in _exponents(nvars - 1, order - k):
            yield (k,) + rest


def antinormal_expectation(state: State, lower: Sequence[int], raise_: Sequence[int]) -> complex:
    """<prod a^lower prod a^dagger^raise> with all lowering operators to the left."""
    basis = state.basis
    extra = max(sum(raise_), sum(lower), 1)
    big = basis.padded(extra)
    ket = sparse.identity(big.size, dtype=complex, format="csr")
    for m, k in enumerate(raise_):
        if k:
            ket = (big.raising(m) ** k) @ ket
    bra = sparse.identity(big.size, dtype=complex, format="csr")
    for m, k in enumerate(lower):
        if k:
            bra = (big.raising(m) ** k) @ bra
    if isinstance(state, StateVector):
        v = _pad_vector(state.amplitudes, basis, extra)
        return complex(np.vdot(bra @ v, ket @ v))
    rho = _pad_matrix(np.asarray(state.matrix), basis, extra)
    # Tr(A B rho) with A = bra^dagger, B = ket
    return complex(np.trace(bra.conj().T @ (ket @ rho)))


def q_moments(rho: State, order: int = 2) -> MomentTable:
    """All Q-distribution quadrature moments up to ``order`` (at most 4).

    Q-moments of alpha^m alpha*^n are anti-normally ordered operator
    expectations, so no grid is involved.
    """
    if not 0 <= order <= 4:
        raise ValueError("order must be between 0 and 4")
    M = rho.basis.n_modes
    nv = 2 * M
    # complex variables ordered (alpha_1, alpha*_1, alpha_2, alpha*_2, ...)
    images = []
    for m in range(M):
        a = Poly.var(nv, 2 * m)
        ac = Poly.var(nv, 2 * m + 1)
        images += [a + ac, (a - ac) * (-1j)]
    cache: dict[tuple[int, ...], complex] = {}

    def expect(e: tuple[int, ...]) -> complex:
        if e not in cache:
            lower = [e[2 * m] for m in range(M)]
            raise_ = [e[2 * m + 1] for m in range(M)]
            cache[e] = antinormal_expectation(rho, lower, raise_) if any(e) else 1.0
        return cache[e]

    values = {}
    for exps in _exponents(nv, order):
        mono = Poly.monomial(exps).substitute(images)
        val = sum(c * expect(e) for e, c in mono.terms.items())
        values[exps] = float(np.real(val))
    return MomentTable(M, values)


# -- field amplitude -------------------------------------------------------------

def field_at(point: PhasePoint, momenta, energies, volume: float, position) -> complex:
    """Complex scalar field sum_n (2 E_n V)^(-1/2) [e^{i k_n.r} alpha_n + e^{-i k_n.r} beta_n^*]."""
    alphas = point.alphas
    n = alphas.shape[0]
    betas = point.betas if point.betas.size else np.zeros(n, dtype=complex)
    momenta = np.asarray(momenta, dtype=float).reshape(n, -1) if np.ndim(momenta) else np.full((n, 1), float(momenta))
    energies = np.asarray(energies, dtype=float).reshape(-1)
    position = np.atleast_1d(np.asarray(position, dtype=float))
    if betas.shape != (n,) or energies.shape != (n,) or momenta.shape[0] != n:
        raise ValueError("momenta, energies and amplitudes must have one entry per mode")
    if momenta.shape[1] != position.shape[0]:
        raise ValueError("momentum and position dimensions differ")
    if volume <= 0 or np.any(energies <= 0):
        raise ValueError("volume and energies must be positive")
    phase = np.exp(1j * momenta @ position)
    return complex(np.sum((phase * alphas + phase.conj() * betas.conj()) / np.sqrt(2 * energies * volume)))
