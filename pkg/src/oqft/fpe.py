"""Generalized Fokker-Planck operator for the Q-function of a Hamiltonian.

The von Neumann generator ``-i(H rho - rho H)`` is mapped term by term onto
phase space with the Q-function correspondences

    a rho      -> (alpha + d/d alpha*) Q        rho a^dagger -> (alpha* + d/d alpha) Q
    a^dagger rho -> alpha* Q                    rho a        -> alpha Q

(left products compose in order, right products in reverse).  The result is
rewritten with all derivatives on the left, moved to real quadratures and
read off as drift and diffusion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from math import comb, prod
from typing import Callable

import numpy as np

from .errors import OrderError, UnsupportedDiffusion
from .hamiltonian import PolynomialHamiltonian
from .polynomial import Exponent, Poly

MAX_DEGREE = 4
IMAG_TOL = 1e-12


def coordinate_names(n_modes: int) -> list[str]:
    if n_modes == 1:
        return ["x", "p"]
    return [f"{q}{m + 1}" for m in range(n_modes) for q in ("x", "p")]


@dataclass(frozen=True, eq=False)
class FpeSpec:
    """Drift vector, diffusion matrix and derivative order on (x_1, p_1, ...)."""

    n_modes: int
    drift: tuple[Poly, ...]
    diffusion: tuple[tuple[Poly, ...], ...]
    max_derivative_order: int

    @property
    def n_coords(self) -> int:
        return 2 * self.n_modes

    @property
    def coordinates(self) -> list[str]:
        return coordinate_names(self.n_modes)

    def diffusion_trace(self) -> Poly:
        out = Poly.zero(self.n_coords)
        for i in range(self.n_coords):
            out = out + self.diffusion[i][i]
        return out

    def is_constant_diffusion(self) -> bool:
        return all(d.is_constant() for row in self.diffusion for d in row)

    def diffusion_matrix(self) -> np.ndarray:
        if not self.is_constant_diffusion():
            raise UnsupportedDiffusion("diffusion depends on the phase-space point")
        return np.array([[d.constant_term().real for d in row] for row in self.diffusion])

    def is_linear_drift(self) -> bool:
        return all(a.degree <= 1 for a in self.drift)

    def drift_linear_part(self) -> tuple[np.ndarray, np.ndarray]:
        """(M, b) with drift = M @ phi + b; only valid for linear drift."""
        if not self.is_linear_drift():
            raise ValueError("drift is nonlinear")
        n = self.n_coords
        M = np.zeros((n, n))
        b = np.zeros(n)
        for i, a in enumerate(self.drift):
            for e, c in a.terms.items():
                if sum(e) == 0:
                    b[i] = c.real
                else:
                    M[i, e.index(1)] = c.real
        return M, b

    def drift_jacobian(self) -> list[list[Poly]]:
        return [[a.diff(j) for j in range(self.n_coords)] for a in self.drift]

    def __add__(self, other: FpeSpec) -> FpeSpec:
        if other.n_modes != self.n_modes:
            raise ValueError("mode counts differ")
        return FpeSpec(
            self.n_modes,
            tuple(a + b for a, b in zip(self.drift, other.drift)),
            tuple(tuple(a + b for a, b in zip(r1, r2)) for r1, r2 in zip(self.diffusion, other.diffusion)),
            max(self.max_derivative_order, other.max_derivative_order),
        )

    def allclose(self, other: FpeSpec, atol: float = 1e-12) -> bool:
        polys = list(zip(self.drift, other.drift))
        polys += [(a, b) for r1, r2 in zip(self.diffusion, other.diffusion) for a, b in zip(r1, r2)]
        return all((a - b).chop(atol).is_zero() for a, b in polys)

    def to_json(self) -> dict:
        return {
            "coordinates": self.coordinates,
            "drift": [a.to_json() for a in self.drift],
            "diffusion": [[d.to_json() for d in row] for row in self.diffusion],
            "max_derivative_order": self.max_derivative_order,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, doc: dict) -> FpeSpec:
        n = len(doc["coordinates"])
        return cls(
            n // 2,
            tuple(Poly.from_json(n, rows) for rows in doc["drift"]),
            tuple(tuple(Poly.from_json(n, rows) for rows in row) for row in doc["diffusion"]),
            int(doc["max_derivative_order"]),
        )


# Operators on Q are dicts {derivative multi-index: coefficient polynomial}.
# Complex variables are ordered (alpha_1, alpha*_1, alpha_2, alpha*_2, ...).
Operator = dict[Exponent, Poly]


def _add_term(op: Operator, deriv: Exponent, poly: Poly) -> None:
    op[deriv] = op[deriv] + poly if deriv in op else poly


def _term_operators(raise_p, lower_p, coef: complex, M: int) -> tuple[Operator, Operator]:
    """Derivative-right phase-space forms of term*rho and rho*term."""
    nv = 2 * M
    left: Operator = {}
    right: Operator = {}
    # term rho = a^dag^m a^n rho -> alpha*^m (alpha + d_alpha*)^n
    for js in product(*(range(n + 1) for n in lower_p)):
        e = [0] * nv
        d = [0] * nv
        c = coef
        for k in range(M):
            e[2 * k] = lower_p[k] - js[k]
            e[2 * k + 1] = raise_p[k]
            d[2 * k + 1] = js[k]
            c *= comb(lower_p[k], js[k])
        _add_term(left, tuple(d), Poly.monomial(e, c))
    # rho term = rho a^dag^m a^n -> alpha^n (alpha* + d_alpha)^m
    for js in product(*(range(m + 1) for m in raise_p)):
        e = [0] * nv
        d = [0] * nv
        c = coef
        for k in range(M):
            e[2 * k] = lower_p[k]
            e[2 * k + 1] = raise_p[k] - js[k]
            d[2 * k] = js[k]
            c *= comb(raise_p[k], js[k])
        _add_term(right, tuple(d), Poly.monomial(e, c))
    return left, right


def _below(K: Exponent):
    return product(*(range(k + 1) for k in K))


def to_divergence_form(op: Operator) -> Operator:
    """Rewrite sum_K f_K d^K Q as sum_K d^K (g_K Q).

    From d^K' (g .) = sum_{J<=K'} C(K',J) (d^{K'-J} g) d^J, processing orders
    from the top down gives g_J = f_J - sum_{K'>J} C(K',J) d^{K'-J} g_{K'}.
    """
    keys = set()
    for K in op:
        keys.update(_below(K))
    out: Operator = {}
    for J in sorted(keys, key=lambda k: -sum(k)):
        nv = len(J)
        g = op.get(J, Poly.zero(nv))
        for K, gK in out.items():
            if K != J and all(k >= j for k, j in zip(K, J)):
                diff = tuple(k - j for k, j in zip(K, J))
                g = g - gK.diff_multi(diff) * prod(comb(k, j) for k, j in zip(K, J))
        if not g.is_zero():
            out[J] = g
    return out


def _complex_to_real(op: Operator, M: int) -> Operator:
    nv = 2 * M
    # alpha = (x + i p)/2, alpha* = (x - i p)/2 ; d_alpha = d_x - i d_p, d_alpha* = d_x + i d_p
    images = []
    dimages = []
    for k in range(M):
        x, p = Poly.var(nv, 2 * k), Poly.var(nv, 2 * k + 1)
        images += [(x + p * 1j) * 0.5, (x - p * 1j) * 0.5]
        dimages += [x - p * 1j, x + p * 1j]
    out: Operator = {}
    for K, g in op.items():
        g_real = g.substitute(images)
        dpoly = Poly.monomial(K).substitute(dimages)
        for J, c in dpoly.terms.items():
            _add_term(out, J, g_real * c)
    return {J: g for J, g in out.items() if not g.is_zero()}


def generator(H: PolynomialHamiltonian) -> Operator:
    """The full phase-space generator in divergence form on real coordinates."""
    M = H.n_modes
    gen: Operator = {}
    for raise_p, lower_p, c in H.terms:
        left, right = _term_operators(raise_p, lower_p, c, M)
        for K, poly in left.items():
            _add_term(gen, K, poly * (-1j))
        for K, poly in right.items():
            _add_term(gen, K, poly * 1j)
    gen = {K: g for K, g in gen.items() if not g.is_zero()}
    return _complex_to_real(to_divergence_form(gen), M)


def derive_fpe(H: PolynomialHamiltonian) -> FpeSpec:
    degrees = H.term_degrees()
    if any(d > MAX_DEGREE for d in degrees):
        raise OrderError(
            f"Hamiltonian degree {max(degrees)} exceeds {MAX_DEGREE}; the phase-space equation "
            "acquires third or higher derivatives and has no trajectory interpretation"
        )
    M = H.n_modes
    n = 2 * M
    gen = generator(H)
    scale = max((abs(c) for *_, c in H.terms), default=1.0)
    real_gen: Operator = {}
    for J, g in gen.items():
        if g.imag.chop(IMAG_TOL * scale).terms:
            raise ArithmeticError(f"non-real generator coefficient at derivative order {J}")
        real_gen[J] = g.real
    order = max((sum(J) for J in real_gen), default=0)
    if order > 2:
        raise OrderError(
            f"Hamiltonian generates derivatives of order {order} (single-sided powers above 2); "
            "no probabilistic trajectory interpretation"
        )
    zero = tuple([0] * n)
    if zero in real_gen and real_gen[zero].chop(IMAG_TOL * scale).terms:
        raise ArithmeticError("generator does not conserve probability")

    def unit(*idx) -> Exponent:
        e = [0] * n
        for i in idx:
            e[i] += 1
        return tuple(e)

    drift = tuple(-real_gen.get(unit(i), Poly.zero(n)) for i in range(n))
    diffusion = []
    for i in range(n):
        row = []
        for j in range(n):
            h = real_gen.get(unit(i, j), Poly.zero(n))
            row.append(h * 2 if i == j else h)
        diffusion.append(tuple(row))
    return FpeSpec(M, drift, tuple(diffusion), order)


@dataclass(frozen=True, eq=False)
class QuadratureSplit:
    """Assignment of diffusion eigen-coordinates to forward or backward propagation.

    ``basis`` columns are the eigenvectors; eigen-coordinates are
    ``y = basis.T @ phi``.
    """

    forward_coords: tuple[int, ...]
    backward_coords: tuple[int, ...]
    eigenvalues: np.ndarray
    basis: np.ndarray
    degenerate: bool = False
    noise_amplitude: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(self.eigenvalues)
        if sorted(self.forward_coords + self.backward_coords) != list(range(n)):
            raise ValueError("forward and backward sets must partition the coordinates")
        object.__setattr__(self, "noise_amplitude", np.sqrt(np.abs(np.asarray(self.eigenvalues, dtype=float))))

    @property
    def n_coords(self) -> int:
        return len(self.eigenvalues)

    @property
    def is_axis_aligned(self) -> bool:
        return bool(np.array_equal(self.basis, np.eye(self.n_coords)))

    def to_eigen(self, phi: np.ndarray) -> np.ndarray:
        return np.array(phi, dtype=float) if self.is_axis_aligned else phi @ self.basis

    def from_eigen(self, y: np.ndarray) -> np.ndarray:
        return np.array(y, dtype=float) if self.is_axis_aligned else y @ self.basis.T

    def to_json(self) -> dict:
        return {
            "forward_coords": list(self.forward_coords),
            "backward_coords": list(self.backward_coords),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "noise_amplitude": [float(v) for v in self.noise_amplitude],
            "basis": np.asarray(self.basis).tolist(),
            "degenerate": self.degenerate,
        }


def split_quadratures(spec: FpeSpec, tol: float = 1e-12) -> QuadratureSplit:
    D = spec.diffusion_matrix()
    n = D.shape[0]
    offdiag = D - np.diag(np.diag(D))
    if np.all(np.abs(offdiag) <= tol):
        evals = np.diag(D).copy()
        vecs = np.eye(n)
    else:
        evals, vecs = np.linalg.eigh(D)
        # fix the sign of each eigenvector so its largest component is positive
        for k in range(n):
            j = np.argmax(np.abs(vecs[:, k]))
            if vecs[j, k] < 0:
                vecs[:, k] *= -1
    evals[np.abs(evals) <= tol] = 0.0
    degenerate = any(abs(evals[i] - evals[j]) <= tol for i in range(n) for j in range(i + 1, n))
    forward = tuple(i for i in range(n) if evals[i] >= 0)
    backward = tuple(i for i in range(n) if evals[i] < 0)
    return QuadratureSplit(forward, backward, evals, vecs, degenerate)


def drift_function(spec: FpeSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized drift on original coordinates, points shaped (n, n_coords).

    Linear drifts are summed column by column in a fixed order so results do
    not depend on the batch size.
    """
    n = spec.n_coords
    if spec.is_linear_drift():
        M, b = spec.drift_linear_part()
        return linear_evaluator(M, b)

    polys = spec.drift

    def general(phi: np.ndarray) -> np.ndarray:
        return np.stack([a(phi).real for a in polys], axis=-1)

    return general


def linear_evaluator(M: np.ndarray, b: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """phi -> M @ phi + b evaluated column by column in a fixed order."""
    n = M.shape[0]
    rows = [[(j, float(M[i, j])) for j in range(n) if M[i, j] != 0] for i in range(n)]
    offsets = [float(v) for v in b]

    def evaluate(phi: np.ndarray) -> np.ndarray:
        out = np.zeros(phi.shape)
        for i, row in enumerate(rows):
            col = out[..., i]
            for j, m in row:
                col += m * phi[..., j]
            if offsets[i]:
                col += offsets[i]
        return out

    return evaluate
