"""Normally ordered polynomial Hamiltonians in bosonic ladder operators.

A term is stored as ``(raise_powers, lower_powers, coef)`` meaning
``coef * prod_m (a_m^dagger)^raise[m] * prod_m a_m^lower[m]``.  Arbitrary
operator products are brought to this form by :func:`normal_order`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# A ladder operator in a word: (mode, is_raising)
Ladder = tuple[int, bool]
TermKey = tuple[tuple[int, ...], tuple[int, ...]]

HERMITIAN_TOL = 1e-12


def normal_order(word: Sequence[Ladder], n_modes: int, coef: complex = 1.0) -> dict[TermKey, complex]:
    """Normally order a product of ladder operators by commutator reduction.

    Uses ``a_m a_m^dagger = a_m^dagger a_m + 1`` and commutation of distinct
    modes until every raising operator stands left of every lowering one.
    """
    for mode, _ in word:
        if not 0 <= mode < n_modes:
            raise ValueError(f"mode index {mode} out of range for {n_modes} modes")
    out: dict[TermKey, complex] = {}
    stack: list[tuple[tuple[Ladder, ...], complex]] = [(tuple(word), coef)]
    while stack:
        w, c = stack.pop()
        for i in range(len(w) - 1):
            (m1, r1), (m2, r2) = w[i], w[i + 1]
            if not r1 and r2:
                swapped = w[:i] + (w[i + 1], w[i]) + w[i + 2:]
                stack.append((swapped, c))
                if m1 == m2:
                    stack.append((w[:i] + w[i + 2:], c))
                break
        else:
            raise_p = [0] * n_modes
            lower_p = [0] * n_modes
            for m, r in w:
                if r:
                    raise_p[m] += 1
                else:
                    lower_p[m] += 1
            key = (tuple(raise_p), tuple(lower_p))
            out[key] = out.get(key, 0) + c
    return {k: v for k, v in out.items() if v != 0}


@dataclass(frozen=True)
class PolynomialHamiltonian:
    """Hermitian polynomial in ladder operators with hbar = 1."""

    n_modes: int
    terms: tuple[tuple[tuple[int, ...], tuple[int, ...], complex], ...]
    hbar: float = field(default=1.0, init=False)

    def __post_init__(self):
        merged: dict[TermKey, complex] = {}
        for raise_p, lower_p, c in self.terms:
            raise_p, lower_p = tuple(int(k) for k in raise_p), tuple(int(k) for k in lower_p)
            if len(raise_p) != self.n_modes or len(lower_p) != self.n_modes:
                raise ValueError("term powers must have one entry per mode")
            if min(raise_p + lower_p, default=0) < 0:
                raise ValueError("negative ladder power")
            merged[(raise_p, lower_p)] = merged.get((raise_p, lower_p), 0) + complex(c)
        terms = tuple(sorted((r, l, c) for (r, l), c in merged.items() if c != 0))
        object.__setattr__(self, "terms", terms)
        self._check_hermitian()

    def _check_hermitian(self) -> None:
        table = self.as_dict()
        for (r, l), c in table.items():
            partner = table.get((l, r), 0)
            if abs(c - np.conj(partner)) > HERMITIAN_TOL * max(1.0, abs(c)):
                raise ValueError(f"Hamiltonian is not Hermitian: term {r},{l} has no conjugate partner")

    # -- construction -------------------------------------------------------
    @classmethod
    def from_words(cls, n_modes: int, words: Iterable[tuple[complex, Sequence[Ladder]]]) -> PolynomialHamiltonian:
        """Build from arbitrary (not necessarily ordered) operator products."""
        total: dict[TermKey, complex] = {}
        for coef, word in words:
            for key, c in normal_order(word, n_modes, coef).items():
                total[key] = total.get(key, 0) + c
        return cls(n_modes, tuple((r, l, c) for (r, l), c in total.items()))

    @classmethod
    def zero(cls, n_modes: int = 1) -> PolynomialHamiltonian:
        return cls(n_modes, ())

    def __add__(self, other: PolynomialHamiltonian) -> PolynomialHamiltonian:
        if other.n_modes != self.n_modes:
            raise ValueError("mode counts differ")
        return PolynomialHamiltonian(self.n_modes, self.terms + other.terms)

    def scaled(self, factor: float) -> PolynomialHamiltonian:
        return PolynomialHamiltonian(self.n_modes, tuple((r, l, c * factor) for r, l, c in self.terms))

    # -- inspection ---------------------------------------------------------
    def as_dict(self) -> dict[TermKey, complex]:
        return {(r, l): c for r, l, c in self.terms}

    def term_degrees(self) -> list[int]:
        return [sum(r) + sum(l) for r, l, _ in self.terms]

    @property
    def degree(self) -> int:
        return max(self.term_degrees(), default=0)

    def to_json(self) -> dict:
        return {
            "n_modes": self.n_modes,
            "terms": [
                {"raise": list(r), "lower": list(l), "coef": [c.real, c.imag]} for r, l, c in self.terms
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> PolynomialHamiltonian:
        return cls(
            int(doc["n_modes"]),
            tuple((t["raise"], t["lower"], complex(*t["coef"])) for t in doc["terms"]),
        )


def _unit(n_modes: int, mode: int, power: int) -> tuple[int, ...]:
    p = [0] * n_modes
    p[mode] = power
    return tuple(p)


def harmonic(omega: float, n_modes: int = 1, mode: int = 0) -> PolynomialHamiltonian:
    """omega * a^dagger a on one mode."""
    one = _unit(n_modes, mode, 1)
    return PolynomialHamiltonian(n_modes, ((one, one, omega),))


def parametric_amplifier(kappa: float, n_modes: int = 1, mode: int = 0) -> PolynomialHamiltonian:
    """(i kappa / 2)(a^dagger^2 - a^2); amplifies x = a + a^dagger at rate kappa."""
    two, zero = _unit(n_modes, mode, 2), (0,) * n_modes
    return PolynomialHamiltonian(n_modes, ((two, zero, 0.5j * kappa), (zero, two, -0.5j * kappa)))


def kerr(chi: float, n_modes: int = 1, mode: int = 0) -> PolynomialHamiltonian:
    """chi * a^dagger^2 a^2."""
    two = _unit(n_modes, mode, 2)
    return PolynomialHamiltonian(n_modes, ((two, two, chi),))


def drive(f: complex, n_modes: int = 1, mode: int = 0) -> PolynomialHamiltonian:
    """f a^dagger + conj(f) a."""
    one, zero = _unit(n_modes, mode, 1), (0,) * n_modes
    return PolynomialHamiltonian(n_modes, ((one, zero, f), (zero, one, np.conj(f))))


def beam_splitter(g: complex, modes: tuple[int, int] = (0, 1), n_modes: int = 2) -> PolynomialHamiltonian:
    """g a_i^dagger a_j + conj(g) a_j^dagger a_i."""
    i, j = modes
    return PolynomialHamiltonian(
        n_modes,
        ((_unit(n_modes, i, 1), _unit(n_modes, j, 1), g), (_unit(n_modes, j, 1), _unit(n_modes, i, 1), np.conj(g))),
    )


def two_mode_squeezer(kappa: float, modes: tuple[int, int] = (0, 1), n_modes: int = 2) -> PolynomialHamiltonian:
    """i kappa (a_i^dagger a_j^dagger - a_i a_j)."""
    i, j = modes
    both = tuple(a + b for a, b in zip(_unit(n_modes, i, 1), _unit(n_modes, j, 1)))
    zero = (0,) * n_modes
    return PolynomialHamiltonian(n_modes, ((both, zero, 1j * kappa), (zero, both, -1j * kappa)))


def cross_kerr(chi: float, modes: tuple[int, int] = (0, 1), n_modes: int = 2) -> PolynomialHamiltonian:
    """chi * n_i n_j."""
    i, j = modes
    both = tuple(a + b for a, b in zip(_unit(n_modes, i, 1), _unit(n_modes, j, 1)))
    return PolynomialHamiltonian(n_modes, ((both, both, chi),))
