"""Sparse multivariate polynomials with complex coefficients.

A polynomial is a mapping from exponent tuples to coefficients.  Only the
operations needed by the Fokker-Planck derivation are provided: ring
arithmetic, partial derivatives, linear substitution and evaluation.
"""

from __future__ import annotations

from math import comb
from typing import Iterable, Mapping

import numpy as np

Exponent = tuple[int, ...]


class Poly:
    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Mapping[Exponent, complex] | None = None):
        self.nvars = nvars
        self.terms: dict[Exponent, complex] = {}
        if terms:
            for exp, c in terms.items():
                if len(exp) != nvars:
                    raise ValueError(f"exponent {exp} does not have {nvars} entries")
                if c != 0:
                    self.terms[tuple(exp)] = self.terms.get(tuple(exp), 0) + c
            self._drop_zeros()

    # -- constructors -------------------------------------------------------
    @classmethod
    def zero(cls, nvars: int) -> Poly:
        return cls(nvars)

    @classmethod
    def const(cls, nvars: int, c: complex) -> Poly:
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def var(cls, nvars: int, i: int, c: complex = 1) -> Poly:
        exp = [0] * nvars
        exp[i] = 1
        return cls(nvars, {tuple(exp): c})

    @classmethod
    def monomial(cls, exp: Iterable[int], c: complex = 1) -> Poly:
        exp = tuple(exp)
        return cls(len(exp), {exp: c})

    # -- inspection ---------------------------------------------------------
    def _drop_zeros(self) -> None:
        self.terms = {e: c for e, c in self.terms.items() if c != 0}

    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def is_constant(self) -> bool:
        return all(sum(e) == 0 for e in self.terms)

    def constant_term(self) -> complex:
        return self.terms.get((0,) * self.nvars, 0)

    def max_abs_coef(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def chop(self, atol: float) -> Poly:
        """Drop coefficients with magnitude at or below ``atol``."""
        return Poly(self.nvars, {e: c for e, c in self.terms.items() if abs(c) > atol})

    @property
    def real(self) -> Poly:
        return Poly(self.nvars, {e: complex(c).real for e, c in self.terms.items()})

    @property
    def imag(self) -> Poly:
        return Poly(self.nvars, {e: complex(c).imag for e, c in self.terms.items()})

    # -- arithmetic ---------------------------------------------------------
    def _check(self, other: Poly) -> None:
        if other.nvars != self.nvars:
            raise ValueError("polynomials live in different variable sets")

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(self.nvars, other)
        self._check(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0) + c
        return Poly(self.nvars, out)

    __radd__ = __add__

    def __neg__(self) -> Poly:
        return Poly(self.nvars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, Poly) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return Poly(self.nvars, {e: c * other for e, c in self.terms.items()})
        self._check(other)
        out: dict[Exponent, complex] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return Poly(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> Poly:
        if n < 0:
            raise ValueError("negative powers are not polynomials")
        result = Poly.const(self.nvars, 1)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, Poly):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __repr__(self) -> str:
        if not self.terms:
            return "Poly(0)"
        parts = [f"{c!r}*{e}" for e, c in sorted(self.terms.items())]
        return "Poly(" + " + ".join(parts) + ")"

    # -- calculus and substitution -------------------------------------------
    def diff(self, i: int, order: int = 1) -> Poly:
        out: dict[Exponent, complex] = {}
        for e, c in self.terms.items():
            k = e[i]
            if k < order:
                continue
            factor = 1
            for j in range(order):
                factor *= k - j
            new = list(e)
            new[i] = k - order
            out[tuple(new)] = out.get(tuple(new), 0) + c * factor
        return Poly(self.nvars, out)

    def diff_multi(self, orders: Exponent) -> Poly:
        out = self
        for i, k in enumerate(orders):
            if k:
                out = out.diff(i, k)
        return out

    def substitute(self, images: list[Poly]) -> Poly:
        """Replace variable ``i`` by ``images[i]`` (all images share nvars)."""
        if len(images) != self.nvars:
            raise ValueError("need one image per variable")
        target = images[0].nvars if images else 0
        cache: dict[tuple[int, int], Poly] = {}

        def power(i: int, k: int) -> Poly:
            if (i, k) not in cache:
                cache[(i, k)] = images[i] ** k
            return cache[(i, k)]

        out = Poly.zero(target)
        for e, c in self.terms.items():
            term = Poly.const(target, c)
            for i, k in enumerate(e):
                if k:
                    term = term * power(i, k)
            out = out + term
        return out

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at points of shape (..., nvars)."""
        points = np.asarray(points)
        out = np.zeros(points.shape[:-1], dtype=np.result_type(points, complex))
        for e, c in self.terms.items():
            val = np.full(points.shape[:-1], c, dtype=out.dtype)
            for i, k in enumerate(e):
                if k:
                    val = val * points[..., i] ** k
            out = out + val
        return out

    # -- serialization ------------------------------------------------------
    def to_json(self) -> list[dict]:
        rows = []
        for e, c in sorted(self.terms.items()):
            c = complex(c)
            row = {"powers": list(e), "coef": c.real}
            if c.imag != 0:
                row["coef_imag"] = c.imag
            rows.append(row)
        return rows

    @classmethod
    def from_json(cls, nvars: int, rows: list[dict]) -> Poly:
        return cls(nvars, {tuple(r["powers"]): complex(r["coef"], r.get("coef_imag", 0.0)) for r in rows})


def binomial_expand(nvars: int, a: int, b: int, n: int, ca: complex = 1, cb: complex = 1) -> Poly:
    """(ca*v_a + cb*v_b)**n by the binomial theorem."""
    out = {}
    for j in range(n + 1):
        e = [0] * nvars
        e[a] += n - j
        e[b] += j
        out[tuple(e)] = out.get(tuple(e), 0) + comb(n, j) * ca ** (n - j) * cb ** j
    return Poly(nvars, out)
