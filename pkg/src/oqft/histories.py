"""Consistent-histories bookkeeping on a truncated Fock space.

A history selects one projector from a complete orthogonal set at each of
the times ``t_1 < ... < t_n``.  Its class operator interleaves the selected
projectors with Schrodinger-picture propagators,

    C = P_n U(t_n - t_{n-1}) ... P_2 U(t_2 - t_1) P_1 U(t_1),

which differs from the Heisenberg product ``P_n(t_n) ... P_1(t_1)`` only by
the overall unitary ``U(t_n)^dagger`` on the left.  That factor cancels in
``Tr[C_i rho C_j^dagger]``, so both orderings give the same decoherence
functional.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np
from scipy import linalg

from .errors import IncompatibleHistories
from .fock import DensityMatrix, FockBasis, StateVector, hamiltonian_matrix
from .hamiltonian import PolynomialHamiltonian

PROJECTOR_TOL = 1e-9
CONSISTENCY_TOL = 1e-6


def _as_matrix(p) -> np.ndarray:
    return np.asarray(p, dtype=complex)


@dataclass(frozen=True, eq=False)
class HistorySpec:
    times: tuple[float, ...]
    projector_sets: tuple[tuple[np.ndarray, ...], ...]
    hamiltonian: PolynomialHamiltonian
    selection: tuple[int, ...]
    basis: FockBasis

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        sets = tuple(tuple(_as_matrix(p) for p in ps) for ps in self.projector_sets)
        sel = tuple(int(k) for k in self.selection)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "projector_sets", sets)
        object.__setattr__(self, "selection", sel)
        if not times:
            raise ValueError("a history needs at least one time")
        if any(b <= a for a, b in zip(times, times[1:])) or times[0] < 0:
            raise ValueError("times must be non-negative and strictly ascending")
        if len(sets) != len(times) or len(sel) != len(times):
            raise ValueError("need one projector set and one selection per time")
        if self.hamiltonian.n_modes != self.basis.n_modes:
            raise ValueError("Hamiltonian and basis disagree on the number of modes")
        n = self.basis.size
        for k, (ps, s) in enumerate(zip(sets, sel)):
            check_projector_set(ps, n)
            if not 0 <= s < len(ps):
                raise ValueError(f"selection {s} out of range at time index {k}")

    @property
    def n_times(self) -> int:
        return len(self.times)

    def with_selection(self, selection: Sequence[int]) -> HistorySpec:
        return replace(self, selection=tuple(selection))

    def compatible_with(self, other: HistorySpec) -> bool:
        if self.times != other.times or self.basis != other.basis:
            return False
        if self.hamiltonian.as_dict() != other.hamiltonian.as_dict():
            return False
        for a, b in zip(self.projector_sets, other.projector_sets):
            if len(a) != len(b) or any(not np.allclose(p, q, atol=1e-12) for p, q in zip(a, b)):
                return False
        return True

    def to_json(self) -> dict:
        return {
            "times": list(self.times),
            "selection": list(self.selection),
            "dim": self.basis.dim,
            "n_modes": self.basis.n_modes,
            "hamiltonian": self.hamiltonian.to_json(),
            "projector_sets": [
                [{"re": p.real.tolist(), "im": p.imag.tolist()} for p in ps] for ps in self.projector_sets
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> HistorySpec:
        sets = tuple(
            tuple(np.asarray(p["re"]) + 1j * np.asarray(p["im"]) for p in ps) for ps in doc["projector_sets"]
        )
        return cls(
            tuple(doc["times"]),
            sets,
            PolynomialHamiltonian.from_json(doc["hamiltonian"]),
            tuple(doc["selection"]),
            FockBasis(int(doc["dim"]), int(doc.get("n_modes", 1))),
        )


def check_projector_set(projectors: Sequence[np.ndarray], n: int, tol: float = PROJECTOR_TOL) -> None:
    """Raise ValueError unless the set is Hermitian, idempotent, orthogonal and complete."""
    total = np.zeros((n, n), dtype=complex)
    for i, p in enumerate(projectors):
        if p.shape != (n, n):
            raise ValueError(f"projector shape {p.shape} does not match the {n}-dimensional space")
        if np.max(np.abs(p - p.conj().T)) > tol:
            raise ValueError(f"projector {i} is not Hermitian")
        if np.max(np.abs(p @ p - p)) > tol:
            raise ValueError(f"projector {i} is not idempotent")
        for j in range(i):
            if np.max(np.abs(p @ projectors[j])) > tol:
                raise ValueError(f"projectors {j} and {i} are not orthogonal")
        total += p
    if np.max(np.abs(total - np.eye(n))) > tol:
        raise ValueError("projectors do not sum to the identity")


def fock_projectors(basis: FockBasis, groups: Sequence[Sequence[int]] | None = None) -> tuple[np.ndarray, ...]:
    """Projectors onto groups of Fock basis states (default: one per state)."""
    n = basis.size
    groups = [[k] for k in range(n)] if groups is None else groups
    out = []
    for g in groups:
        p = np.zeros((n, n), dtype=complex)
        p[list(g), list(g)] = 1.0
        out.append(p)
    return tuple(out)


def propagator(H: PolynomialHamiltonian, basis: FockBasis, t: float) -> np.ndarray:
    if t == 0:
        return np.eye(basis.size, dtype=complex)
    return linalg.expm(-1j * t * hamiltonian_matrix(H, basis))


def class_operator(spec: HistorySpec) -> np.ndarray:
    C = np.eye(spec.basis.size, dtype=complex)
    prev = 0.0
    for t, ps, s in zip(spec.times, spec.projector_sets, spec.selection):
        C = ps[s] @ propagator(spec.hamiltonian, spec.basis, t - prev) @ C
        prev = t
    return C


def _rho_matrix(rho) -> np.ndarray:
    if isinstance(rho, StateVector):
        return np.outer(rho.amplitudes, rho.amplitudes.conj())
    if isinstance(rho, DensityMatrix):
        return np.asarray(rho.matrix)
    return np.asarray(rho, dtype=complex)


def decoherence_functional(spec_i: HistorySpec, spec_j: HistorySpec, rho) -> complex:
    """Tr[C_i rho C_j^dagger]."""
    if not spec_i.compatible_with(spec_j):
        raise IncompatibleHistories("histories must share times, projector sets, Hamiltonian and basis")
    r = _rho_matrix(rho)
    if r.shape != (spec_i.basis.size,) * 2:
        raise IncompatibleHistories("state dimension does not match the histories")
    return complex(np.trace(class_operator(spec_i) @ r @ class_operator(spec_j).conj().T))


def full_family(spec: HistorySpec) -> list[HistorySpec]:
    """Every selection of the history's projector sets, in lexicographic order."""
    ranges = [range(len(ps)) for ps in spec.projector_sets]
    return [spec.with_selection(sel) for sel in itertools.product(*ranges)]


def coarse_grain(family: Sequence[HistorySpec], groups: Sequence[Sequence[int]]) -> list[np.ndarray]:
    """Class operators of coarse-grained histories: sums over each group of members."""
    ops = [class_operator(h) for h in family]
    seen = sorted(i for g in groups for i in g)
    if seen != list(range(len(family))):
        raise ValueError("groups must partition the family")
    return [sum(ops[i] for i in g) for g in groups]


def merge_time(family: Sequence[HistorySpec], time_index: int) -> tuple[list[np.ndarray], list[tuple]]:
    """Coarse-grain by summing over the projector choice at one time."""
    labels: dict[tuple, list[int]] = {}
    for k, h in enumerate(family):
        key = h.selection[:time_index] + h.selection[time_index + 1:]
        labels.setdefault(key, []).append(k)
    keys = list(labels)
    return coarse_grain(family, [labels[k] for k in keys]), keys


def decoherence_matrix(class_ops: Sequence[np.ndarray], rho) -> np.ndarray:
    r = _rho_matrix(rho)
    n = len(class_ops)
    D = np.empty((n, n), dtype=complex)
    kets = [C @ r for C in class_ops]
    for i in range(n):
        for j in range(n):
            D[i, j] = np.trace(kets[i] @ class_ops[j].conj().T)
    return D


@dataclass
class ConsistencyReport:
    consistent: bool
    tol: float
    decoherence: np.ndarray
    max_off_diagonal: float
    probabilities: np.ndarray | None
    probability_sum: float
    negative_probabilities: list[int] = field(default_factory=list)
    labels: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "consistent": self.consistent,
            "tol": self.tol,
            "max_off_diagonal": self.max_off_diagonal,
            "probabilities": None if self.probabilities is None else self.probabilities.tolist(),
            "probability_sum": self.probability_sum,
            "negative_probabilities": self.negative_probabilities,
            "labels": [list(l) if isinstance(l, tuple) else l for l in self.labels],
            "decoherence": {"re": self.decoherence.real.tolist(), "im": self.decoherence.imag.tolist()},
        }


History = Union[HistorySpec, np.ndarray]


def is_consistent(family: Sequence[History], rho, tol: float = CONSISTENCY_TOL, labels=None) -> ConsistencyReport:
    """Check the vanishing of all off-diagonal decoherence-functional entries.

    ``family`` holds HistorySpecs (which must be mutually compatible) or
    precomputed class operators such as those from :func:`coarse_grain`.
    Probabilities are the diagonal entries and are only reported when the
    family is consistent; negative entries and a sum away from 1 are
    surfaced as fields, not corrected.
    """
    specs = [h for h in family if isinstance(h, HistorySpec)]
    for h in specs[1:]:
        if not specs[0].compatible_with(h):
            raise IncompatibleHistories("family members must share times, projector sets and dynamics")
    ops = [class_operator(h) if isinstance(h, HistorySpec) else np.asarray(h, dtype=complex) for h in family]
    D = decoherence_matrix(ops, rho)
    off = D - np.diag(np.diag(D))
    max_off = float(np.max(np.abs(off), initial=0.0))
    consistent = max_off < tol
    diag = np.real(np.diag(D))
    if labels is None:
        labels = [h.selection if isinstance(h, HistorySpec) else k for k, h in enumerate(family)]
    return ConsistencyReport(
        consistent=consistent,
        tol=tol,
        decoherence=D,
        max_off_diagonal=max_off,
        probabilities=diag if consistent else None,
        probability_sum=float(diag.sum()),
        negative_probabilities=[k for k, v in enumerate(diag) if v < -1e-10],
        labels=list(labels),
    )


def balanced_rotation_family(omega: float = np.pi / 2, t1: float = 1.0, t2: float = 2.0) -> tuple[list[HistorySpec], StateVector]:
    """Two-time occupation histories of a two-level truncation under (omega/2)(a + a^dagger).

    Each inter-time interval rotates |0> into an equal-weight combination of
    |0> and |1>, which makes the fine-grained family inconsistent.
    """
    from .hamiltonian import drive

    basis = FockBasis(2)
    P = fock_projectors(basis)
    base = HistorySpec((t1, t2), (P, P), drive(omega / 2), (0, 0), basis)
    psi = StateVector(basis, np.array([1.0, 0.0], dtype=complex))
    return full_family(base), psi
