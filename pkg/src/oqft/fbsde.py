"""Forward-backward stochastic trajectories for a split Fokker-Planck operator.

Forward eigen-coordinates are stepped 0 -> T with Euler-Maruyama increments
``A dt + dW``; backward ones are stepped T -> 0 with ``-A dt - dW``.  The two
are coupled through the drift and through the boundary maps, and each
trajectory is solved by a damped Picard iteration over sweep pairs with its
noise held fixed.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from . import rng
from .errors import ConvergenceError, InfiniteAction, StabilityError
from .fpe import FpeSpec, QuadratureSplit, drift_function, linear_evaluator

RELAXATION = 0.5
TOL = 1e-8
MAX_ITER = 500
MIN_CONVERGED = 0.99
CHUNK = 4 * rng.BLOCK
LIPSCHITZ_LIMIT = 0.1
MAX_GRID = 3000


# -- boundary data ---------------------------------------------------------------

class GaussianMarginal:
    def __init__(self, mean: float, std: float):
        if std < 0:
            raise ValueError("std must be non-negative")
        self.mean, self.std = float(mean), float(std)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.mean + self.std * z


class GridMarginal:
    """Inverse-CDF sampling of a tabulated 1-D density."""

    def __init__(self, xs: np.ndarray, density: np.ndarray):
        xs = np.asarray(xs, dtype=float)
        density = np.clip(np.asarray(density, dtype=float), 0, None)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(xs))])
        if cdf[-1] <= 0:
            raise ValueError("density has no mass on the grid")
        self.mass = float(cdf[-1])
        cdf /= cdf[-1]
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        self.xs, self.cdf = xs[keep], cdf[keep]

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return np.interp(ndtr(z), self.cdf, self.xs)


class BoundarySampler:
    """Independent marginals for the free forward (t=0) and backward (t=T) data."""

    def __init__(self, plus: Sequence[Callable], minus: Sequence[Callable]):
        self.plus, self.minus = list(plus), list(minus)

    @property
    def n_normals(self) -> int:
        return len(self.plus) + len(self.minus)

    def __call__(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = z.shape[0]
        fp = np.empty((n, len(self.plus)))
        fm = np.empty((n, len(self.minus)))
        for i, f in enumerate(self.plus):
            fp[:, i] = f(z[:, i])
        for i, f in enumerate(self.minus):
            fm[:, i] = f(z[:, len(self.plus) + i])
        return fp, fm


class GaussianSampler:
    """Jointly Gaussian free data: forward coordinates first, then backward."""

    def __init__(self, mean, cov, n_plus: int):
        self.mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        w, v = np.linalg.eigh(0.5 * (cov + cov.T))
        if w[0] < -1e-10 * max(1.0, w[-1]):
            raise ValueError("covariance is not positive semidefinite")
        self.factor = v * np.sqrt(np.clip(w, 0, None))
        self.n_plus = n_plus

    @property
    def n_normals(self) -> int:
        return self.mean.shape[0]

    def __call__(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.mean + z @ self.factor.T
        return s[:, : self.n_plus], s[:, self.n_plus:]


def _free_plus(phi_minus_0, free_plus):
    return free_plus


def _free_minus(phi_plus_T, free_minus):
    return free_minus


@dataclass
class BoundaryConditions:
    """Free-data sampler plus the cyclic boundary maps (eigen-coordinates).

    ``phi_plus_initial(phi_minus_0, free_plus)`` gives the forward data at
    t=0 and ``phi_minus_final(phi_plus_T, free_minus)`` the backward data at
    t=T; both act on batches of shape (n, k).
    """

    sampler: Callable
    phi_plus_initial: Callable = _free_plus
    phi_minus_final: Callable = _free_minus


def oracle_boundary(split: QuadratureSplit, state0, stateT, kind: str = "marginal", grid_step: float = 0.02) -> BoundaryConditions:
    """Boundary data sampled from oracle Q-functions.

    Forward coordinates are drawn from the Q-function of ``state0`` and
    backward ones from that of ``stateT``.  ``kind='marginal'`` samples each
    coordinate independently from its tabulated Q marginal; ``'gaussian'``
    draws all free data jointly from Q-moments (exact for Gaussian states,
    requires every coordinate to be forward).
    """
    from .fock import q_marginal, q_moments

    if not np.allclose(split.basis, np.eye(split.n_coords)):
        raise ValueError("oracle boundaries need a split aligned with the quadrature axes")
    if kind == "gaussian":
        if split.backward_coords:
            raise ValueError("joint Gaussian sampling needs an all-forward split")
        mom = q_moments(state0, 2)
        idx = list(split.forward_coords)
        return BoundaryConditions(GaussianSampler(mom.mean()[idx], mom.cov()[np.ix_(idx, idx)], len(idx)))
    if kind != "marginal":
        raise ValueError("kind must be 'marginal' or 'gaussian'")
    if state0.basis.n_modes != 1:
        raise ValueError("marginal sampling is implemented for single-mode states")

    def marginal(state, coord):
        quad = "x" if coord == 0 else "p"
        mom = q_moments(state, 2)
        e = (1, 0) if coord == 0 else (0, 1)
        mean = mom[e]
        std = np.sqrt(mom[tuple(2 * k for k in e)] - mean ** 2)
        half = 12 * std + 4
        step = max(grid_step, 2 * half / MAX_GRID)
        xs = np.arange(mean - half, mean + half + step / 2, step)
        return GridMarginal(xs, q_marginal(state, xs, quad))

    plus = [marginal(state0, c) for c in split.forward_coords]
    minus = [marginal(stateT, c) for c in split.backward_coords]
    return BoundaryConditions(BoundarySampler(plus, minus))


# -- drift in eigen-coordinates ---------------------------------------------------------

def eigen_drift(spec: FpeSpec, split: QuadratureSplit) -> Callable[[np.ndarray], np.ndarray]:
    V = np.asarray(split.basis)
    if np.allclose(V, np.eye(V.shape[0]), atol=0, rtol=0):
        return drift_function(spec)
    if spec.is_linear_drift():
        M, b = spec.drift_linear_part()
        return linear_evaluator(V.T @ M @ V, V.T @ b)
    base = drift_function(spec)
    return lambda y: base(y @ V.T) @ V


def lipschitz_estimate(spec: FpeSpec, split: QuadratureSplit, samples: np.ndarray | None = None) -> float:
    """Spectral norm of the drift Jacobian (exact when the drift is linear)."""
    if spec.is_linear_drift():
        M, _ = spec.drift_linear_part()
        return float(np.linalg.norm(M, 2))
    if samples is None or len(samples) == 0:
        raise ValueError("nonlinear drift needs sample points to estimate its Lipschitz constant")
    jac = spec.drift_jacobian()
    phi = split.from_eigen(np.asarray(samples))
    J = np.stack([np.stack([d(phi).real for d in row], axis=-1) for row in jac], axis=-2)
    return float(np.max(np.linalg.norm(J, 2, axis=(-2, -1))))


# -- cyclic solver ---------------------------------------------------------------

@dataclass
class CyclicSolution:
    paths: np.ndarray          # (B, N+1, n) eigen-coordinates
    converged: np.ndarray      # (B,)
    iterations: np.ndarray     # (B,)
    residuals: list[float] = field(default_factory=list)


def _check_finite(arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise StabilityError("non-finite values in trajectory")


def solve_cyclic(
    free_plus: np.ndarray,
    free_minus: np.ndarray,
    noise: np.ndarray,
    split: QuadratureSplit,
    drift: Callable[[np.ndarray], np.ndarray],
    bc: BoundaryConditions,
    dt: float,
    relaxation: float = RELAXATION,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
) -> CyclicSolution:
    """Damped Picard solution of the discretized forward-backward pair.

    ``noise`` holds the increments dW, shape (B, N, n), in eigen-coordinates
    and already scaled by the noise amplitude and sqrt(dt).  ``drift`` maps
    eigen-coordinates (..., n) to drift (..., n).  The first sweep pair is
    undamped; later pairs mix old and new paths with ``relaxation``.  A
    trajectory is frozen once its sup-norm path change drops below ``tol``.
    """
    noise = np.asarray(noise, dtype=float)
    B, N, n = noise.shape
    F, Bk = list(split.forward_coords), list(split.backward_coords)
    free_plus = np.asarray(free_plus, dtype=float).reshape(B, len(F))
    free_minus = np.asarray(free_minus, dtype=float).reshape(B, len(Bk))
    # time-major working layout (N+1, B, k), one array per direction
    dWp = np.ascontiguousarray(noise[:, :, F].transpose(1, 0, 2))
    dWm = np.ascontiguousarray(noise[:, :, Bk].transpose(1, 0, 2))

    def forward_sweep(ym, fp, w):
        yp = np.empty((N + 1,) + fp.shape)
        yp[0] = bc.phi_plus_initial(ym[0], fp)
        point = np.empty((fp.shape[0], n))
        for k in range(N):
            point[:, F] = yp[k]
            point[:, Bk] = ym[k]
            yp[k + 1] = yp[k] + drift(point)[:, F] * dt + w[k]
        return yp

    def backward_sweep(yp, fm, w):
        ym = np.empty((N + 1,) + fm.shape)
        ym[N] = bc.phi_minus_final(yp[N], fm)
        point = np.empty((fm.shape[0], n))
        for k in range(N - 1, -1, -1):
            point[:, F] = yp[k + 1]
            point[:, Bk] = ym[k + 1]
            ym[k] = ym[k + 1] - drift(point)[:, Bk] * dt - w[k]
        return ym

    def assemble(yp, ym):
        y = np.empty((yp.shape[1], N + 1, n))
        y[:, :, F] = yp.transpose(1, 0, 2)
        y[:, :, Bk] = ym.transpose(1, 0, 2)
        return y

    yp = np.broadcast_to(free_plus, (N + 1,) + free_plus.shape).copy()
    ym = np.broadcast_to(free_minus, (N + 1,) + free_minus.shape).copy()
    if not Bk or not F:
        # one-directional system: a single sweep is the exact solution
        if F:
            yp = forward_sweep(ym, free_plus, dWp)
        else:
            ym = backward_sweep(yp, free_minus, dWm)
        y = assemble(yp, ym)
        _check_finite(y)
        return CyclicSolution(y, np.ones(B, dtype=bool), np.ones(B, dtype=int), [0.0])

    out = np.empty((B, N + 1, n))
    converged = np.zeros(B, dtype=bool)
    iterations = np.full(B, max_iter, dtype=int)
    residuals: list[float] = []
    active = np.arange(B)
    for it in range(1, max_iter + 1):
        w = 1.0 if it == 1 else relaxation
        new_p = forward_sweep(ym, free_plus[active], dWp)
        if w != 1.0:
            new_p *= w
            new_p += (1 - w) * yp
        new_m = backward_sweep(new_p, free_minus[active], dWm)
        if w != 1.0:
            new_m *= w
            new_m += (1 - w) * ym
        change = np.maximum(
            np.abs(new_p - yp).max(axis=0).max(axis=1), np.abs(new_m - ym).max(axis=0).max(axis=1)
        )
        if not np.all(np.isfinite(change)):
            raise StabilityError("non-finite values in trajectory")
        yp, ym = new_p, new_m
        residuals.append(float(change.max(initial=0.0)))
        done = change < tol if it >= 2 else np.zeros(active.size, dtype=bool)
        if it == max_iter:
            done_or_last = np.ones(active.size, dtype=bool)
        else:
            done_or_last = done
        if done_or_last.any():
            out[active[done_or_last]] = assemble(yp[:, done_or_last], ym[:, done_or_last])
            converged[active[done]] = True
            iterations[active[done]] = it
            keep = ~done_or_last
            active = active[keep]
            if active.size:
                yp, ym = yp[:, keep], ym[:, keep]
                dWp, dWm = dWp[:, keep], dWm[:, keep]
        if active.size == 0:
            break
    return CyclicSolution(out, converged, iterations, residuals)


# -- action -----------------------------------------------------------------------

def path_action(path: np.ndarray, split: QuadratureSplit, drift: FpeSpec, dt: float, atol: float = 1e-9) -> np.ndarray:
    """Discretized action sum |dphi - A dt|^2 / (2 |lambda| dt) over noisy coordinates.

    ``path`` has shape (..., N+1, n) in original coordinates.  Forward
    coordinates use the drift at the earlier point of each step, backward
    ones at the later point, matching the stepping rules.  Noiseless
    coordinates contribute zero and raise InfiniteAction if they leave
    their flow.
    """
    y = split.to_eigen(np.asarray(path, dtype=float))
    a = eigen_drift(drift, split)(y)
    step = y[..., 1:, :] - y[..., :-1, :]
    total = np.zeros(y.shape[:-2])
    for c in range(split.n_coords):
        at = a[..., :-1, c] if c in split.forward_coords else a[..., 1:, c]
        r = step[..., c] - at * dt
        lam = abs(split.eigenvalues[c])
        if lam == 0:
            if np.any(np.abs(r) > atol * (1 + np.abs(y[..., 1:, c]))):
                raise InfiniteAction(f"noiseless coordinate {c} departs from its drift flow")
            continue
        total = total + np.sum(r ** 2, axis=-1) / (2 * lam * dt)
    return total


# -- ensembles ---------------------------------------------------------------------

def worker_count() -> int:
    raw = os.environ.get("OQFT_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError("OQFT_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


@dataclass(eq=False)
class TrajectoryEnsemble:
    n_traj: int
    n_steps: int
    dt: float
    seed: int
    times: np.ndarray          # stored times
    paths: np.ndarray          # (n_traj, len(times), n_coords), original coordinates
    converged: np.ndarray
    iterations: np.ndarray
    action: np.ndarray
    coordinates: list[str]

    @property
    def converged_fraction(self) -> float:
        return float(np.mean(self.converged)) if self.n_traj else 0.0

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} was not stored")
        return k

    def summary(self) -> dict:
        return {
            "n_traj": self.n_traj,
            "n_steps": self.n_steps,
            "dt": self.dt,
            "seed": self.seed,
            "converged_fraction": self.converged_fraction,
            "max_iterations": int(self.iterations.max(initial=0)),
            "mean_action": float(np.mean(self.action[self.converged])) if self.converged.any() else None,
            "coordinates": self.coordinates,
            "stored_times": [float(t) for t in self.times],
        }

    def to_csv(self, max_traj: int | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trajectory", "t"] + self.coordinates)
        n = self.n_traj if max_traj is None else min(max_traj, self.n_traj)
        for i in range(n):
            for k, t in enumerate(self.times):
                w.writerow([i, repr(float(t))] + [repr(float(v)) for v in self.paths[i, k]])
        return buf.getvalue()


def simulate_ensemble(
    split: QuadratureSplit,
    drift: FpeSpec,
    bc: BoundaryConditions,
    n_traj: int,
    n_steps: int,
    dt: float,
    seed: int,
    store_every: int = 1,
    relaxation: float = RELAXATION,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
    threads: int | None = None,
    substeps: int = 1,
) -> TrajectoryEnsemble:
    """Solve n_traj cyclic paths; chunk and thread layout never changes the result.

    With substeps > 1 each Wiener increment is the sum of `substeps` finer ones, so a run at
    (n_steps, dt, substeps=2) shares its noise with a run at (2 n_steps, dt/2).
    """
    if n_traj < 1 or n_steps < 1 or dt <= 0:
        raise ValueError("n_traj, n_steps and dt must be positive")
    if n_steps % store_every:
        raise ValueError("store_every must divide n_steps")
    if substeps < 1:
        raise ValueError("substeps must be positive")
    drift.diffusion_matrix()  # raises UnsupportedDiffusion for state-dependent noise
    n = split.n_coords
    F, Bk = list(split.forward_coords), list(split.backward_coords)
    amp = split.noise_amplitude
    noisy = [c for c in range(n) if amp[c] > 0]
    n_free = bc.sampler.n_normals
    per_traj = n_free + n_steps * substeps * len(noisy)
    ydrift = eigen_drift(drift, split)
    stored = np.arange(0, n_steps + 1, store_every)

    def run_chunk(start: int) -> tuple:
        stop = min(start + CHUNK, n_traj)
        z = rng.trajectory_normals(seed, start, stop, per_traj)
        fp, fm = bc.sampler(z[:, :n_free])
        dW = np.zeros((stop - start, n_steps, n))
        if noisy:
            fine = z[:, n_free:].reshape(stop - start, n_steps, substeps, len(noisy)).sum(axis=2)
            dW[:, :, noisy] = fine * (amp[noisy] * np.sqrt(dt / substeps))
        if start == 0:
            lip = lipschitz_estimate(drift, split, np.concatenate([fp, fm], axis=1)[:, np.argsort(F + Bk)])
            if lip * dt >= LIPSCHITZ_LIMIT:
                raise StabilityError(f"dt * Lipschitz = {lip * dt:.3g} exceeds {LIPSCHITZ_LIMIT}")
        sol = solve_cyclic(fp, fm, dW, split, ydrift, bc, dt, relaxation, tol, max_iter)
        phi = split.from_eigen(sol.paths)
        act = np.zeros(stop - start)
        if sol.converged.any():
            act[sol.converged] = path_action(phi[sol.converged], split, drift, dt)
        return phi[:, stored, :], sol.converged, sol.iterations, act

    starts = list(range(0, n_traj, CHUNK))
    workers = threads if threads is not None else worker_count()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, starts))
    else:
        parts = [run_chunk(s) for s in starts]
    paths = np.concatenate([p[0] for p in parts])
    converged = np.concatenate([p[1] for p in parts])
    iterations = np.concatenate([p[2] for p in parts])
    action = np.concatenate([p[3] for p in parts])
    ens = TrajectoryEnsemble(
        n_traj, n_steps, dt, seed, stored * dt, paths, converged, iterations, action, drift.coordinates
    )
    if ens.converged_fraction < MIN_CONVERGED:
        raise ConvergenceError(f"only {ens.converged_fraction:.3%} of trajectories converged")
    return ens


# -- statistics ----------------------------------------------------------------------

@dataclass
class MarginalStats:
    time: float
    n: int
    converged_fraction: float
    mean: np.ndarray
    cov: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray

    def to_json(self) -> dict:
        return {
            "time": self.time,
            "n": self.n,
            "converged_fraction": self.converged_fraction,
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "mean_se": self.mean_se.tolist(),
            "cov_se": self.cov_se.tolist(),
        }


def jackknife(samples: np.ndarray, stat: Callable[[np.ndarray], np.ndarray], n_blocks: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Statistic on all samples and its delete-one-block jackknife standard error."""
    samples = np.asarray(samples)
    full = np.asarray(stat(samples))
    g = min(n_blocks, samples.shape[0])
    if g < 2:
        return full, np.full(full.shape, np.nan)
    blocks = np.array_split(np.arange(samples.shape[0]), g)
    reps = np.stack([np.asarray(stat(np.delete(samples, b, axis=0))) for b in blocks])
    se = np.sqrt((g - 1) / g * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
    return full, se


def _mean_cov_jackknife(x: np.ndarray, n_blocks: int = 200):
    n, d = x.shape
    g = min(n_blocks, n)
    blocks = np.array_split(np.arange(n), g)
    s1 = np.stack([x[b].sum(axis=0) for b in blocks])
    s2 = np.stack([x[b].T @ x[b] for b in blocks])
    cnt = np.array([len(b) for b in blocks], dtype=float)
    T1, T2, N = s1.sum(axis=0), s2.sum(axis=0), float(n)

    def mc(t1, t2, m):
        mu = t1 / m
        return mu, (t2 - m * np.outer(mu, mu)) / (m - 1)

    mean, cov = mc(T1, T2, N)
    reps_m = np.empty((g, d))
    reps_c = np.empty((g, d, d))
    for k in range(g):
        reps_m[k], reps_c[k] = mc(T1 - s1[k], T2 - s2[k], N - cnt[k])
    f = (g - 1) / g
    mean_se = np.sqrt(f * np.sum((reps_m - reps_m.mean(axis=0)) ** 2, axis=0))
    cov_se = np.sqrt(f * np.sum((reps_c - reps_c.mean(axis=0)) ** 2, axis=0))
    return mean, cov, mean_se, cov_se


def marginal_stats(ensemble: TrajectoryEnsemble, time_index: int) -> MarginalStats:
    """Sample mean, unbiased covariance and jackknife errors over converged paths."""
    x = ensemble.paths[ensemble.converged, time_index, :]
    if x.shape[0] < 2:
        raise ValueError("need at least two converged trajectories")
    mean, cov, mean_se, cov_se = _mean_cov_jackknife(x)
    return MarginalStats(
        float(ensemble.times[time_index]), int(x.shape[0]), ensemble.converged_fraction, mean, cov, mean_se, cov_se
    )
