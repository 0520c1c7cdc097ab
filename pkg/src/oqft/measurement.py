"""Quadrature measurement by parametric amplification.

The measured quadrature x is amplified by ``H = (i kappa / 2)(a^dagger^2 - a^2)``
with gain ``g = exp(kappa T)``.  For this Hamiltonian the derived diffusion is
``diag(-2 kappa, +2 kappa)``: x is a backward coordinate and p a forward one.
The readout is the trajectory value of x at t = T, which is fixed by the
future boundary; the backward propagation then retrodicts x at t = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import ks_2samp

from .errors import OverlapError, TruncationError
from .fbsde import TrajectoryEnsemble, jackknife, oracle_boundary, simulate_ensemble
from .fock import (
    DensityMatrix,
    FockBasis,
    State,
    evolve,
    q_marginal,
    q_moments,
    quadrature_eigenstate,
    superposition,
)
from .fpe import derive_fpe, split_quadratures
from .hamiltonian import parametric_amplifier

DIM_LADDER = (64, 96, 128, 192, 256, 384, 512, 768, 1024, 1536)
MAX_OVERLAP = 0.05
DT_SCALE = 1e-3


@dataclass(frozen=True)
class AmplifierConfig:
    kappa: float = 1.0
    T: float = 1.0
    x_i: float = 1.0
    squeeze_r: float = 1.0
    n_traj: int = 20_000
    seed: int = 0
    dt: float | None = None  # default 1e-3 / kappa

    def __post_init__(self):
        if self.kappa <= 0 or self.T <= 0:
            raise ValueError("kappa and T must be positive")
        if self.squeeze_r < 0:
            raise ValueError("squeeze_r must be non-negative")
        if self.n_traj < 2:
            raise ValueError("n_traj must be at least 2")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")

    @classmethod
    def from_gain(cls, g: float, kappa: float = 1.0, **kw) -> AmplifierConfig:
        if g <= 1:
            raise ValueError("gain must exceed 1")
        return cls(kappa=kappa, T=float(np.log(g)) / kappa, **kw)

    @property
    def gain(self) -> float:
        return float(np.exp(self.kappa * self.T))

    @property
    def eta(self) -> float:
        """Operator standard deviation of x in the prepared state."""
        return float(np.exp(-self.squeeze_r))

    @property
    def n_steps(self) -> int:
        dt = DT_SCALE / self.kappa if self.dt is None else self.dt
        return max(2, 2 * int(round(self.T / dt / 2)))

    @property
    def step(self) -> float:
        return self.T / self.n_steps

    def to_json(self) -> dict:
        return {
            "kappa": self.kappa,
            "T": self.T,
            "gain": self.gain,
            "x_i": self.x_i,
            "squeeze_r": self.squeeze_r,
            "n_traj": self.n_traj,
            "seed": self.seed,
            "n_steps": self.n_steps,
            "dt": self.step,
        }


@dataclass
class MeasurementRecord:
    outcomes: np.ndarray
    mean: float
    variance: float
    standard_error: float
    variance_se: float
    inferred_x: float
    noise_to_signal: float
    oracle_mean: float
    oracle_variance: float
    gain: float
    x_i: float
    converged_fraction: float
    retrodicted: dict = field(default_factory=dict)
    dim: int = 0

    @property
    def oracle_consistent(self) -> bool:
        return abs(self.mean - self.oracle_mean) <= 3 * self.standard_error

    @property
    def status(self) -> str:
        return "OK" if self.oracle_consistent else "FAILED-ORACLE"

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "gain": self.gain,
            "x_i": self.x_i,
            "n": int(self.outcomes.size),
            "mean": self.mean,
            "variance": self.variance,
            "standard_error": self.standard_error,
            "variance_se": self.variance_se,
            "inferred_x": self.inferred_x,
            "noise_to_signal": self.noise_to_signal,
            "oracle_mean": self.oracle_mean,
            "oracle_variance": self.oracle_variance,
            "converged_fraction": self.converged_fraction,
            "retrodicted": self.retrodicted,
            "fock_dim": self.dim,
        }


def _operator_photons(x_mean: float, r: float, g: float) -> float:
    # <n> = (<x^2> + <p^2> - 2)/4 for the amplified squeezed state
    vx, vp = g * g * np.exp(-2 * r), np.exp(2 * r) / (g * g)
    return ((g * x_mean) ** 2 + vx + vp - 2) / 4


def prepare_and_evolve(prepare, cfg: AmplifierConfig, centers=(0.0,)) -> tuple[State, State]:
    """Prepared state and its amplified image on the smallest adequate basis."""
    H = parametric_amplifier(cfg.kappa)
    n_est = max(_operator_photons(c, cfg.squeeze_r, cfg.gain) for c in centers)
    n_est = max(n_est, _operator_photons(max(abs(c) for c in centers), cfg.squeeze_r, 1.0))
    last = None
    for dim in DIM_LADDER:
        if dim < 2 * n_est + 24:
            continue
        try:
            s0 = prepare(FockBasis(dim))
            return s0, evolve(s0, H, cfg.T)
        except TruncationError as err:
            last = err
    raise last or TruncationError("no Fock cutoff in the ladder is large enough")


def _amplify(state0: State, stateT: State, cfg: AmplifierConfig) -> TrajectoryEnsemble:
    spec = derive_fpe(parametric_amplifier(cfg.kappa))
    split = split_quadratures(spec)
    bc = oracle_boundary(split, state0, stateT)
    n = cfg.n_steps
    return simulate_ensemble(split, spec, bc, cfg.n_traj, n, cfg.step, cfg.seed, store_every=n // 2)


def _record(ens: TrajectoryEnsemble, state0: State, stateT: State, cfg: AmplifierConfig) -> MeasurementRecord:
    ok = ens.converged
    outcomes = ens.paths[ok, -1, 0].copy()
    if not np.all(np.isfinite(outcomes)):
        raise ValueError("non-finite outcomes")
    mean, se = jackknife(outcomes, np.mean)
    var, var_se = jackknife(outcomes, lambda v: np.var(v, ddof=1))
    momT, mom0 = q_moments(stateT, 2), q_moments(state0, 2)
    x0 = ens.paths[ok, 0, 0]
    r0_mean, r0_se = jackknife(x0, np.mean)
    r0_var, r0_var_se = jackknife(x0, lambda v: np.var(v, ddof=1))
    g = cfg.gain
    std = float(np.sqrt(var))
    return MeasurementRecord(
        outcomes=outcomes,
        mean=float(mean),
        variance=float(var),
        standard_error=float(se),
        variance_se=float(var_se),
        inferred_x=float(mean) / g,
        noise_to_signal=std / (g * abs(cfg.x_i)) if cfg.x_i else float("nan"),
        oracle_mean=float(momT.mean()[0]),
        oracle_variance=float(momT.cov()[0, 0]),
        gain=g,
        x_i=cfg.x_i,
        converged_fraction=ens.converged_fraction,
        retrodicted={
            "mean": float(r0_mean),
            "mean_se": float(r0_se),
            "variance": float(r0_var),
            "variance_se": float(r0_var_se),
            "oracle_mean": float(mom0.mean()[0]),
            "oracle_variance": float(mom0.cov()[0, 0]),
        },
        dim=state0.basis.dim,
    )


def run_amplifier_measurement(cfg: AmplifierConfig) -> MeasurementRecord:
    """Amplify a prepared near-eigenstate of x and read out x(T) per trajectory."""
    s0, sT = prepare_and_evolve(lambda b: quadrature_eigenstate(cfg.x_i, cfg.squeeze_r, b), cfg, (cfg.x_i,))
    return _record(_amplify(s0, sT, cfg), s0, sT, cfg)


def infer_eigenvalue(record: MeasurementRecord, g: float) -> tuple[float, float]:
    """Inferred eigenvalue mean/g and its standard error."""
    if g <= 0:
        raise ValueError("gain must be positive")
    return record.mean / g, record.standard_error / g


def oracle_noise_to_signal(cfg: AmplifierConfig) -> float:
    """std/(g |x_i|) predicted from the exact Q-variance at T (Gaussian closed form)."""
    g = cfg.gain
    return float(np.sqrt(1 + g * g * np.exp(-2 * cfg.squeeze_r)) / (g * abs(cfg.x_i)))


def noise_to_signal(record: MeasurementRecord, g: float, x_i: float) -> float:
    if x_i == 0:
        raise ValueError("x_i must be nonzero")
    return float(np.std(record.outcomes, ddof=1) / (g * abs(x_i)))


def noise_to_signal_se(record: MeasurementRecord, g: float, x_i: float) -> float:
    _, se = jackknife(record.outcomes, lambda v: np.std(v, ddof=1))
    return float(se / (g * abs(x_i)))


def gain_sweep(gains, base: AmplifierConfig) -> dict:
    """Noise-to-signal at each gain, empirical and from the oracle Q-variance."""
    rows = []
    for g in gains:
        cfg = AmplifierConfig.from_gain(
            g, kappa=base.kappa, x_i=base.x_i, squeeze_r=base.squeeze_r, n_traj=base.n_traj, seed=base.seed
        )
        rec = run_amplifier_measurement(cfg)
        ratio = noise_to_signal(rec, cfg.gain, cfg.x_i)
        se = noise_to_signal_se(rec, cfg.gain, cfg.x_i)
        oracle = float(np.sqrt(rec.oracle_variance) / (cfg.gain * abs(cfg.x_i)))
        rows.append({"gain": cfg.gain, "ratio": ratio, "se": se, "oracle": oracle, "record": rec})
    oracle_vals = [r["oracle"] for r in rows]
    emp = [(r["ratio"], r["se"]) for r in rows]
    return {
        "rows": rows,
        "oracle_non_increasing": all(b <= a + 1e-12 for a, b in zip(oracle_vals, oracle_vals[1:])),
        "empirical_non_increasing": all(
            b - a <= 3 * np.hypot(sa, sb) for (a, sa), (b, sb) in zip(emp, emp[1:])
        ),
        "matches_oracle": all(abs(r["ratio"] - r["oracle"]) <= 3 * r["se"] for r in rows),
    }


# -- bimodality ---------------------------------------------------------------------

def output_overlap(x1: float, x2: float, cfg: AmplifierConfig) -> float:
    """Probability mass of either output peak beyond the midpoint, summed.

    Uses the exact Q-variance of x at T for the amplified squeezed state,
    ``1 + g^2 exp(-2 r)``.
    """
    g = cfg.gain
    sigma = np.sqrt(1 + g * g * np.exp(-2 * cfg.squeeze_r))
    return float(2 * ndtr(-g * abs(x2 - x1) / (2 * sigma)))


@dataclass
class BimodalityReport:
    weights: tuple[float, float]
    centers: tuple[float, float]
    overlap: float
    variants: dict
    x_marginal_difference: float
    outcome_ks: dict = field(default_factory=dict)
    outcomes: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return {
            "weights": list(self.weights),
            "centers": list(self.centers),
            "overlap": self.overlap,
            "variants": self.variants,
            "x_marginal_difference": self.x_marginal_difference,
            "outcome_ks": self.outcome_ks,
        }


def run_superposition_measurement(x1: float, x2: float, weights, cfg: AmplifierConfig) -> BimodalityReport:
    """Amplify a two-branch preparation, both as a mixture and as a superposition.

    Outcomes are classified by the nearest amplified center ``g x_i``.  The
    reported difference between the superposed and mixed states is the sup
    norm of their oracle Q x-marginals at T.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (2,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise ValueError("weights must be two probabilities summing to 1")
    if x1 == x2:
        raise ValueError("x1 and x2 must differ")
    overlap = output_overlap(x1, x2, cfg)
    if overlap > MAX_OVERLAP:
        raise OverlapError(f"output distributions overlap by {overlap:.3g} > {MAX_OVERLAP} at gain {cfg.gain:.4g}")
    g = cfg.gain
    centers = np.array([g * x1, g * x2])

    def branches(b):
        return [quadrature_eigenstate(x, cfg.squeeze_r, b) for x in (x1, x2)]

    preps = {
        "mixture": lambda b: DensityMatrix.mixture(branches(b), w),
        "superposition": lambda b: superposition(branches(b), w),
    }
    variants, marginals, outcomes = {}, {}, {}
    sigma = np.sqrt(1 + g * g * np.exp(-2 * cfg.squeeze_r))
    xs = np.linspace(centers.min() - 8 * sigma, centers.max() + 8 * sigma, 801)
    for name, prep in preps.items():
        s0, sT = prepare_and_evolve(prep, cfg, (x1, x2))
        ens = _amplify(s0, sT, cfg)
        out = ens.paths[ens.converged, -1, 0]
        cls = np.argmin(np.abs(out[:, None] - centers[None, :]), axis=1)
        freq = np.bincount(cls, minlength=2) / out.size
        se = np.sqrt(freq * (1 - freq) / out.size)
        variants[name] = {
            "frequencies": freq.tolist(),
            "standard_errors": se.tolist(),
            "within_3se": bool(np.all(np.abs(freq - w) <= 3 * np.sqrt(w * (1 - w) / out.size))),
            "misclassification_estimate": overlap / 2,
            "converged_fraction": ens.converged_fraction,
            "fock_dim": s0.basis.dim,
        }
        marginals[name] = q_marginal(sT, xs, "x")
        outcomes[name] = out
    diff = float(np.max(np.abs(marginals["superposition"] - marginals["mixture"])))
    ks = ks_2samp(outcomes["superposition"], outcomes["mixture"], method="asymp")
    ks_report = {"statistic": float(ks.statistic), "pvalue": float(ks.pvalue)}
    return BimodalityReport((float(w[0]), float(w[1])), (float(x1), float(x2)), overlap, variants, diff, ks_report, outcomes)
