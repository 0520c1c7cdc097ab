"""Named experiments driven by a JSON configuration.

Each experiment returns its results, a table of named invariants and the
data files it wants written.  Writing, reporting and exit codes live in
:func:`run_experiment`.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from .fbsde import marginal_stats, oracle_boundary, simulate_ensemble
from .fock import FockBasis, coherent_state, evolve, grid_integral, q_grid, q_moments, quadrature_eigenstate
from .fpe import derive_fpe, split_quadratures
from .hamiltonian import PolynomialHamiltonian, harmonic, parametric_amplifier
from .histories import HistorySpec, balanced_rotation_family, fock_projectors, full_family, is_consistent, merge_time
from .measurement import AmplifierConfig, gain_sweep, infer_eigenvalue, run_amplifier_measurement, run_superposition_measurement

SCHEMA = "oqft-report/1"
SEED_LIMIT = 1 << 64
CONVENTION = "hbar=1; x=a+a^dagger; p=-i(a-a^dagger); alpha=(x+ip)/2"

EXPERIMENTS = ("qfunction-grid", "oracle-vs-fbsde", "amplifier-measurement", "superposition", "histories-demo")

DEFAULTS: dict[str, dict] = {
    "qfunction-grid": {"state": {"kind": "vacuum"}, "window": 8.0, "spacing": 0.05, "dim": 60},
    "oracle-vs-fbsde": {
        "hamiltonian": {"kind": "amplifier", "kappa": 1.0},
        "state": {"kind": "vacuum"},
        "T": 1.0,
        "n_traj": 100_000,
        "dt": 1e-3,
        "dim": 120,
    },
    "amplifier-measurement": {
        "kappa": 1.0,
        "gain": math.e,
        "x_i": 1.0,
        "squeeze_r": 1.0,
        "n_traj": 20_000,
        "gains": [],
    },
    "superposition": {
        "x1": -1.0,
        "x2": 1.0,
        "weights": [0.5, 0.5],
        "kappa": 1.0,
        "gain": math.e ** 2,
        "squeeze_r": 1.5,
        "n_traj": 10_000,
    },
    "histories-demo": {"omega": math.pi / 2, "t1": 1.0, "t2": 2.0, "tol": 1e-6},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "oqft-out"

    KEYS = ("experiment", "parameters", "seed", "output_dir")

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if not isinstance(self.parameters, dict):
            raise ConfigError("parameters must be a JSON object")
        unknown = sorted(set(self.parameters) - set(DEFAULTS[self.experiment]))
        if unknown:
            raise ConfigError(f"unknown parameters for {self.experiment}: {', '.join(unknown)}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < SEED_LIMIT:
            raise ConfigError("seed must be an integer in [0, 2^64)")
        if not isinstance(self.output_dir, str) or not self.output_dir:
            raise ConfigError("output_dir must be a non-empty string")

    @classmethod
    def from_json(cls, doc) -> ExperimentConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(doc) - set(cls.KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "experiment" not in doc:
            raise ConfigError("config needs an 'experiment' key")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON in {path}: {err}") from err
        return cls.from_json(doc)

    def resolved_parameters(self) -> dict:
        return {**DEFAULTS[self.experiment], **self.parameters}

    def to_json(self) -> dict:
        return {
            "experiment": self.experiment,
            "parameters": self.resolved_parameters(),
            "seed": self.seed,
            "output_dir": self.output_dir,
        }


@dataclass
class ExperimentResult:
    results: dict
    invariants: dict[str, bool]
    files: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.invariants.values())


# -- helpers -----------------------------------------------------------------------

def fmt(v) -> str:
    """Shortest round-trip decimal for floats, plain str otherwise."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def csv_text(header: list[str], rows, comments: list[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def build_state(params: dict, dim: int):
    kind = params.get("kind", "vacuum")
    allowed = {"vacuum": {"kind"}, "coherent": {"kind", "alpha"}, "squeezed": {"kind", "x_i", "squeeze_r"}}
    if kind not in allowed:
        raise ConfigError(f"unknown state kind {kind!r}")
    extra = set(params) - allowed[kind]
    if extra:
        raise ConfigError(f"unknown keys for {kind} state: {', '.join(sorted(extra))}")
    basis = FockBasis(int(dim))
    if kind == "vacuum":
        return coherent_state(0.0, basis)
    if kind == "coherent":
        a = params.get("alpha", [0.0, 0.0])
        alpha = complex(a[0], a[1]) if isinstance(a, (list, tuple)) else complex(a)
        return coherent_state(alpha, basis)
    return quadrature_eigenstate(float(params.get("x_i", 0.0)), float(params.get("squeeze_r", 0.0)), basis)


def build_hamiltonian(params: dict) -> PolynomialHamiltonian:
    kind = params.get("kind")
    if kind == "harmonic":
        return harmonic(float(params.get("omega", 1.0)))
    if kind == "amplifier":
        return parametric_amplifier(float(params.get("kappa", 1.0)))
    if kind == "polynomial":
        return PolynomialHamiltonian.from_json(params)
    raise ConfigError(f"unknown hamiltonian kind {kind!r}")


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


# -- experiments -------------------------------------------------------------------

def emit_qfunction_grid(state_params: dict, grid: dict, out_path=None) -> tuple[str, dict]:
    """Tabulate Q on a square grid; returns the CSV text and grid summary."""
    state = build_state(state_params, grid.get("dim", 60))
    window, step = float(grid["window"]), float(grid["spacing"])
    if window <= 0 or step <= 0:
        raise ConfigError("window and spacing must be positive")
    mom = q_moments(state, 2)
    mean, cov = mom.mean(), mom.cov()
    # coverage is judged on the operator spread (Q covariance minus the vacuum's identity)
    std = np.sqrt(np.clip(np.diag(cov) - 1.0, 0.0, None))
    for k in range(2):
        if abs(mean[k]) + 6 * std[k] > window * (1 + 1e-9):
            raise ConfigError(f"grid window {window} does not cover 6 standard deviations of the state")
    n = int(round(window / step))
    xs = step * np.arange(-n, n + 1)
    Q = q_grid(state, xs, xs)
    total = grid_integral(Q, step, step)
    i, j = np.unravel_index(int(np.argmax(Q)), Q.shape)
    comments = [
        f"convention: {CONVENTION}",
        "normalization: Q is a density per d^2alpha; integral = sum(Q) * dx * dp / 4",
        f"grid_integral: {fmt(total)}",
    ]
    X, P = np.meshgrid(xs, xs, indexing="ij")
    text = csv_text(["x", "p", "Q"], zip(X.ravel(), P.ravel(), Q.ravel()), comments)
    if out_path is not None:
        Path(out_path).write_text(text)
    summary = {
        "integral": total,
        "peak": {"x": float(xs[i]), "p": float(xs[j]), "Q": float(Q[i, j])},
        "q_mean": mean,
        "q_cov": cov,
        "n_points": int(Q.size),
    }
    return text, summary


def exp_qfunction_grid(p: dict, seed: int) -> ExperimentResult:
    text, summary = emit_qfunction_grid(p["state"], {"window": p["window"], "spacing": p["spacing"], "dim": p["dim"]})
    inv = {"normalization_within_1e-3": abs(summary["integral"] - 1) <= 1e-3}
    return ExperimentResult(summary, inv, {"qfunction.csv": text})


def compare_with_oracle(H: PolynomialHamiltonian, state0, T: float, n_traj: int, dt: float, seed: int) -> dict:
    """FBSDE marginals at 0, T/2, T against Q-moments of the exactly evolved state."""
    spec = derive_fpe(H)
    split = split_quadratures(spec)
    n_steps = max(2, 2 * int(round(T / dt / 2)))
    step = T / n_steps
    states = [state0, evolve(state0, H, T / 2), evolve(state0, H, T)]
    kind = "gaussian" if not split.backward_coords else "marginal"
    bc = oracle_boundary(split, state0, states[-1], kind=kind)
    ens = simulate_ensemble(split, spec, bc, n_traj, n_steps, step, seed, store_every=n_steps // 2)
    rows, ok = [], True
    for k, st in enumerate(states):
        ms = marginal_stats(ens, k)
        mom = q_moments(st, 2)
        om, oc = mom.mean(), mom.cov()
        for i, name in enumerate(ens.coordinates):
            good = abs(ms.mean[i] - om[i]) <= 3 * ms.mean_se[i] + 1e-12
            rows.append((ms.time, f"mean_{name}", ms.mean[i], ms.mean_se[i], om[i], good))
            ok &= good
        for i in range(len(ens.coordinates)):
            for j in range(i, len(ens.coordinates)):
                name = f"cov_{ens.coordinates[i]}{ens.coordinates[j]}"
                good = abs(ms.cov[i, j] - oc[i, j]) <= 3 * ms.cov_se[i, j] + 1e-12
                rows.append((ms.time, name, ms.cov[i, j], ms.cov_se[i, j], oc[i, j], good))
                ok &= good
    return {
        "rows": rows,
        "all_within_3se": bool(ok),
        "split": split.to_json(),
        "fpe": spec.to_json(),
        "ensemble": ens.summary(),
        "ensemble_obj": ens,
    }


def exp_oracle_vs_fbsde(p: dict, seed: int) -> ExperimentResult:
    H = build_hamiltonian(p["hamiltonian"])
    state0 = build_state(p["state"], p["dim"])
    cmp = compare_with_oracle(H, state0, float(p["T"]), int(p["n_traj"]), float(p["dt"]), seed)
    header = ["t", "quantity", "fbsde", "standard_error", "oracle", "within_3se"]
    text = csv_text(header, [(*r[:5], int(r[5])) for r in cmp["rows"]], [f"convention: {CONVENTION}"])
    results = {k: v for k, v in cmp.items() if k not in ("rows", "ensemble_obj")}
    results["comparisons"] = [dict(zip(header, r)) for r in cmp["rows"]]
    inv = {"fbsde_matches_oracle_within_3se": cmp["all_within_3se"]}
    return ExperimentResult(results, inv, {"moments.csv": text})


def exp_amplifier(p: dict, seed: int) -> ExperimentResult:
    base = AmplifierConfig.from_gain(
        float(p["gain"]), kappa=float(p["kappa"]), x_i=float(p["x_i"]), squeeze_r=float(p["squeeze_r"]),
        n_traj=int(p["n_traj"]), seed=seed,
    )
    rec = run_amplifier_measurement(base)
    g = base.gain
    inferred, inferred_se = infer_eigenvalue(rec, g)
    inv = {
        "oracle_mean_within_3se": rec.oracle_consistent,
        "oracle_variance_within_3se": abs(rec.variance - rec.oracle_variance) <= 3 * rec.variance_se,
        "amplified_mean_within_3se": abs(rec.mean - g * base.x_i) <= 3 * rec.standard_error,
        "inferred_eigenvalue_within_3se": abs(inferred - base.x_i) <= 3 * inferred_se,
        "converged_fraction_ok": rec.converged_fraction >= 0.99,
    }
    results = {"config": base.to_json(), "record": rec.to_json(), "inferred_x": inferred, "inferred_x_se": inferred_se}
    files = {
        "outcomes.csv": csv_text(
            ["trajectory", "x_T"], enumerate(rec.outcomes), [f"convention: {CONVENTION}", f"gain: {fmt(g)}"]
        )
    }
    if p["gains"]:
        if base.x_i == 0:
            raise ConfigError("a gain sweep needs x_i != 0")
        sweep = gain_sweep([float(v) for v in p["gains"]], base)
        rows = [(r["gain"], r["ratio"], r["se"], r["oracle"]) for r in sweep["rows"]]
        results["gain_sweep"] = {
            "rows": [dict(zip(["gain", "ratio", "se", "oracle"], r)) for r in rows],
            "oracle_non_increasing": sweep["oracle_non_increasing"],
            "empirical_non_increasing": sweep["empirical_non_increasing"],
        }
        inv["noise_to_signal_oracle_non_increasing"] = sweep["oracle_non_increasing"]
        inv["noise_to_signal_empirical_non_increasing"] = sweep["empirical_non_increasing"]
        inv["noise_to_signal_matches_oracle"] = sweep["matches_oracle"]
        files["noise_to_signal.csv"] = csv_text(["gain", "ratio", "standard_error", "oracle"], rows)
    return ExperimentResult(results, inv, files)


def exp_superposition(p: dict, seed: int) -> ExperimentResult:
    cfg = AmplifierConfig.from_gain(
        float(p["gain"]), kappa=float(p["kappa"]), x_i=float(p["x2"]), squeeze_r=float(p["squeeze_r"]),
        n_traj=int(p["n_traj"]), seed=seed,
    )
    rep = run_superposition_measurement(float(p["x1"]), float(p["x2"]), p["weights"], cfg)
    inv = {f"{name}_frequencies_within_3se": v["within_3se"] for name, v in rep.variants.items()}
    inv["overlap_below_5pct"] = rep.overlap < 0.05
    rows = [
        (name, k, freq, se, w)
        for name, v in rep.variants.items()
        for k, (freq, se, w) in enumerate(zip(v["frequencies"], v["standard_errors"], rep.weights))
    ]
    text = csv_text(["variant", "class", "frequency", "standard_error", "weight"], rows)
    outcome_rows = [(name, i, x) for name, xs in rep.outcomes.items() for i, x in enumerate(xs)]
    files = {
        "classes.csv": text,
        "outcomes.csv": csv_text(["variant", "trajectory", "x_T"], outcome_rows, [f"gain: {fmt(cfg.gain)}"]),
    }
    return ExperimentResult({"config": cfg.to_json(), "report": rep.to_json()}, inv, files)


def exp_histories(p: dict, seed: int) -> ExperimentResult:
    fam, psi = balanced_rotation_family(float(p["omega"]), float(p["t1"]), float(p["t2"]))
    tol = float(p["tol"])
    fine = is_consistent(fam, psi, tol)
    ops, keys = merge_time(fam, 0)
    coarse = is_consistent(ops, psi, tol, labels=keys)
    basis = fam[0].basis
    static = HistorySpec((float(p["t1"]),), (fock_projectors(basis),), PolynomialHamiltonian.zero(), (0,), basis)
    trivial = is_consistent(full_family(static), psi, tol)
    D = fine.decoherence
    inv = {
        "hermitian_within_1e-10": bool(np.max(np.abs(D - D.conj().T)) <= 1e-10),
        "diagonal_sum_is_1": abs(fine.probability_sum - 1) <= 1e-9,
        "fine_family_inconsistent": not fine.consistent,
        "coarse_family_consistent": coarse.consistent,
        "trivial_family_consistent": trivial.consistent and abs(trivial.probability_sum - 1) <= 1e-9,
    }
    rows = [
        (str(fine.labels[i]), str(fine.labels[j]), D[i, j].real, D[i, j].imag)
        for i in range(D.shape[0])
        for j in range(D.shape[1])
    ]
    text = csv_text(["history_i", "history_j", "re", "im"], rows)
    results = {"fine": fine.to_json(), "coarse": coarse.to_json(), "trivial": trivial.to_json()}
    return ExperimentResult(results, inv, {"decoherence.csv": text})


RUNNERS: dict[str, Callable[[dict, int], ExperimentResult]] = {
    "qfunction-grid": exp_qfunction_grid,
    "oracle-vs-fbsde": exp_oracle_vs_fbsde,
    "amplifier-measurement": exp_amplifier,
    "superposition": exp_superposition,
    "histories-demo": exp_histories,
}


def versions() -> dict:
    return {"oqft": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def execute(config: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[config.experiment](config.resolved_parameters(), config.seed)


def report_document(config: ExperimentConfig, result: ExperimentResult) -> dict:
    return _clean({
        "header": {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")},
        "schema": SCHEMA,
        "experiment": config.experiment,
        "seed": config.seed,
        "config": config.to_json(),
        "versions": versions(),
        "results": result.results,
        "invariants": result.invariants,
        "status": "pass" if result.passed else "fail",
        "files": sorted(result.files),
    })


def run_experiment(config: ExperimentConfig) -> tuple[int, dict]:
    """Run, write report.json plus data CSVs, and return (exit status, report)."""
    result = execute(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in result.files.items():
        (out / name).write_text(text)
    doc = report_document(config, result)
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return (0 if result.passed else 1), doc
