import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

from oqft.cli import main
from oqft.experiments import ConfigError, ExperimentConfig, emit_qfunction_grid

GOLDEN = Path(__file__).parent / "golden"
REGEN = os.environ.get("OQFT_REGEN_GOLDEN") == "1"

SMALL = {
    "qfunction-grid": {"state": {"kind": "vacuum"}, "window": 8.0, "spacing": 0.25},
    "oracle-vs-fbsde": {"T": 0.5, "n_traj": 2000, "dt": 0.01, "dim": 60},
    "amplifier-measurement": {"n_traj": 1000},
    "superposition": {"n_traj": 500, "weights": [0.25, 0.75]},
    "histories-demo": {},
}


def write_config(tmp_path, experiment, parameters=None, seed=7, **extra):
    doc = {"experiment": experiment, "parameters": parameters or {}, "seed": seed,
           "output_dir": str(tmp_path / "out"), **extra}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def run(tmp_path, experiment, parameters=None, seed=7, out="out"):
    cfg = write_config(tmp_path, experiment, parameters, seed)
    code = main(["run", str(cfg), "--out", str(tmp_path / out)])
    return code, tmp_path / out


def stable_report(path):
    doc = json.loads((path / "report.json").read_text())
    doc.pop("header")
    doc.pop("versions")
    doc["config"].pop("output_dir")
    return doc


def test_validate_ok(tmp_path, capsys):
    cfg = write_config(tmp_path, "histories-demo")
    assert main(["validate", str(cfg)]) == 0
    assert json.loads(capsys.readouterr().out)["valid"] is True


@pytest.mark.parametrize(
    "doc",
    [
        {"experiment": "histories-demo", "seed": 1, "colour": "red"},
        {"experiment": "nope", "seed": 1},
        {"experiment": "histories-demo", "parameters": {"omegaa": 1.0}, "seed": 1},
        {"experiment": "histories-demo", "seed": -1},
        {"experiment": "histories-demo", "seed": 2 ** 64},
    ],
)
def test_bad_configs_exit_2(tmp_path, capsys, doc):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    assert main(["validate", str(path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config" and err["exit_code"] == 2


def test_usage_errors_exit_2(tmp_path):
    assert main([]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["validate", str(bad)]) == 2
    cfg = write_config(tmp_path, "histories-demo")
    assert main(["run", str(cfg), "--seed", "abc"]) == 2


def test_uncovered_grid_is_config_error(tmp_path):
    code, _ = run(tmp_path, "qfunction-grid", {"state": {"kind": "coherent", "alpha": [3.0, 0.0]}, "window": 4.0})
    assert code == 2


def test_truncation_is_numerical_error(tmp_path, capsys):
    params = {"state": {"kind": "coherent", "alpha": [5.0, 0.0]}, "window": 20.0, "spacing": 0.5, "dim": 10}
    code, _ = run(tmp_path, "qfunction-grid", params)
    assert code == 3
    assert json.loads(capsys.readouterr().err)["type"] == "TruncationError"


def test_invariant_failure_exits_1(tmp_path):
    # a coarse grid cannot integrate to 1 within 1e-3
    code, out = run(tmp_path, "qfunction-grid", {"window": 8.0, "spacing": 4.0})
    assert code == 1
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "fail"
    assert report["invariants"] == {"normalization_within_1e-3": False}


def test_qfunction_grid_vacuum(tmp_path):
    code, out = run(tmp_path, "qfunction-grid", {})
    assert code == 0
    lines = (out / "qfunction.csv").read_text().splitlines()
    comments = [l for l in lines if l.startswith("#")]
    assert any("convention" in c for c in comments) and any("normalization" in c for c in comments)
    data = np.loadtxt(out / "qfunction.csv", delimiter=",", skiprows=len(comments) + 1)
    assert lines[len(comments)] == "x,p,Q"
    assert abs(data[:, 2].sum() * 0.05 * 0.05 / 4 - 1) <= 1e-3
    peak = data[np.argmax(data[:, 2])]
    assert peak[:2] == pytest.approx([0, 0], abs=1e-12)
    assert peak[2] == pytest.approx(1 / np.pi, rel=1e-12)
    report = json.loads((out / "report.json").read_text())
    assert report["schema"] == "oqft-report/1" and report["seed"] == 7
    assert set(report) >= {"header", "config", "results", "invariants", "versions", "status", "files"}


def test_coherent_peak():
    _, summary = emit_qfunction_grid({"kind": "coherent", "alpha": 1.0}, {"window": 8.0, "spacing": 0.05})
    assert (summary["peak"]["x"], summary["peak"]["p"]) == pytest.approx((2.0, 0.0), abs=1e-12)


def test_squeezed_variance_ratio():
    # operator variances e^{-2r} and e^{2r}: ratio e^{-4}
    _, s = emit_qfunction_grid({"kind": "squeezed", "squeeze_r": 1.0}, {"window": 20.0, "spacing": 0.1, "dim": 90})
    cov = np.asarray(s["q_cov"])
    assert (cov[0, 0] - 1) / (cov[1, 1] - 1) == pytest.approx(math.exp(-4), rel=1e-8)
    assert s["integral"] == pytest.approx(1, abs=1e-3)


def test_amplifier_report_mean(tmp_path):
    code, out = run(tmp_path, "amplifier-measurement", {"n_traj": 4000})
    assert code == 0
    rec = json.loads((out / "report.json").read_text())["results"]["record"]
    assert abs(rec["mean"] - math.e) <= 3 * rec["standard_error"]


def test_seed_override(tmp_path):
    cfg = write_config(tmp_path, "amplifier-measurement", {"n_traj": 200}, seed=1)
    assert main(["run", str(cfg), "--out", str(tmp_path / "a"), "--seed", "2"]) == 0
    assert main(["run", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "a" / "report.json").read_text())["seed"] == 2
    assert (tmp_path / "a" / "outcomes.csv").read_text() != (tmp_path / "b" / "outcomes.csv").read_text()


@pytest.mark.parametrize("experiment", sorted(SMALL))
def test_reruns_are_byte_identical(tmp_path, experiment):
    _, a = run(tmp_path, experiment, SMALL[experiment], out="a")
    _, b = run(tmp_path, experiment, SMALL[experiment], out="b")
    report = json.loads((a / "report.json").read_text())
    assert report["files"]
    for name in report["files"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert stable_report(a) == stable_report(b)


@pytest.mark.parametrize("experiment", sorted(SMALL))
def test_golden_outputs(tmp_path, experiment):
    code, out = run(tmp_path, experiment, SMALL[experiment])
    assert code == 0
    gold = GOLDEN / experiment
    report = stable_report(out)
    if REGEN:
        gold.mkdir(parents=True, exist_ok=True)
        for name in report["files"]:
            (gold / name).write_bytes((out / name).read_bytes())
        (gold / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    assert report == json.loads((gold / "report.json").read_text())
    for name in report["files"]:
        assert (out / name).read_bytes() == (gold / name).read_bytes()


def test_config_roundtrip():
    cfg = ExperimentConfig.from_json({"experiment": "superposition", "parameters": {"n_traj": 10}, "seed": 3})
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back.resolved_parameters() == cfg.resolved_parameters() and back.seed == 3
    assert cfg.resolved_parameters()["gain"] == pytest.approx(math.e ** 2)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json({"experiment": "superposition", "seed": 1.5})
