import csv
import json
import math
import subprocess
import sys

import pytest

from qnpower.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFY, SCHEMA_VERSION, build_parser, main, merge_config
from qnpower.exponent import CSV_COLUMNS

SET_OK = {"intervals": [{"l": 0.6, "r": 0.8, "lc": True, "rc": True}], "points": [0.3, 1.0]}


def run(tmp_path, command, config=None, *flags, name="out"):
    out = tmp_path / name
    argv = [command, "--out", str(out), *flags]
    if config is not None:
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(config) if not isinstance(config, str) else config)
        argv += ["--config", str(path)]
    return main(argv), out


def report(out):
    return json.loads((out / "report.json").read_text())


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- estimate-k -----------------------------------------------------------


def test_estimate_k_jordan(tmp_path, capsys):
    code, out = run(tmp_path, "estimate-k", {"operator": {"type": "jordan", "n": 4}, "vector": {"type": "basis", "index": 1}, "grid": {"lambda_min": 1e-4}})
    assert code == EXIT_OK
    rep = report(out)
    assert rep["schema_version"] == SCHEMA_VERSION and rep["command"] == "estimate-k"
    assert rep["slope"] == pytest.approx(0.75, abs=0.02)
    assert set(rep) >= {"slope", "slope_stderr", "ratio_tail_max", "flags"}
    rows = read_csv(out / "samples.csv")
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 1 + rep["sample_count"]
    assert json.loads(capsys.readouterr().out)["slope"] == rep["slope"]


def test_estimate_k_zero_operator(tmp_path):
    code, out = run(tmp_path, "estimate-k", {"operator": {"type": "explicit", "dim": 1, "bands": []}, "vector": {"type": "basis", "index": 0}})
    assert code == EXIT_OK
    assert report(out)["slope"] == pytest.approx(1, abs=1e-6)


def test_estimate_k_quotient(tmp_path):
    config = {
        "operator": {"type": "scaled", "factor": 0.3, "inner": {"type": "shift", "N": 200}},
        "denominator": {"type": "shift", "N": 200},
        "grid": {"lambda_min": 1e-3},
    }
    code, out = run(tmp_path, "estimate-k", config)
    assert code == EXIT_OK
    assert report(out)["slope"] == pytest.approx(0.3, abs=0.02)


def test_flags_override_config(tmp_path):
    config = {"operator": {"type": "jordan", "n": 3}, "vector": {"type": "basis", "index": 0}, "grid": {"count": 30}, "precision": {"seed": 1}}
    code, out = run(tmp_path, "estimate-k", config, "--grid-count", "9", "--seed", "5", "--bits", "160")
    assert code == EXIT_OK
    rep = report(out)
    assert rep["sample_count"] == 9 and rep["grid"]["count"] == 9
    assert rep["precision"]["seed"] == 5 and rep["precision"]["mantissa_bits"] == 160


def test_merge_config_order():
    args = build_parser().parse_args(["estimate-k", "--grid-max", "0.25", "--tol", "1e-12"])
    cfg = merge_config({"grid": {"lambda_max": 0.5, "ratio": 0.7}, "precision": {"power_iteration_tol": 1e-8}}, args)
    assert cfg["grid"] == {"lambda_max": 0.25, "ratio": 0.7}
    assert cfg["precision"]["power_iteration_tol"] == 1e-12


# --- verify-bounds --------------------------------------------------------


def test_verify_bounds_pass(tmp_path):
    config = {"tuples": [{"r": 1, "t": 10, "N": 200, "theta": [0, math.pi / 2]}], "monotone": [{"r1": 0.9, "r2": 0.3, "z": 0.05}]}
    code, out = run(tmp_path, "verify-bounds", config)
    assert code == EXIT_OK
    rep = report(out)
    assert rep["failed"] == 0
    assert [r["check"] for r in rep["rows"]] == ["sandwich", "rotation", "rotation", "monotone"]
    assert all(r["status"] == "pass" for r in rep["rows"])
    assert read_csv(out / "verify_bounds.csv")[0] == ["check", "r", "t", "N", "theta", "value", "lower", "upper", "rel_diff", "status"]


def test_verify_bounds_short_truncation_is_diagnostic(tmp_path):
    code, out = run(tmp_path, "verify-bounds", {"tuples": [{"r": 1, "t": 20, "N": 10}]})
    assert code == EXIT_OK
    rep = report(out)
    assert rep["rows"][0]["status"] == "diagnostic" and rep["diagnostics"] == 1


def test_verify_bounds_complex_monotone_point(tmp_path):
    code, out = run(tmp_path, "verify-bounds", {"monotone": [{"r1": 0.2, "r2": 0.6, "z": {"re": 0.0, "im": 0.1}, "N": 60}]})
    assert code == EXIT_OK and report(out)["rows"][0]["status"] == "pass"


def test_verify_bounds_needs_entries(tmp_path):
    assert run(tmp_path, "verify-bounds", {})[0] == EXIT_CONFIG


def test_numeric_failure_exit_code(tmp_path):
    config = {"tuples": [{"r": 1, "t": 10, "N": 100}], "precision": {"max_power_iterations": 1}}
    code, out = run(tmp_path, "verify-bounds", config)
    assert code == EXIT_NUMERIC
    assert json.loads((out / "error.json").read_text())["error"]["type"] == "numeric"


# --- synthesize -----------------------------------------------------------


def test_synthesize_end_to_end(tmp_path):
    code, out = run(tmp_path, "synthesize", {"set": SET_OK, "K": 6, "N": 200})
    assert code == EXIT_OK
    rep = report(out)
    assert rep["rates"] == [1.0, 0.3, 0.6, 0.75, 0.625, 0.6875]
    assert all(s["pass"] for s in rep["summands"]) and rep["all_summands"]["pass"]
    operator = json.loads((out / "operator.json").read_text())["operator"]
    assert operator["type"] == "direct_sum" and len(operator["parts"]) == 6


@pytest.mark.parametrize(
    "target, needle",
    [({"intervals": [{"l": 0.5, "r": 1, "lc": False, "rc": False}]}, "not right closed"), ({"points": [0.5]}, "must contain 1")],
)
def test_synthesize_rejections(tmp_path, capsys, target, needle):
    code, out = run(tmp_path, "synthesize", {"set": target})
    assert code == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert needle in err["error"]["message"]
    assert json.loads((out / "error.json").read_text()) == err


def test_synthesize_verification_failure(tmp_path):
    code, out = run(tmp_path, "synthesize", {"set": SET_OK, "K": 3, "N": 100, "tolerance": 1e-9})
    assert code == EXIT_VERIFY
    assert report(out)["passed"] is False


# --- volterra-compare -----------------------------------------------------


def test_volterra_compare_accuracy(tmp_path):
    code, out = run(tmp_path, "volterra-compare", {"alphas": [0.0], "lambdas": [-0.5], "Ns": [2000], "tolerance": 0.01})
    assert code == EXIT_OK
    rows = read_csv(out / "volterra_N2000.csv")
    assert rows[0] == ["alpha", "lambda", "closed_form_log_norm_sq", "matrix_log_norm_sq", "rel_error"]
    assert float(rows[1][4]) < 0.01


def test_volterra_compare_halving(tmp_path):
    code, out = run(tmp_path, "volterra-compare", {"alphas": [0.0, 0.25, 0.5], "Ns": [500, 1000, 2000]})
    assert code == EXIT_OK
    for r in report(out)["error_ratios"]:
        assert 0.3 <= 1 / r["error_ratio"] <= 0.7


def test_volterra_compare_k_estimates(tmp_path):
    code, out = run(tmp_path, "volterra-compare", {"alphas": [0.5], "Ns": [200], "target": "g_alpha", "lambdas": [-0.2], "k_alphas": [0, 0.25, 0.5]})
    assert code == EXIT_OK
    for k in report(out)["k_estimates"]:
        assert k["slope_lower"] == pytest.approx(k["oracle"], abs=0.03)
        assert k["slope_upper"] == pytest.approx(k["oracle"], abs=0.03)


@pytest.mark.parametrize("config", [{"lambdas": [0.2]}, {"target": "h"}, {"alphas": [1.5]}])
def test_volterra_compare_config_errors(tmp_path, config):
    assert run(tmp_path, "volterra-compare", {"Ns": [50], **config})[0] == EXIT_CONFIG


# --- sweep ----------------------------------------------------------------


def test_sweep_cartesian_product(tmp_path):
    config = {
        "command": "estimate-k",
        "base": {"vector": {"type": "basis", "index": 0}, "grid": {"count": 12}},
        "vary": {"operator.n": [2, 3], "grid.ratio": [0.7, 0.8]},
    }
    code, out = run(tmp_path, "sweep", {**config, "base": {**config["base"], "operator": {"type": "jordan"}}}, "--grid-count", "10")
    assert code == EXIT_OK
    sweep = json.loads((out / "sweep.json").read_text())
    assert [r["params"] for r in sweep["runs"]] == [
        {"grid.ratio": 0.7, "operator.n": 2},
        {"grid.ratio": 0.7, "operator.n": 3},
        {"grid.ratio": 0.8, "operator.n": 2},
        {"grid.ratio": 0.8, "operator.n": 3},
    ]
    for i in range(4):
        rep = report(out / f"run_{i:04d}")
        assert rep["sample_count"] == 10
        assert rep["slope"] == pytest.approx(1, abs=0.02)


def test_sweep_propagates_worst_exit(tmp_path):
    config = {"command": "estimate-k", "base": {"vector": {"type": "basis", "index": 2}, "grid": {"count": 8}}, "vary": {"operator": [{"type": "jordan", "n": 3}, {"type": "jordan", "n": 2}]}}
    code, out = run(tmp_path, "sweep", config)
    assert code == EXIT_CONFIG
    runs = json.loads((out / "sweep.json").read_text())["runs"]
    assert [r["exit_code"] for r in runs] == [EXIT_OK, EXIT_CONFIG]


@pytest.mark.parametrize("config", [{"command": "sweep"}, {"command": "estimate-k", "vary": {"x": []}}, {}])
def test_sweep_config_errors(tmp_path, config):
    assert run(tmp_path, "sweep", config)[0] == EXIT_CONFIG


# --- errors and reproducibility -------------------------------------------


@pytest.mark.parametrize(
    "config",
    [
        "{not json",
        "[1, 2]",
        {"operator": {"type": "nope"}, "vector": {"type": "basis", "index": 0}},
        {"operator": {"type": "jordan", "n": 3}},
        {"operator": {"type": "jordan", "n": 3}, "vector": {"type": "basis", "index": 7}},
        {"operator": {"type": "jordan", "n": 3}, "vector": {"type": "basis", "index": 0}, "grid": {"ratio": 2}},
        {"operator": {"type": "jordan", "n": 3}, "vector": {"type": "basis", "index": 0}, "precision": {"bits": 64}},
    ],
)
def test_config_errors(tmp_path, config):
    assert run(tmp_path, "estimate-k", config)[0] == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert main(["estimate-k", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_short_grid_is_numeric_failure(tmp_path):
    config = {"operator": {"type": "jordan", "n": 3}, "vector": {"type": "basis", "index": 0}, "grid": {"count": 4}}
    assert run(tmp_path, "estimate-k", config)[0] == EXIT_NUMERIC


def test_reruns_are_byte_identical(tmp_path):
    config = {"set": SET_OK, "K": 4, "N": 80}
    _, a = run(tmp_path, "synthesize", config, name="a")
    _, b = run(tmp_path, "synthesize", config, name="b")
    for f in ("report.json", "operator.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qnpower.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "qnpower" in proc.stdout
