"""Command-line front end.

Every command reads an optional JSON config, applies command-line overrides
(defaults < config file < flags), writes CSV/JSON artifacts into ``--out``
and exits with 0 (ok), 2 (config error), 3 (numeric failure) or
4 (verification failure).
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import math
import sys
from pathlib import Path

from . import __version__
from .exponent import LambdaGrid, estimate_k, sample_curve, sample_curves, sample_quotient_curve, write_samples_csv
from .numerics import PrecisionContext
from .operators import (
    BasisVector,
    Dense,
    DirectSum,
    Scaled,
    SummandVector,
    WeightedShiftA,
    spec_from_json,
    spec_to_json,
    vector_from_json,
)
from .resolvent import ConvergenceError, ResolventError, resolvent_norm, shift_norm_bounds
from .synthesis import RightClosedSetRep, build_power_set_operator, is_right_closed
from .volterra import (
    Indicator,
    IndicatorImage,
    estimate_k_g_alpha,
    f_alpha_resolvent_norm_sq_neg,
    h_alpha_norm_sq,
    k_g_alpha_oracle,
    matrix_resolvent_log_norm_sq,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4


class ConfigError(ValueError):
    pass


class VerificationFailed(Exception):
    pass


# ---------------------------------------------------------------------------
# config handling


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def merge_config(config: dict, args) -> dict:
    """Apply flag overrides on top of a config dict (returns a new dict)."""
    cfg = copy.deepcopy(config)
    precision = cfg.setdefault("precision", {})
    for flag, key in (("bits", "mantissa_bits"), ("tol", "power_iteration_tol"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            precision[key] = value
    grid = cfg.setdefault("grid", {})
    for flag, key in (("grid_max", "lambda_max"), ("grid_ratio", "ratio"), ("grid_count", "count"), ("theta", "theta")):
        value = getattr(args, flag, None)
        if value is not None:
            grid[key] = value
    if getattr(args, "grid_count", None) is not None:
        grid.pop("lambda_min", None)
    return cfg


def _context(cfg) -> PrecisionContext:
    fields = cfg.get("precision", {})
    unknown = set(fields) - {"mantissa_bits", "power_iteration_tol", "max_power_iterations", "seed"}
    if unknown:
        raise ConfigError(f"unknown precision fields: {sorted(unknown)}")
    try:
        return PrecisionContext(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad precision settings: {exc}") from exc


def _grid(cfg, key="grid") -> LambdaGrid:
    fields = dict(cfg.get(key, {}))
    unknown = set(fields) - {"lambda_max", "ratio", "count", "theta", "lambda_min"}
    if unknown:
        raise ConfigError(f"unknown grid fields: {sorted(unknown)}")
    try:
        if "lambda_min" in fields:
            lambda_min = fields.pop("lambda_min")
            fields.pop("count", None)
            return LambdaGrid.down_to(lambda_min, **fields)
        return LambdaGrid(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid settings: {exc}") from exc


def _require(cfg, key):
    if key not in cfg:
        raise ConfigError(f"config is missing '{key}'")
    return cfg[key]


def _spec(cfg, key):
    try:
        return spec_from_json(_require(cfg, key))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad operator '{key}': {exc}") from exc


def _vector(cfg, key="vector"):
    try:
        return vector_from_json(_require(cfg, key))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad vector '{key}': {exc}") from exc


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n", encoding="utf-8")


def _report(command, ctx, **fields) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "precision": ctx.to_dict(), **fields}


def _rel(a_log: float, b_log: float) -> float:
    """Relative difference of two magnitudes given by their logs."""
    return abs(math.expm1(a_log - b_log))


def _shift(r, N):
    return WeightedShiftA(N) if r == 1 else Scaled(r, WeightedShiftA(N))


# ---------------------------------------------------------------------------
# commands


def cmd_estimate_k(cfg: dict, out: Path) -> dict:
    """Estimate k_x for one (operator, vector); or, with a ``denominator``
    operator, the slope of one resolvent norm against another."""
    ctx = _context(cfg)
    grid = _grid(cfg)
    spec = _spec(cfg, "operator")
    certify = bool(cfg.get("certify", True))
    if "denominator" in cfg:
        x = _vector(cfg) if "vector" in cfg else None
        curve = sample_quotient_curve(spec, _spec(cfg, "denominator"), grid, ctx, x=x, certify=certify)
    else:
        curve = sample_curve(spec, _vector(cfg), grid, ctx, certify=certify)
    with open(out / "samples.csv", "w", encoding="utf-8", newline="") as fh:
        write_samples_csv(curve, fh)
    est = _estimate(curve)
    report = _report("estimate-k", ctx, grid=grid.to_dict(), stopped_at=curve.stopped_at, **est.to_dict())
    _write_json(out / "report.json", report)
    return report


def _estimate(curve):
    try:
        return estimate_k(curve)
    except ValueError as exc:
        raise ArithmeticError(f"estimator failed: {exc} (grid stopped: {curve.stop_reason})") from exc


def _sandwich_row(r, t, N, ctx):
    value = resolvent_norm(_shift(r, N), 1 / t, ctx).log
    lower, upper = (b.log for b in shift_norm_bounds(r, t, ctx))
    ok = lower - 1e-6 <= value <= upper + 1e-6
    status = "pass" if ok else ("diagnostic" if N < 10 * r * t else "fail")
    return {"check": "sandwich", "r": r, "t": t, "N": N, "theta": 0.0, "value": value,
            "lower": lower, "upper": upper, "rel_diff": None, "status": status}


def _rotation_row(r, t, N, theta, ctx):
    spec = _shift(r, N)
    base = resolvent_norm(spec, 1 / t, ctx).log
    z = complex(math.cos(theta), math.sin(theta)) / t
    value = resolvent_norm(spec, z, ctx).log
    diff = _rel(value, base)
    return {"check": "rotation", "r": r, "t": t, "N": N, "theta": theta, "value": value,
            "lower": None, "upper": None, "rel_diff": diff, "status": "pass" if diff <= 1e-8 else "fail"}


def _monotone_row(r1, r2, z, N, ctx):
    hi, lo = (r1, r2) if r1 >= r2 else (r2, r1)
    big = resolvent_norm(_shift(hi, N), z, ctx).log
    small = resolvent_norm(_shift(lo, N), z, ctx).log
    ok = big >= small - 1e-9
    return {"check": "monotone", "r": f"{hi}>{lo}", "t": 1 / abs(z), "N": N, "theta": math.atan2(z.imag, z.real) % (2 * math.pi),
            "value": big, "lower": small, "upper": None, "rel_diff": None, "status": "pass" if ok else "fail"}


def _complex_field(v):
    if isinstance(v, dict):
        return complex(float(v["re"]), float(v["im"]))
    return complex(float(v))


def cmd_verify_bounds(cfg: dict, out: Path) -> dict:
    """Sandwich, rotation and monotonicity checks for scaled weighted shifts.

    Config: ``tuples`` of ``{r, t, N, theta: [..]}`` and ``monotone`` entries
    ``{r1, r2, z, N}``.  Sandwich failures with ``N < 10 r t`` are reported
    as diagnostics: the truncation is too short to reach the bound.
    """
    ctx = _context(cfg)
    tuples = cfg.get("tuples", [])
    monotone = cfg.get("monotone", [])
    if not tuples and not monotone:
        raise ConfigError("verify-bounds needs 'tuples' and/or 'monotone'")
    rows = []
    try:
        for item in tuples:
            r, t, N = float(item.get("r", 1.0)), float(item["t"]), int(item["N"])
            rows.append(_sandwich_row(r, t, N, ctx))
            thetas = item.get("theta", [])
            for theta in thetas if isinstance(thetas, list) else [thetas]:
                rows.append(_rotation_row(r, t, N, float(theta), ctx))
        for item in monotone:
            rows.append(_monotone_row(float(item["r1"]), float(item["r2"]), _complex_field(item["z"]), int(item.get("N", 200)), ctx))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed verify-bounds entry: {exc!r}") from exc
    columns = ["check", "r", "t", "N", "theta", "value", "lower", "upper", "rel_diff", "status"]
    with open(out / "verify_bounds.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c]) for c in columns])
    failed = sum(row["status"] == "fail" for row in rows)
    report = _report("verify-bounds", ctx, rows=rows, failed=failed,
                     diagnostics=sum(row["status"] == "diagnostic" for row in rows))
    _write_json(out / "report.json", report)
    if failed:
        raise VerificationFailed(f"{failed} bound check(s) failed")
    return report


def cmd_synthesize(cfg: dict, out: Path) -> dict:
    """Build the direct sum realizing a right-closed set and check each
    summand's estimated exponent against its rate."""
    ctx = _context(cfg)
    grid = _grid(cfg)
    try:
        S = RightClosedSetRep.from_json(_require(cfg, "set"))
        K, N = int(cfg.get("K", 12)), int(cfg.get("N", 300))
        if not is_right_closed(S):
            raise ConfigError(f"{S!r} is not right closed")
        if 1.0 not in S:
            raise ConfigError("the set must contain 1: the realization needs a summand with rate 1")
        spec = build_power_set_operator(S, K, N)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tol = float(cfg.get("tolerance", 0.03))
    rates = [p.factor for p in spec.parts]
    _write_json(out / "operator.json", {"schema_version": SCHEMA_VERSION, "operator": spec_to_json(spec)})
    xs = [SummandVector(k, BasisVector(0)) for k in range(len(rates))]
    xs.append(_all_summand_vector(spec))
    curves = sample_curves(spec, xs, grid, ctx, certify=bool(cfg.get("certify", True)))
    summands = []
    for k, (rate, curve) in enumerate(zip(rates, curves)):
        est = _estimate(curve)
        err = abs(est.slope - rate)
        summands.append({"part": k, "rate": rate, "slope": est.slope, "slope_stderr": est.slope_stderr,
                         "abs_error": err, "pass": err <= tol, "flags": list(est.flags)})
    whole = _estimate(curves[-1])
    oracle = max(rates)
    all_summands = {"oracle": oracle, "slope": whole.slope, "abs_error": abs(whole.slope - oracle),
                    "pass": abs(whole.slope - oracle) <= tol, "flags": list(whole.flags)}
    ok = all(s["pass"] for s in summands) and all_summands["pass"]
    report = _report("synthesize", ctx, set=S.to_json(), K=K, N=N, rates=rates, tolerance=tol,
                     grid=grid.to_dict(), summands=summands, all_summands=all_summands, passed=ok)
    _write_json(out / "report.json", report)
    if not ok:
        raise VerificationFailed("some summand estimates miss their rates")
    return report


def _all_summand_vector(spec: DirectSum):
    return Dense(tuple([1.0] * sum(p.dim for p in spec.parts)))


def cmd_volterra_compare(cfg: dict, out: Path) -> dict:
    """Closed-form resolvent norms on ``f_alpha`` (or ``g_alpha``) against
    the discretized operator, one CSV per grid size."""
    ctx = _context(cfg)
    alphas = [float(a) for a in cfg.get("alphas", [0.0, 0.3, 0.7])]
    lambdas = [float(v) for v in cfg.get("lambdas", [-0.2])]
    sizes = [int(n) for n in cfg.get("Ns", [500, 1000, 2000])]
    target = cfg.get("target", "f_alpha")
    if target not in ("f_alpha", "g_alpha"):
        raise ConfigError("target must be 'f_alpha' or 'g_alpha'")
    if target == "f_alpha" and any(v >= 0 for v in lambdas):
        raise ConfigError("the f_alpha closed form needs negative lambdas")
    errors = {}
    try:
        closed = {(a, v): (f_alpha_resolvent_norm_sq_neg(a, v, ctx) if target == "f_alpha" else h_alpha_norm_sq(a, v, ctx)).log
                  for a in alphas for v in lambdas}
        for N in sizes:
            with open(out / f"volterra_N{N}.csv", "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["alpha", "lambda", "closed_form_log_norm_sq", "matrix_log_norm_sq", "rel_error"])
                for a in alphas:
                    f = Indicator(a) if target == "f_alpha" else IndicatorImage(a)
                    for v in lambdas:
                        m = matrix_resolvent_log_norm_sq(f, v, N, ctx)
                        err = _rel(m, closed[(a, v)])
                        errors[(N, a, v)] = err
                        w.writerow([repr(a), repr(v), repr(closed[(a, v)]), repr(m), repr(err)])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    by_n = {str(N): max(errors[(N, a, v)] for a in alphas for v in lambdas) for N in sizes}
    ratios = [{"alpha": a, "lambda": v, "N": N2, "error_ratio": errors[(N1, a, v)] / errors[(N2, a, v)]}
              for N1, N2 in zip(sizes, sizes[1:]) for a in alphas for v in lambdas if errors[(N2, a, v)] > 0]
    k_estimates = []
    if "k_alphas" in cfg:
        grid = _grid(cfg)
        for a in cfg["k_alphas"]:
            est = estimate_k_g_alpha(float(a), grid, ctx)
            k_estimates.append({"alpha": float(a), "oracle": k_g_alpha_oracle(float(a)),
                                "slope_lower": est.against_lower.slope, "slope_upper": est.against_upper.slope})
    report = _report("volterra-compare", ctx, target=target, max_rel_error=by_n, error_ratios=ratios,
                     k_estimates=k_estimates)
    _write_json(out / "report.json", report)
    tol = cfg.get("tolerance")
    if tol is not None and by_n[str(sizes[-1])] > float(tol):
        raise VerificationFailed(f"max relative error {by_n[str(sizes[-1])]} exceeds {tol}")
    return report


def _set_path(cfg: dict, dotted: str, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def cmd_sweep(cfg: dict, out: Path, flags=None) -> dict:
    """Run one command over the cartesian product of ``vary`` values.

    Config: ``{"command": ..., "base": {...}, "vary": {"dotted.path": [...]}}``.
    Each run goes to ``out/run_NNNN``.
    """
    command = _require(cfg, "command")
    if command not in COMMANDS or command == "sweep":
        raise ConfigError(f"sweep cannot run command {command!r}")
    base = cfg.get("base", {})
    vary = cfg.get("vary", {})
    if not isinstance(vary, dict) or not all(isinstance(v, list) and v for v in vary.values()):
        raise ConfigError("'vary' must map dotted config paths to nonempty lists")
    keys = sorted(vary)
    runs = []
    worst = EXIT_OK
    for i, combo in enumerate(itertools.product(*(vary[k] for k in keys))):
        run_cfg = copy.deepcopy(base)
        for k, v in zip(keys, combo):
            _set_path(run_cfg, k, v)
        if flags is not None:
            run_cfg = merge_config(run_cfg, flags)
        run_dir = out / f"run_{i:04d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_json(run_dir / "config.json", run_cfg)
        code, payload = _run(command, run_cfg, run_dir)
        worst = max(worst, code)
        runs.append({"run": i, "params": dict(zip(keys, combo)), "exit_code": code,
                     "error": payload.get("error") if code else None})
    report = {"schema_version": SCHEMA_VERSION, "command": "sweep", "inner_command": command, "runs": runs}
    _write_json(out / "sweep.json", report)
    if worst != EXIT_OK:
        raise _SweepExit(worst)
    return report


class _SweepExit(Exception):
    def __init__(self, code):
        super().__init__(f"at least one sweep run exited with {code}")
        self.code = code


COMMANDS = {
    "estimate-k": cmd_estimate_k,
    "verify-bounds": cmd_verify_bounds,
    "synthesize": cmd_synthesize,
    "volterra-compare": cmd_volterra_compare,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------
# entry point


def _run(command, cfg, out: Path, flags=None):
    """Run a command and map failures to (exit code, error payload)."""
    try:
        if command == "sweep":
            return EXIT_OK, cmd_sweep(cfg, out, flags)
        return EXIT_OK, COMMANDS[command](cfg, out)
    except ConfigError as exc:
        return EXIT_CONFIG, _error("config", exc)
    except VerificationFailed as exc:
        return EXIT_VERIFY, _error("verification", exc)
    except _SweepExit as exc:
        return exc.code, _error("sweep", exc)
    except (ConvergenceError, ResolventError, ArithmeticError) as exc:
        return EXIT_NUMERIC, _error("numeric", exc)
    except (ValueError, IndexError, TypeError, KeyError) as exc:
        # remaining input validation failures raised below the config layer
        return EXIT_CONFIG, _error("config", exc)


def _error(kind, exc) -> dict:
    payload = {"type": kind, "message": str(exc)}
    lam = getattr(exc, "lam", None)
    if lam is not None:
        payload["lambda"] = str(lam)
    return {"schema_version": SCHEMA_VERSION, "error": payload}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qnpower", description="Power-set exponents of quasinilpotent operators.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", default="qnpower_out", help="output directory (default: qnpower_out)")
    common.add_argument("--bits", type=int, help="mantissa bits")
    common.add_argument("--tol", type=float, help="power-iteration tolerance")
    common.add_argument("--seed", type=int, help="power-iteration seed")
    common.add_argument("--grid-max", dest="grid_max", type=float, help="largest |lambda|")
    common.add_argument("--grid-ratio", dest="grid_ratio", type=float, help="geometric ratio of the grid")
    common.add_argument("--grid-count", dest="grid_count", type=int, help="number of grid points")
    common.add_argument("--theta", type=float, help="direction of the radial path")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=" ".join((fn.__doc__ or "").strip().split("\n\n")[0].split()))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        raw = _load_config(args.config)
        # sweep applies flags per run, after the varied values
        cfg = raw if args.command == "sweep" else merge_config(raw, args)
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        code, payload = EXIT_CONFIG, _error("config", exc)
    else:
        code, payload = _run(args.command, cfg, out, flags=args)
    if code != EXIT_OK:
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        if out.is_dir():
            _write_json(out / "error.json", payload)
    else:
        print(json.dumps(_summary(payload), sort_keys=True))
    return code


def _summary(report: dict) -> dict:
    keep = ("command", "slope", "slope_stderr", "ratio_tail_max", "flags", "failed", "passed", "max_rel_error")
    return {k: report[k] for k in keep if k in report}


if __name__ == "__main__":
    sys.exit(main())
