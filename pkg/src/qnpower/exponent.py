"""Radial-path estimation of the exponent

    k_x = limsup_{lam -> 0} ln||(lam - T)^{-1} x|| / ln||(lam - T)^{-1}||.

The headline estimate is the least-squares slope of ``ln||Rx||`` against
``ln||R||`` over the final third of a geometric grid ``lam_j = lam_max q^j
e^{i theta}``.  Additive constants cancel in the slope, so it converges
geometrically in ``j`` while the raw ratio converges like ``1/ln(1/|lam|)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

from .numerics import DEFAULT_CONTEXT, PrecisionContext, working_precision
from .operators import vector_coefficients
from .resolvent import (
    ConvergenceError,
    ResolventError,
    as_action,
    resolvent_apply,
    resolvent_norm,
    rotation_reduce,
    shift_family_lower_bound,
    shift_family_rates,
)

__all__ = [
    "LambdaGrid",
    "Sample",
    "SampleCurve",
    "KEstimate",
    "sample_curve",
    "sample_curves",
    "sample_quotient_curve",
    "estimate_k",
    "k_direct_sum_oracle",
    "samples_to_csv",
    "write_samples_csv",
    "CSV_COLUMNS",
    "NORM_LOG_LIMIT",
    "CERTIFY_SLACK",
]

CSV_COLUMNS = ("lambda_modulus", "theta", "log_norm_resolvent", "log_norm_resolvent_x", "ratio")

# Grid floor: stop once ln||R|| exceeds this.
NORM_LOG_LIMIT = 1e7
# A truncated shift-family norm below the untruncated lower bound by more
# than this (in log) means N is too small for the current |lam|.
CERTIFY_SLACK = 1e-6


@dataclass(frozen=True)
class LambdaGrid:
    """Geometric radial path ``lam_j = lambda_max * ratio**j * e^{i theta}``."""

    lambda_max: float = 0.5
    ratio: float = 0.8
    count: int = 40
    theta: float = 0.0

    def __post_init__(self):
        if not (self.lambda_max > 0 and math.isfinite(self.lambda_max)):
            raise ValueError("lambda_max must be positive and finite")
        if not 0 < self.ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        if int(self.count) != self.count or self.count < 1:
            raise ValueError("count must be a positive integer")
        if not 0 <= self.theta < 2 * math.pi:
            raise ValueError("theta must lie in [0, 2 pi)")
        if not self.lambda_max * self.ratio ** (self.count - 1) > 0:
            raise ValueError("the grid underflows to lambda = 0; use fewer points or a larger ratio")

    @classmethod
    def down_to(cls, lambda_min: float, lambda_max: float = 0.5, ratio: float = 0.8, theta: float = 0.0):
        """Shortest grid whose last modulus is at or below ``lambda_min``."""
        if not 0 < lambda_min <= lambda_max:
            raise ValueError("need 0 < lambda_min <= lambda_max")
        count = 1 + math.ceil(math.log(lambda_min / lambda_max) / math.log(ratio) - 1e-12)
        return cls(lambda_max, ratio, max(count, 1), theta)

    def moduli(self) -> list[float]:
        return [self.lambda_max * self.ratio**j for j in range(self.count)]

    def points(self) -> list[complex]:
        rot = complex(math.cos(self.theta), math.sin(self.theta))
        return [m if self.theta == 0 else m * rot for m in self.moduli()]

    def to_dict(self) -> dict:
        return {"lambda_max": self.lambda_max, "ratio": self.ratio, "count": self.count, "theta": self.theta}


@dataclass(frozen=True)
class Sample:
    lambda_modulus: float
    theta: float
    log_norm_resolvent: float
    log_norm_resolvent_x: float
    ratio: float

    def row(self) -> tuple:
        return (self.lambda_modulus, self.theta, self.log_norm_resolvent, self.log_norm_resolvent_x, self.ratio)


@dataclass
class SampleCurve:
    """Samples in grid order, plus why (and where) the grid was cut short."""

    samples: list[Sample]
    requested: int
    stop_reason: str | None = None
    stopped_at: float | None = None

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def flags(self) -> tuple[str, ...]:
        return () if self.stop_reason is None else (f"truncated:{self.stop_reason}",)


@dataclass(frozen=True)
class KEstimate:
    ratio_tail_max: float
    slope: float
    slope_stderr: float
    samples: tuple[Sample, ...]
    tail_size: int
    flags: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "ratio_tail_max": self.ratio_tail_max,
            "tail_size": self.tail_size,
            "sample_count": len(self.samples),
            "flags": list(self.flags),
        }


def _ratio(num: float, den: float) -> float:
    return num / den if den != 0 else math.nan


def _unit(x, action, ctx):
    """Unit-norm coefficient list for x at working precision."""
    with working_precision(ctx):
        if isinstance(x, (list, tuple)):
            coeffs = [c if isinstance(c, (mpfr, mpc)) else (mpc(c) if isinstance(c, complex) else mpfr(c)) for c in x]
            if len(coeffs) != action.dim:
                raise ValueError(f"vector has {len(coeffs)} coefficients, operator dimension is {action.dim}")
        else:
            coeffs = vector_coefficients(x, action.spec)
        s = mpfr(0)
        for c in coeffs:
            s += gmpy2.norm(c) if isinstance(c, mpc) else c * c
        if s == 0:
            raise ResolventError("x must be nonzero")
        n = gmpy2.sqrt(s)
        return [c / n for c in coeffs]


class _NormProbe:
    """Evaluates ln||R(lam)|| for one operator with rotation reduction and
    truncation certification where licensed."""

    def __init__(self, spec, ctx, certify):
        self.action = as_action(spec, ctx)
        self.spec = self.action.spec
        self.ctx = ctx
        self.reducible = self.spec is not None and shift_family_rates(self.spec) is not None
        self.certify = certify and self.reducible

    def __call__(self, lam, modulus):
        """Return (log_norm, stop_reason); stop_reason is None when usable."""
        target = rotation_reduce(self.spec, lam) if self.reducible else lam
        try:
            log_norm = resolvent_norm(self.action, target, self.ctx).log
        except ConvergenceError:
            return None, "power_iteration"
        if log_norm > NORM_LOG_LIMIT:
            return None, "norm_limit"
        if self.certify:
            lower = shift_family_lower_bound(self.spec, 1.0 / modulus, self.ctx).log
            if log_norm < lower - CERTIFY_SLACK:
                return None, "truncation"
        return log_norm, None


def sample_curves(
    spec,
    xs,
    grid: LambdaGrid,
    ctx: PrecisionContext | None = None,
    *,
    certify: bool = True,
) -> list[SampleCurve]:
    """Sample several vectors against one operator, sharing the norm evaluations.

    Each vector is normalized to unit length.  The denominator of every
    sample is ``max(power-iteration estimate, ||Rx||)``: both are lower
    bounds for ``||R||`` and the max keeps every ratio at most 1.  With
    ``certify`` on, shift-family grids stop at the first ``|lam|`` where the
    truncated norm falls below the untruncated lower bound.
    """
    ctx = ctx or DEFAULT_CONTEXT
    probe = _NormProbe(spec, ctx, certify)
    units = [_unit(x, probe.action, ctx) for x in xs]
    curves = [SampleCurve([], grid.count) for _ in units]
    for modulus, lam in zip(grid.moduli(), grid.points()):
        log_norm, stop = probe(lam, modulus)
        if stop is not None:
            for c in curves:
                c.stop_reason, c.stopped_at = stop, modulus
            break
        for unit, curve in zip(units, curves):
            try:
                log_rx = resolvent_apply(probe.action, lam, unit, ctx).log_scale.log
            except ResolventError as exc:
                exc.lam = lam
                raise
            den = max(log_norm, log_rx)
            curve.samples.append(Sample(modulus, grid.theta, den, log_rx, _ratio(log_rx, den)))
    return curves


def sample_curve(spec, x, grid: LambdaGrid, ctx: PrecisionContext | None = None, *, certify: bool = True) -> SampleCurve:
    return sample_curves(spec, [x], grid, ctx, certify=certify)[0]


def sample_quotient_curve(
    numerator,
    denominator,
    grid: LambdaGrid,
    ctx: PrecisionContext | None = None,
    *,
    x=None,
    certify: bool = True,
) -> SampleCurve:
    """Samples of ``ln||R_num(lam) [x]||`` against ``ln||R_den(lam)||``.

    Without ``x`` the numerator is the full resolvent norm of ``numerator``.
    """
    ctx = ctx or DEFAULT_CONTEXT
    den_probe = _NormProbe(denominator, ctx, certify)
    num_probe = _NormProbe(numerator, ctx, certify)
    unit = None if x is None else _unit(x, num_probe.action, ctx)
    curve = SampleCurve([], grid.count)
    for modulus, lam in zip(grid.moduli(), grid.points()):
        den, stop = den_probe(lam, modulus)
        if stop is None:
            if unit is None:
                num, stop = num_probe(lam, modulus)
            else:
                num = resolvent_apply(num_probe.action, lam, unit, ctx).log_scale.log
        if stop is not None:
            curve.stop_reason, curve.stopped_at = stop, modulus
            break
        curve.samples.append(Sample(modulus, grid.theta, den, num, _ratio(num, den)))
    return curve


def estimate_k(samples) -> KEstimate:
    """Slope and tail-max ratio over the last ``ceil(n/3)`` samples."""
    flags = tuple(getattr(samples, "flags", ()))
    samples = tuple(samples)
    n = len(samples)
    if n < 6:
        raise ValueError(f"need at least 6 samples, got {n}")
    tail = samples[n - math.ceil(n / 3):]
    xs = np.array([s.log_norm_resolvent for s in tail])
    ys = np.array([s.log_norm_resolvent_x for s in tail])
    dx = xs - xs.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise ValueError("degenerate regression: all log||R|| values in the tail are equal")
    slope = float(dx @ (ys - ys.mean())) / sxx
    resid = ys - ys.mean() - slope * dx
    m = len(tail)
    stderr = math.sqrt(float(resid @ resid) / (m - 2) / sxx) if m > 2 else 0.0
    return KEstimate(
        ratio_tail_max=max(s.ratio for s in tail),
        slope=slope,
        slope_stderr=stderr,
        samples=samples,
        tail_size=m,
        flags=flags,
    )


def k_direct_sum_oracle(rates, support) -> float:
    """``sup{rates[k] : k in support}``: the exponent of a vector of a
    direct sum of scaled shifts whose nonzero components sit on ``support``."""
    support = set(support)
    if not support:
        raise ValueError("support must be nonempty")
    for k in support:
        if not 0 <= k < len(rates):
            raise IndexError(f"part index {k} out of range")
    return max(float(rates[k]) for k in support)


def samples_to_csv(samples) -> str:
    buf = io.StringIO()
    write_samples_csv(samples, buf)
    return buf.getvalue()


def write_samples_csv(samples, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in samples:
        w.writerow([repr(float(v)) for v in s.row()])
