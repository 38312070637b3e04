"""Closed forms for the Volterra operator ``(Vf)(t) = int_0^t f(s) ds`` on L2[0, 1].

Notation used throughout:

* ``f_alpha``: indicator of ``[alpha, 1]``.
* ``g_alpha = V f_alpha``: ``max(0, t - alpha)``.
* ``Phi_{f,u}(z) = int_0^u f(s) e^{(u-s) z} ds``.

``(lam - V)^{-1} V f (t) = Phi_{f,t}(1/lam) / lam``, which is what makes the
resolvent on ``g_alpha`` explicit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

from .exponent import KEstimate, LambdaGrid, Sample, SampleCurve, estimate_k
from .numerics import GUARD_BITS, LogMagnitude, PrecisionContext, working_precision
from .operators import VolterraGrid, materialize
from .resolvent import ResolventError, volterra_norm_upper

__all__ = [
    "SampledFunction",
    "Constant",
    "Indicator",
    "IndicatorImage",
    "Polynomial",
    "GridSamples",
    "VOLTERRA_NORM",
    "phi",
    "resolvent_Vf_pointwise",
    "h_alpha_norm_sq",
    "f_alpha_resolvent_norm_sq_neg",
    "g_alpha_norm_sq",
    "k_g_alpha_oracle",
    "WitnessResult",
    "growth_witness",
    "matrix_resolvent_log_norm_sq",
    "GAlphaEstimate",
    "estimate_k_g_alpha",
]

VOLTERRA_NORM = 2 / math.pi

# Above this Re(z) u the integrand leaves double range.
_MACHINE_EXP_LIMIT = 700.0
# Panel width times |z| is kept at or below this.
_MAX_PANEL_PHASE = 16.0


# ---------------------------------------------------------------------------
# functions on [0, 1]


class SampledFunction:
    """A real function on [0, 1] evaluable on numpy arrays.

    ``breakpoints`` lists interior points where the function or a
    derivative jumps; quadrature panels never straddle them.
    """

    breakpoints: tuple[float, ...] = ()

    def __call__(self, s):
        raise NotImplementedError

    def l2_norm(self) -> float:
        raise NotImplementedError

    def is_zero(self) -> bool:
        return self.l2_norm() == 0


@dataclass(frozen=True)
class Constant(SampledFunction):
    value: float = 1.0

    def __call__(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.value)

    def l2_norm(self) -> float:
        return abs(self.value)


def _check_alpha(alpha):
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")


@dataclass(frozen=True)
class Indicator(SampledFunction):
    """``f_alpha``: 1 on ``[alpha, 1]``, 0 before."""

    alpha: float

    def __post_init__(self):
        _check_alpha(self.alpha)

    @property
    def breakpoints(self):
        return (self.alpha,) if self.alpha > 0 else ()

    def __call__(self, s):
        return np.where(np.asarray(s, dtype=float) >= self.alpha, 1.0, 0.0)

    def l2_norm(self) -> float:
        return math.sqrt(1 - self.alpha)


@dataclass(frozen=True)
class IndicatorImage(SampledFunction):
    """``g_alpha = V f_alpha``: ``max(0, s - alpha)``."""

    alpha: float

    def __post_init__(self):
        _check_alpha(self.alpha)

    @property
    def breakpoints(self):
        return (self.alpha,) if self.alpha > 0 else ()

    def __call__(self, s):
        return np.maximum(np.asarray(s, dtype=float) - self.alpha, 0.0)

    def l2_norm(self) -> float:
        return math.sqrt(g_alpha_norm_sq(self.alpha))


@dataclass(frozen=True)
class Polynomial(SampledFunction):
    """``sum_k coefficients[k] s^k``."""

    coefficients: tuple[float, ...]

    def __call__(self, s):
        return np.polynomial.polynomial.polyval(np.asarray(s, dtype=float), self.coefficients)

    def l2_norm(self) -> float:
        c = self.coefficients
        total = sum(c[i] * c[j] / (i + j + 1) for i in range(len(c)) for j in range(len(c)))
        return math.sqrt(max(total, 0.0))


@dataclass(frozen=True)
class GridSamples(SampledFunction):
    """Values at ``t_i = i / (n - 1)``, linearly interpolated."""

    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) < 2:
            raise ValueError("need at least two samples")

    @property
    def _nodes(self):
        return np.linspace(0.0, 1.0, len(self.values))

    @property
    def breakpoints(self):
        return tuple(self._nodes[1:-1])

    def __call__(self, s):
        return np.interp(np.asarray(s, dtype=float), self._nodes, self.values)

    def l2_norm(self) -> float:
        y = np.asarray(self.values, dtype=float)
        h = 1.0 / (len(y) - 1)
        # exact for piecewise-linear functions
        return math.sqrt(float(np.sum(h / 3 * (y[:-1] ** 2 + y[:-1] * y[1:] + y[1:] ** 2))))


# ---------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=8)
def _gauss_legendre(degree):
    return np.polynomial.legendre.leggauss(degree)


def _panels(f, u, z, panels):
    """Panel edges on [0, u], split at breakpoints, refined for large |z|."""
    count = max(panels, math.ceil(abs(z) * u / _MAX_PANEL_PHASE))
    cuts = [0.0] + sorted(b for b in set(f.breakpoints) if 0 < b < u) + [u]
    edges = [np.array([0.0])]
    for a, b in zip(cuts[:-1], cuts[1:]):
        k = max(1, math.ceil(count * (b - a) / u))
        edges.append(np.linspace(a, b, k + 1)[1:])
    return np.concatenate(edges)


def phi(f: SampledFunction, u: float, z, *, panels: int = 32, degree: int = 16):
    """``Phi_{f,u}(z)`` by composite Gauss-Legendre quadrature.

    Returns a Python complex, or a gmpy2 ``mpc`` when ``Re(z) u > 700`` and
    the value may leave double range.
    """
    if not 0 < u <= 1:
        raise ValueError(f"u must lie in (0, 1], got {u}")
    z = complex(z)
    x, w = _gauss_legendre(degree)
    edges = _panels(f, u, z, panels)
    a, b = edges[:-1, None], edges[1:, None]
    half = (b - a) / 2
    s = a + half * (x + 1)
    fs = f(s)
    if z.real * u <= _MACHINE_EXP_LIMIT:
        return complex(np.sum(half * w * fs * np.exp((u - s) * z)))
    # e^{(u-s)z} = e^{(u-a)z} e^{(a-s)z}; the second factor has modulus <= 1
    local = np.sum(half * w * fs * np.exp((a - s) * z), axis=1)
    with working_precision(None, GUARD_BITS):
        zz = mpc(z)
        total = mpc(0)
        for left, v in zip(edges[:-1], local):
            if v != 0:
                total += gmpy2.exp((u - mpfr(float(left))) * zz) * mpc(complex(v))
        return total


def resolvent_Vf_pointwise(f: SampledFunction, lam, t: float):
    """``((lam - V)^{-1} V f)(t) = (1/lam) int_0^t e^{(t-s)/lam} f(s) ds``."""
    lam = complex(lam)
    if lam == 0:
        raise ResolventError("lam must be nonzero", lam)
    if not 0 <= t <= 1:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if t == 0:
        return 0j
    v = phi(f, t, 1 / lam)
    if isinstance(v, mpc):
        with working_precision(None, GUARD_BITS):
            return v / mpc(lam)
    return v / lam


# ---------------------------------------------------------------------------
# closed forms


def _lam_number(lam):
    z = complex(lam)
    if z == 0:
        raise ResolventError("lam must be nonzero", lam)
    return z


def _cancellation_bits(scale):
    """Extra bits covering cancellation among terms of size ``scale``."""
    return max(0, 3 * math.ceil(math.log2(scale))) if scale > 1 else 0


def _expm1_complex(w: mpc) -> mpc:
    """``e^w - 1`` without cancellation for small ``|w|``."""
    x, y = w.real, w.imag
    half_sin = gmpy2.sin(y / 2)
    re = gmpy2.expm1(x) * gmpy2.cos(y) - 2 * half_sin * half_sin
    return mpc(re, gmpy2.exp(x) * gmpy2.sin(y))


def _log_positive(v, what) -> LogMagnitude:
    if v <= 0:
        raise ArithmeticError(f"{what} evaluated to {v}; precision exhausted")
    return LogMagnitude(False, gmpy2.log(v))


def h_alpha_norm_sq(alpha: float, lam, ctx: PrecisionContext | None = None) -> LogMagnitude:
    """``ln ||(lam - V)^{-1} g_alpha||^2`` in closed form.

    With ``a = 1 - alpha`` this is ``int_0^a |e^{s/lam} - 1|^2 ds``.  Purely
    imaginary ``lam`` makes the closed form singular and is integrated by
    quadrature instead.
    """
    _check_alpha(alpha)
    z = _lam_number(lam)
    extra = GUARD_BITS + _cancellation_bits(abs(z) / (1 - alpha))
    with working_precision(ctx, extra):
        a = 1 - mpfr(alpha)
        if z.imag == 0:
            lam_r = mpfr(z.real)
            e1 = gmpy2.expm1(a / lam_r)
            # lam/2 (e^{2a/lam} - 1) - 2 lam (e^{a/lam} - 1) + a
            value = lam_r / 2 * e1 * (e1 + 2) - 2 * lam_r * e1 + a
            return _log_positive(value, "||h||^2")
        lam_c = mpc(z)
        rho = (1 / lam_c).real
        if rho == 0:
            return _h_norm_sq_quadrature(float(a), z)
        first = a * gmpy2.expm1(2 * rho * a) / (2 * rho * a)
        value = first - 2 * (lam_c * _expm1_complex(a / lam_c)).real + a
        return _log_positive(value, "||h||^2")


def _h_norm_sq_quadrature(a: float, lam: complex) -> LogMagnitude:
    w = 1 / lam
    x, wts = _gauss_legendre(16)
    count = max(32, math.ceil(abs(w) * a / _MAX_PANEL_PHASE))
    edges = np.linspace(0.0, a, count + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = (hi - lo) / 2
    s = lo + half * (x + 1)
    value = float(np.sum(half * wts * np.abs(np.expm1(s * w)) ** 2))
    return LogMagnitude.from_value(value)


def f_alpha_resolvent_norm_sq_neg(alpha: float, lam: float, ctx: PrecisionContext | None = None) -> LogMagnitude:
    """``ln ||(lam - V)^{-1} f_alpha||^2 = ln[(1 - e^{2(1-alpha)/lam}) / (-2 lam)]`` for ``lam < 0``."""
    _check_alpha(alpha)
    if isinstance(lam, complex) or not lam < 0:
        raise ValueError(f"lam must be a negative real, got {lam}")
    with working_precision(ctx, GUARD_BITS):
        lam = mpfr(lam)
        a = 1 - mpfr(alpha)
        return _log_positive(-gmpy2.expm1(2 * a / lam) / (-2 * lam), "||(lam - V)^{-1} f_alpha||^2")


def g_alpha_norm_sq(alpha: float) -> float:
    """``||g_alpha||^2 = (1 - alpha)^3 / 3``."""
    _check_alpha(alpha)
    return (1 - alpha) ** 3 / 3


def k_g_alpha_oracle(alpha: float) -> float:
    """Exponent of ``g_alpha`` for the Volterra operator: ``1 - alpha``."""
    _check_alpha(alpha)
    return 1 - alpha


# ---------------------------------------------------------------------------
# growth witnesses


@dataclass(frozen=True)
class WitnessResult:
    """Largest candidate ``d`` with enough witnesses, or ``d = None``."""

    d: float | None
    witnesses: tuple[float, ...]
    u: float
    log_bounds: tuple[float, ...]


def _default_u(f):
    for u in np.linspace(1.0, 0.0, 1025)[:-1]:
        if f(u) != 0:
            return float(u)
    raise ValueError("f vanishes on the sampled points of (0, 1]")


def growth_witness(
    f: SampledFunction,
    d_candidates,
    lambda_grid: LambdaGrid,
    *,
    u: float | None = None,
    min_witnesses: int = 5,
) -> WitnessResult:
    """Search for exponential growth ``||(lam - V)^{-1} f|| > e^{d/lam}``.

    Growth is certified by the lower bound
    ``(1/sqrt(u)) (|Phi_{f,u}(1/lam)| - ||f||)`` on the positive real path.
    A candidate ``d`` succeeds when the bound beats ``e^{d/lam}`` at
    ``min_witnesses`` or more grid points including the smallest ``lam``.
    """
    if f.is_zero():
        raise ValueError("f must be nonzero")
    if lambda_grid.theta != 0:
        raise ValueError("witnesses live on the positive real axis (theta = 0)")
    u = _default_u(f) if u is None else u
    norm_f = f.l2_norm()
    lams = lambda_grid.moduli()
    log_bounds = []
    with working_precision(None, GUARD_BITS):
        for lam in lams:
            excess = abs(phi(f, u, 1 / lam)) - mpfr(norm_f)
            log_bounds.append(float(gmpy2.log(excess) - gmpy2.log(mpfr(u)) / 2) if excess > 0 else -math.inf)
    for d in sorted(d_candidates, reverse=True):
        hits = [lam for lam, lb in zip(lams, log_bounds) if lb > d / lam]
        if len(hits) >= min_witnesses and hits[-1] == lams[-1]:
            return WitnessResult(float(d), tuple(hits), u, tuple(log_bounds))
    return WitnessResult(None, (), u, tuple(log_bounds))


# ---------------------------------------------------------------------------
# discretized operator


def matrix_resolvent_log_norm_sq(f: SampledFunction, lam, N: int, ctx: PrecisionContext | None = None) -> float:
    """``ln ||(lam - V_N)^{-1} f||^2`` for the left-rectangle discretization,
    with the discrete L2 norm ``(1/N) sum_i |y_i|^2`` on ``t_i = i/N``."""
    action = materialize(VolterraGrid(N), ctx)
    t = np.arange(N) / N
    with working_precision(ctx):
        b = [mpfr(float(v)) for v in f(t)]
        lam_v = mpc(complex(lam)) if complex(lam).imag else mpfr(complex(lam).real)
        y, log_scale = action.forward_solve(lam_v, b)
        s = mpfr(0)
        for c in y:
            s += gmpy2.norm(c) if isinstance(c, mpc) else c * c
        return float(2 * log_scale + gmpy2.log(s) - gmpy2.log(mpfr(N)))


# ---------------------------------------------------------------------------
# exponent of g_alpha


@dataclass(frozen=True)
class GAlphaEstimate:
    """Two regressions of ``ln||(lam - V)^{-1} g_alpha/||g_alpha||||``:
    against the lower proxy ``ln||(lam - V)^{-1} g_0/||g_0||||`` and the upper
    bound ``ln[(1/lam) e^{1/lam}]`` for ``ln||(lam - V)^{-1}||``."""

    alpha: float
    against_lower: KEstimate
    against_upper: KEstimate

    @property
    def slope(self) -> float:
        return (self.against_lower.slope + self.against_upper.slope) / 2

    @property
    def disagreement(self) -> float:
        return abs(self.against_lower.slope - self.against_upper.slope)


def estimate_k_g_alpha(alpha: float, grid: LambdaGrid | None = None, ctx: PrecisionContext | None = None) -> GAlphaEstimate:
    grid = grid or LambdaGrid()
    if grid.theta != 0:
        raise ValueError("the estimate uses the positive real axis (theta = 0)")
    _check_alpha(alpha)
    shift_num = math.log(g_alpha_norm_sq(alpha)) / 2
    shift_den = math.log(g_alpha_norm_sq(0.0)) / 2
    lower, upper = [], []
    for lam in grid.moduli():
        num = h_alpha_norm_sq(alpha, lam, ctx).log / 2 - shift_num
        den_lo = h_alpha_norm_sq(0.0, lam, ctx).log / 2 - shift_den
        den_hi = volterra_norm_upper(lam, ctx).log
        lower.append(Sample(lam, 0.0, den_lo, num, num / den_lo))
        upper.append(Sample(lam, 0.0, den_hi, num, num / den_hi))
    return GAlphaEstimate(
        alpha,
        estimate_k(SampleCurve(lower, grid.count)),
        estimate_k(SampleCurve(upper, grid.count)),
    )
