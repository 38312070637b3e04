"""Resolvents of nilpotent truncations in log-scaled extended precision.

``(lam - T)^{-1} x`` is a forward substitution on the triangular system;
the norm ``||(lam - T)^{-1}||`` is the top singular value, obtained by
power iteration on ``R^H R`` where both ``R`` and ``R^H`` are applied by
substitution.  Nothing dense is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

from .numerics import (
    DEFAULT_CONTEXT,
    GUARD_BITS,
    LogMagnitude,
    PrecisionContext,
    to_mpfr,
    working_precision,
)
from .operators import (
    BlockDiagonalAction,
    DirectSum,
    Scaled,
    TriangularAction,
    WeightedShiftA,
    materialize,
    vector_coefficients,
)

__all__ = [
    "ScaledVector",
    "ResolventError",
    "ConvergenceError",
    "resolvent_apply",
    "resolvent_norm",
    "shift_norm_bounds",
    "rotation_reduce",
    "volterra_norm_upper",
    "shift_family_rates",
    "shift_family_lower_bound",
    "as_action",
]


class ResolventError(ValueError):
    """Invalid resolvent request (``lam = 0`` or a zero vector)."""

    def __init__(self, msg, lam=None):
        super().__init__(msg)
        self.lam = lam


class ConvergenceError(ArithmeticError):
    """Power iteration did not settle within ``max_power_iterations``.

    ``value`` holds the last iterate's estimate of the log-norm.
    """

    def __init__(self, msg, value: LogMagnitude, iterations: int, lam=None):
        super().__init__(msg)
        self.value = value
        self.iterations = iterations
        self.lam = lam


@dataclass(frozen=True)
class ScaledVector:
    """``exp(log_scale) * direction`` with ``||direction|| = 1``."""

    direction: tuple
    log_scale: LogMagnitude

    @property
    def dim(self) -> int:
        return len(self.direction)

    def coefficients(self, ctx: PrecisionContext | None = None) -> list:
        with working_precision(ctx):
            m = self.log_scale.value(ctx)
            return [m * c for c in self.direction]

    def to_numpy(self) -> np.ndarray:
        """Complex128 copy; entries overflow to inf when the scale is huge."""
        m = float(self.log_scale)
        return np.array([complex(c) for c in self.direction], dtype=complex) * m


def as_action(T, ctx: PrecisionContext | None = None) -> TriangularAction:
    return T if isinstance(T, TriangularAction) else materialize(T, ctx)


def _lambda(lam):
    """Parse lam at the current precision; real values become mpfr."""
    if isinstance(lam, (mpc, complex)):
        z = mpc(lam)
        if z.imag == 0:
            return z.real
        return z
    return to_mpfr(lam)


def _norm(v) -> mpfr:
    s = mpfr(0)
    for c in v:
        s += gmpy2.norm(c) if isinstance(c, mpc) else c * c
    return gmpy2.sqrt(s)


def resolvent_apply(T, lam, x, ctx: PrecisionContext | None = None) -> ScaledVector:
    """Solve ``(lam - T) y = x``; the answer comes back as a ScaledVector."""
    ctx = ctx or DEFAULT_CONTEXT
    action = as_action(T, ctx)
    with working_precision(ctx):
        lam_v = _lambda(lam)
        if lam_v == 0:
            raise ResolventError("the resolvent is undefined at lam = 0 (the spectrum is {0})", lam)
        b = _vector_for(action, x)
        if all(c == 0 for c in b):
            raise ResolventError("x must be nonzero", lam)
        y, log_scale = action.forward_solve(lam_v, b)
        ny = _norm(y)
        direction = tuple(c / ny for c in y)
        with working_precision(ctx, GUARD_BITS):
            total = log_scale + gmpy2.log(ny)
    return ScaledVector(direction, LogMagnitude(False, total))


def _vector_for(action, x):
    if action.spec is not None and not isinstance(x, (list, tuple)):
        return vector_coefficients(x, action.spec)
    if isinstance(x, (list, tuple)):
        if len(x) != action.dim:
            raise ValueError(f"vector has {len(x)} coefficients, operator dimension is {action.dim}")
        return [c if isinstance(c, (mpfr, mpc)) else _lambda(c) for c in x]
    raise TypeError("cannot resolve a VectorSpec against an action without a spec")


def resolvent_norm(T, lam, ctx: PrecisionContext | None = None) -> LogMagnitude:
    """``ln ||(lam - T)^{-1}||`` as a LogMagnitude.

    Block-diagonal operators are handled block by block and the largest
    block norm is returned.  Raises :class:`ConvergenceError` if power
    iteration fails twice (second attempt uses ``seed + 1``).
    """
    ctx = ctx or DEFAULT_CONTEXT
    action = as_action(T, ctx)
    with working_precision(ctx):
        lam_v = _lambda(lam)
        if lam_v == 0:
            raise ResolventError("the resolvent is undefined at lam = 0 (the spectrum is {0})", lam)
    if isinstance(action, BlockDiagonalAction):
        return max(resolvent_norm(p, lam, ctx) for p in action.parts)
    with working_precision(ctx):
        return _power_iteration(action, lam_v, ctx, lam)


def _orthonormalize(vectors):
    """Modified Gram-Schmidt with one reorthogonalization pass; collapsed
    vectors are dropped."""
    out = []
    for v in vectors:
        v = _orthogonalize(list(v), out)
        n = _norm(v)
        if n > 0:
            out.append([c / n for c in v])
    return out


def _orthogonalize(v, basis):
    for _ in range(2):
        for q in basis:
            dot = sum(_conj(a) * b for a, b in zip(q, v))
            v = [b - dot * a for a, b in zip(q, v)]
    return v


def _conj(c):
    return c.conjugate() if isinstance(c, mpc) else c


def _start_vector(dim, seed, real):
    rng = np.random.default_rng(seed)
    re = rng.standard_normal(dim)
    if real:
        v = [mpfr(float(a)) for a in re]
    else:
        im = rng.standard_normal(dim)
        v = [mpc(float(a), float(b)) for a, b in zip(re, im)]
    return _orthonormalize([v])[0]


def _sturm_count(alpha, beta, x):
    """Number of eigenvalues of the symmetric tridiagonal (alpha, beta) below x."""
    count, d = 0, mpfr(1)
    tiny = mpfr(2) ** (-gmpy2.get_context().precision * 4)
    for i, a in enumerate(alpha):
        off = beta[i - 1] ** 2 / d if i else 0
        d = a - x - off
        if d == 0:
            d = -tiny
        if d < 0:
            count += 1
    return count


def _top_tridiagonal_eigenvalue(alpha, beta):
    """Largest eigenvalue of a symmetric tridiagonal matrix by bisection."""
    n = len(alpha)
    radius = [abs(beta[i - 1]) if i else mpfr(0) for i in range(n)]
    for i in range(n - 1):
        radius[i] += abs(beta[i])
    lo = max(alpha)
    hi = max(a + r for a, r in zip(alpha, radius))
    resolution = mpfr(2) ** (8 - gmpy2.get_context().precision)
    while hi - lo > resolution * abs(hi):
        mid = (lo + hi) / 2
        if mid in (lo, hi):
            break
        if _sturm_count(alpha, beta, mid) == n:
            hi = mid
        else:
            lo = mid
    return hi


def _power_iteration(action, lam_v, ctx, lam):
    # Lanczos on R^H R with full reorthogonalization.  Plain power iteration
    # stalls when the top singular values cluster (for example a tiny
    # multiple of a shift, whose resolvent is nearly scalar); the Krylov
    # space separates them and is exhausted after at most dim steps.  Ritz
    # values are lower bounds for ||R||^2.
    real = action.is_real and isinstance(lam_v, mpfr)
    tol = mpfr(ctx.power_iteration_tol)
    cur = None
    for attempt in range(2):
        Q = [_start_vector(action.dim, ctx.seed + attempt, real)]
        alpha, beta = [], []
        scale = None  # log of the common unit for alpha and beta
        prev = None
        for it in range(1, ctx.max_power_iterations + 1):
            y, ly = action.forward_solve(lam_v, Q[-1])
            w, lw = action.backward_solve(lam_v, y)
            if scale is None:
                scale = ly + lw
            factor = gmpy2.exp(ly + lw - scale)
            w = [c * factor for c in w]
            a = sum(_conj(q) * c for q, c in zip(Q[-1], w))
            alpha.append(a.real if isinstance(a, mpc) else a)
            w = _orthogonalize(w, Q)
            b = _norm(w)
            theta = _top_tridiagonal_eigenvalue(alpha, beta)
            cur = scale / 2 + gmpy2.log(theta) / 2  # ln sqrt(top Ritz value of R^H R)
            exhausted = b == 0 or len(Q) == action.dim
            # successive Ritz values agree to tol
            if exhausted or (prev is not None and abs(gmpy2.expm1(2 * (cur - prev))) <= tol):
                return LogMagnitude(False, cur)
            prev = cur
            beta.append(b)
            Q.append([c / b for c in w])
    raise ConvergenceError(
        f"power iteration did not converge in {ctx.max_power_iterations} steps (two starts) at lam={lam}",
        LogMagnitude(False, cur),
        ctx.max_power_iterations,
        lam,
    )


def shift_norm_bounds(r, t, ctx: PrecisionContext | None = None) -> tuple[LogMagnitude, LogMagnitude]:
    """Closed-form bounds on ``||(1/t - r A)^{-1}||`` for the weighted shift.

    lower = sqrt(6)/(pi r) (e^{rt} - 1),  upper = t e^{rt}, both as logs.
    """
    with working_precision(ctx, GUARD_BITS):
        r, t = to_mpfr(r), to_mpfr(t)
        if not (r > 0 and t > 0):
            raise ValueError("r and t must be positive")
        rt = r * t
        lower = gmpy2.log(gmpy2.sqrt(6) / (gmpy2.const_pi() * r)) + gmpy2.log(gmpy2.expm1(rt))
        upper = gmpy2.log(t) + rt
    return LogMagnitude(False, lower), LogMagnitude(False, upper)


def shift_family_rates(spec):
    """Scale factors of the weighted-shift blocks of ``spec``.

    Returns ``None`` when ``spec`` is not built from WeightedShiftA by
    scaling and direct sums.
    """
    if isinstance(spec, WeightedShiftA):
        return [1.0]
    if isinstance(spec, Scaled):
        inner = shift_family_rates(spec.inner)
        if inner is None:
            return None
        return [float(spec.factor) * r for r in inner]
    if isinstance(spec, DirectSum):
        out = []
        for p in spec.parts:
            rates = shift_family_rates(p)
            if rates is None:
                return None
            out.extend(rates)
        return out
    return None


def rotation_reduce(spec, lam) -> float:
    """|lam|, for operators whose resolvent norm depends on |lam| only.

    Valid for WeightedShiftA and scaled copies and direct sums of it; any
    other spec raises ValueError and must not be reduced.
    """
    if shift_family_rates(spec) is None:
        raise ValueError(f"rotation reduction is not licensed for {type(spec).__name__}")
    lam = complex(lam)
    if lam == 0:
        raise ResolventError("lam must be nonzero", lam)
    return abs(lam)


def shift_family_lower_bound(spec, t, ctx: PrecisionContext | None = None) -> LogMagnitude | None:
    """Lower bound on the untruncated ``||(1/t - T)^{-1}||`` for the shift family.

    For a direct sum the norm is the largest block norm, so the bound of
    the largest rate applies.  ``None`` for specs outside the family.
    """
    rates = shift_family_rates(spec)
    if rates is None:
        return None
    r = max(rates)
    if r == 0:
        with working_precision(ctx, GUARD_BITS):
            return LogMagnitude(False, gmpy2.log(to_mpfr(t)))
    return shift_norm_bounds(r, t, ctx)[0]


def volterra_norm_upper(lam, ctx: PrecisionContext | None = None) -> LogMagnitude:
    """Log of the bound ``(1/|lam|) e^{1/|lam|}`` on the Volterra resolvent."""
    with working_precision(ctx, GUARD_BITS):
        lam_v = _lambda(lam)
        if lam_v == 0:
            raise ResolventError("lam must be nonzero", lam)
        m = abs(lam_v)
        return LogMagnitude(False, 1 / m - gmpy2.log(m))
