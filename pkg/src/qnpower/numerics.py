"""Extended-precision arithmetic substrate.

All heavy lifting is delegated to MPFR through ``gmpy2``.  A
:class:`PrecisionContext` fixes the working mantissa width and the
power-iteration knobs; :class:`LogMagnitude` carries nonnegative
quantities as natural logarithms so that norms of size ``exp(1e6)`` are
ordinary numbers.
"""

from __future__ import annotations

import functools
import math
from contextlib import contextmanager
from dataclasses import dataclass

import gmpy2
from gmpy2 import mpc, mpfr

__all__ = [
    "GUARD_BITS",
    "PrecisionContext",
    "DEFAULT_CONTEXT",
    "LogMagnitude",
    "logmag_add",
    "logmag_scale",
    "working_precision",
    "to_mpfr",
    "to_mpc",
    "log_abs",
]

# Extra bits carried by stored logarithms so that exp(log m) still
# rounds back to m at the nominal width even when |log m| is large.
GUARD_BITS = 32


@dataclass(frozen=True)
class PrecisionContext:
    """Working precision and iteration controls.

    Two computations handed the same context and inputs produce
    bit-identical results.
    """

    mantissa_bits: int = 128
    power_iteration_tol: float = 1e-10
    max_power_iterations: int = 10000
    seed: int = 0

    def __post_init__(self):
        if int(self.mantissa_bits) != self.mantissa_bits or self.mantissa_bits < 53:
            raise ValueError(f"mantissa_bits must be an integer >= 53, got {self.mantissa_bits!r}")
        if not self.power_iteration_tol > 0:
            raise ValueError("power_iteration_tol must be positive")
        if int(self.max_power_iterations) != self.max_power_iterations or self.max_power_iterations < 1:
            raise ValueError("max_power_iterations must be a positive integer")
        if int(self.seed) != self.seed:
            raise ValueError("seed must be an integer")

    def replace(self, **changes) -> PrecisionContext:
        fields = {
            "mantissa_bits": self.mantissa_bits,
            "power_iteration_tol": self.power_iteration_tol,
            "max_power_iterations": self.max_power_iterations,
            "seed": self.seed,
        }
        fields.update(changes)
        return PrecisionContext(**fields)

    def to_dict(self) -> dict:
        return {
            "mantissa_bits": self.mantissa_bits,
            "power_iteration_tol": self.power_iteration_tol,
            "max_power_iterations": self.max_power_iterations,
            "seed": self.seed,
        }


DEFAULT_CONTEXT = PrecisionContext()


@contextmanager
def working_precision(ctx: PrecisionContext | None = None, extra_bits: int = 0):
    """Run the enclosed block at ``ctx.mantissa_bits + extra_bits`` with the
    widest exponent range MPFR offers."""
    ctx = ctx or DEFAULT_CONTEXT
    with gmpy2.context(
        gmpy2.get_context(),
        precision=ctx.mantissa_bits + extra_bits,
        emax=gmpy2.get_emax_max(),
        emin=gmpy2.get_emin_min(),
    ) as c:
        yield c


def to_mpfr(x) -> mpfr:
    """Convert a real (int, float, str, mpfr, Fraction) at the current precision."""
    if isinstance(x, str):
        return mpfr(x)
    if hasattr(x, "numerator") and hasattr(x, "denominator") and not isinstance(x, (int, float)):
        return mpfr(x.numerator) / mpfr(x.denominator)
    return mpfr(x)


def to_mpc(z) -> mpc:
    if isinstance(z, mpc):
        return mpc(z)
    if isinstance(z, (tuple, list)):
        re, im = z
        return mpc(to_mpfr(re), to_mpfr(im))
    if isinstance(z, complex):
        return mpc(z)
    return mpc(to_mpfr(z), 0)


def log_abs(z) -> mpfr:
    """Natural log of |z| for mpfr/mpc values."""
    return gmpy2.log(abs(z))


@functools.total_ordering
@dataclass(frozen=True, eq=False)
class LogMagnitude:
    """A nonnegative real ``m`` stored as ``ln m``.

    ``is_zero`` is the only way to represent ``m = 0``; in that case
    ``log_value`` is ``-inf`` and carries no information.
    """

    is_zero: bool
    log_value: mpfr

    @classmethod
    def zero(cls) -> LogMagnitude:
        return cls(True, mpfr("-inf"))

    @classmethod
    def from_log(cls, log_value, ctx: PrecisionContext | None = None) -> LogMagnitude:
        with working_precision(ctx, GUARD_BITS):
            value = to_mpfr(log_value)
        if gmpy2.is_nan(value) or value == mpfr("inf"):
            raise ValueError(f"log_value must be finite, got {log_value!r}")
        if value == mpfr("-inf"):
            return cls.zero()
        return cls(False, value)

    @classmethod
    def from_value(cls, m, ctx: PrecisionContext | None = None) -> LogMagnitude:
        with working_precision(ctx, GUARD_BITS):
            m = to_mpfr(m)
            if m < 0 or gmpy2.is_nan(m):
                raise ValueError("magnitudes are nonnegative")
            if m == 0:
                return cls.zero()
            return cls(False, gmpy2.log(m))

    def value(self, ctx: PrecisionContext | None = None) -> mpfr:
        """The magnitude itself as an mpfr (MPFR's exponent range is huge)."""
        if self.is_zero:
            return mpfr(0)
        with working_precision(ctx, GUARD_BITS):
            m = gmpy2.exp(self.log_value)
        with working_precision(ctx):
            return +m

    def __float__(self) -> float:
        if self.is_zero:
            return 0.0
        lv = float(self.log_value)
        return math.exp(lv) if lv < 709.0 else math.inf

    @property
    def log(self) -> float:
        """``ln m`` rounded to a Python float (``-inf`` for zero)."""
        return float(self.log_value)

    def __eq__(self, other):
        if not isinstance(other, LogMagnitude):
            return NotImplemented
        if self.is_zero or other.is_zero:
            return self.is_zero == other.is_zero
        return self.log_value == other.log_value

    def __lt__(self, other):
        if not isinstance(other, LogMagnitude):
            return NotImplemented
        if other.is_zero:
            return False
        if self.is_zero:
            return True
        return self.log_value < other.log_value

    def __hash__(self):
        return hash(("LogMagnitude", self.is_zero, None if self.is_zero else str(self.log_value)))

    def __repr__(self):
        if self.is_zero:
            return "LogMagnitude(zero)"
        return f"LogMagnitude(log={float(self.log_value)!r})"


def logmag_add(a: LogMagnitude, b: LogMagnitude, ctx: PrecisionContext | None = None) -> LogMagnitude:
    """Log-sum-exp of two magnitudes: ``max + log1p(exp(min - max))``."""
    if a.is_zero:
        return b
    if b.is_zero:
        return a
    with working_precision(ctx, GUARD_BITS):
        hi, lo = (a.log_value, b.log_value) if a.log_value >= b.log_value else (b.log_value, a.log_value)
        return LogMagnitude(False, hi + gmpy2.log1p(gmpy2.exp(lo - hi)))


def logmag_scale(a: LogMagnitude, c, ctx: PrecisionContext | None = None) -> LogMagnitude:
    """Multiply the represented magnitude by ``c > 0``."""
    with working_precision(ctx, GUARD_BITS):
        c = to_mpfr(c)
        if not c > 0:
            raise ValueError(f"scale factor must be positive, got {c}")
        if a.is_zero:
            return a
        return LogMagnitude(False, a.log_value + gmpy2.log(c))
