"""Finite truncations of quasinilpotent operators.

Operators are described by small immutable spec objects and turned into
strictly lower-triangular *actions* by :func:`materialize`.  Every action is
nilpotent by construction.  Basis indices are 0-based: ``WeightedShiftA``
maps ``e_{k-1}`` to ``e_k / k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

from .numerics import PrecisionContext, to_mpfr, working_precision

__all__ = [
    "JordanNilpotent",
    "WeightedShiftA",
    "Scaled",
    "DirectSum",
    "VolterraGrid",
    "ExplicitLowerTriangular",
    "BasisVector",
    "Dense",
    "SummandVector",
    "materialize",
    "volterra_matrix",
    "embed_summand",
    "vector_coefficients",
    "spec_to_json",
    "spec_from_json",
    "vector_to_json",
    "vector_from_json",
    "TriangularAction",
]


# ---------------------------------------------------------------------------
# specs


def _check_dim(name, value, minimum=1):
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")


@dataclass(frozen=True)
class JordanNilpotent:
    """Single nilpotent Jordan block: ``e_i -> e_{i+1}``, ``e_{n-1} -> 0``."""

    n: int

    def __post_init__(self):
        _check_dim("n", self.n)

    @property
    def dim(self) -> int:
        return self.n


@dataclass(frozen=True)
class WeightedShiftA:
    """First ``N`` rows/columns of the shift with weights 1, 1/2, 1/3, ..."""

    N: int

    def __post_init__(self):
        _check_dim("N", self.N)

    @property
    def dim(self) -> int:
        return self.N


@dataclass(frozen=True)
class Scaled:
    factor: Union[float, Fraction, str]
    inner: "OperatorSpec"

    def __post_init__(self):
        if not float(self.factor) >= 0:
            raise ValueError(f"scale factor must be >= 0, got {self.factor!r}")

    @property
    def dim(self) -> int:
        return self.inner.dim


@dataclass(frozen=True)
class DirectSum:
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("DirectSum needs at least one part")

    @property
    def dim(self) -> int:
        return sum(p.dim for p in self.parts)

    @property
    def offsets(self) -> tuple:
        out, acc = [], 0
        for p in self.parts:
            out.append(acc)
            acc += p.dim
        return tuple(out)


@dataclass(frozen=True)
class VolterraGrid:
    """Left-endpoint rectangle discretization of ``f -> int_0^t f``."""

    N: int
    rule: str = "left"

    def __post_init__(self):
        _check_dim("N", self.N, 2)
        if self.rule != "left":
            raise ValueError(f"unsupported quadrature rule {self.rule!r}; only 'left' keeps the matrix nilpotent")

    @property
    def dim(self) -> int:
        return self.N


@dataclass(frozen=True)
class ExplicitLowerTriangular:
    """Strictly lower-triangular matrix given by subdiagonal bands.

    ``bands[k-1]`` holds the entries ``T[i, i-k]`` for ``i = k .. dim-1``;
    it is either a sequence of length ``dim-k`` or a single number for a
    constant band.  Entries may be int, float, complex, Fraction or decimal
    strings.
    """

    dim: int
    bands: tuple = ()

    def __post_init__(self):
        _check_dim("dim", self.dim)
        bands = tuple(b if _is_scalar(b) else tuple(b) for b in self.bands)
        if len(bands) > self.dim - 1:
            raise ValueError("more bands than the dimension allows")
        for k, band in enumerate(bands, start=1):
            if not _is_scalar(band) and len(band) != self.dim - k:
                raise ValueError(f"band {k} must have {self.dim - k} entries, got {len(band)}")
        object.__setattr__(self, "bands", bands)


OperatorSpec = Union[JordanNilpotent, WeightedShiftA, Scaled, DirectSum, VolterraGrid, ExplicitLowerTriangular]


def _is_scalar(b) -> bool:
    return not isinstance(b, (list, tuple))


@dataclass(frozen=True)
class BasisVector:
    index: int

    def __post_init__(self):
        _check_dim("index", self.index, 0)


@dataclass(frozen=True)
class Dense:
    coefficients: tuple

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(self.coefficients))
        if not self.coefficients:
            raise ValueError("Dense vector needs coefficients")


@dataclass(frozen=True)
class SummandVector:
    part_index: int
    inner: "VectorSpec"


VectorSpec = Union[BasisVector, Dense, SummandVector]


# ---------------------------------------------------------------------------
# actions

_RENORM_SQ = mpfr(2) ** 1024  # squared 2^512 threshold


def _sq(z):
    return gmpy2.norm(z) if isinstance(z, mpc) else z * z


def _conj(z):
    return z.conjugate() if isinstance(z, mpc) else z


def _is_real_number(z) -> bool:
    return not isinstance(z, mpc)


class TriangularAction:
    """Base class for materialized strictly lower-triangular operators.

    ``forward_solve(lam, b)`` solves ``(lam - T) y = b`` and
    ``backward_solve(lam, b)`` solves ``(conj(lam) - T^H) y = b``.  Both
    return ``(y, log_scale)`` with the true solution ``exp(log_scale) * y``;
    the partial solution is divided down whenever its norm passes 2^512.
    All arithmetic runs in whatever gmpy2 context is active.
    """

    dim: int
    is_real: bool = True
    spec: object = None

    @property
    def blocks(self):
        """``(offset, action)`` pairs of the block-diagonal structure."""
        return ((0, self),)

    def apply(self, v):
        raise NotImplementedError

    def apply_adjoint(self, v):
        raise NotImplementedError

    def forward_solve(self, lam, b):
        raise NotImplementedError

    def backward_solve(self, lam, b):
        raise NotImplementedError

    def scaled(self, r):
        raise NotImplementedError

    def abs_row_col_sums(self):
        raise NotImplementedError

    def norm_bound(self) -> float:
        """Upper bound ``sqrt(||T||_1 ||T||_inf) >= ||T||_2``."""
        rows, cols = self.abs_row_col_sums()
        return math.sqrt(max(rows, default=0.0) * max(cols, default=0.0))

    def to_dense(self):
        """Dense complex matrix (numpy), for small-dimension checks."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for j in range(self.dim):
            e = [mpfr(0)] * self.dim
            e[j] = mpfr(1)
            out[:, j] = [complex(c) for c in self.apply(e)]
        return out


class _Renormalizer:
    """Tracks the running squared norm of a partial solution."""

    __slots__ = ("acc", "log_scale", "bfac")

    def __init__(self):
        self.acc = mpfr(0)
        self.log_scale = mpfr(0)
        self.bfac = None  # factor applied to the right-hand side; None means 1

    def push(self, y, idx_range, yi):
        """Account for a new entry; returns the rescale factor applied, if any."""
        self.acc += _sq(yi)
        if self.acc > _RENORM_SQ:
            s = gmpy2.sqrt(self.acc)
            f = 1 / s
            for k in idx_range:
                y[k] *= f
            self.log_scale += gmpy2.log(s)
            self.bfac = f if self.bfac is None else self.bfac * f
            self.acc = self.acc * f * f
            return f
        return None


class SubdiagonalAction(TriangularAction):
    """``T e_{i-1} = w[i-1] e_i``: Jordan blocks and weighted shifts."""

    def __init__(self, weights, spec=None):
        self.w = list(weights)
        self.dim = len(self.w) + 1
        self.is_real = all(_is_real_number(x) for x in self.w)
        self.spec = spec

    def apply(self, v):
        out = [v[0] * 0] + [self.w[i - 1] * v[i - 1] for i in range(1, self.dim)]
        return out

    def apply_adjoint(self, v):
        return [_conj(self.w[j]) * v[j + 1] for j in range(self.dim - 1)] + [v[0] * 0]

    def forward_solve(self, lam, b):
        inv = 1 / lam
        w = self.w
        y = [None] * self.dim
        ren = _Renormalizer()
        prev = b[0] * inv
        y[0] = prev
        ren.push(y, range(1), prev)
        for i in range(1, self.dim):
            bi = b[i] if ren.bfac is None else b[i] * ren.bfac
            prev = (bi + w[i - 1] * prev) * inv
            y[i] = prev
            if ren.push(y, range(i + 1), prev) is not None:
                prev = y[i]
        return y, ren.log_scale

    def backward_solve(self, lam, b):
        inv = 1 / _conj(lam)
        w = [_conj(x) for x in self.w] if not self.is_real else self.w
        n = self.dim
        y = [None] * n
        ren = _Renormalizer()
        prev = b[n - 1] * inv
        y[n - 1] = prev
        ren.push(y, range(n - 1, n), prev)
        for j in range(n - 2, -1, -1):
            bj = b[j] if ren.bfac is None else b[j] * ren.bfac
            prev = (bj + w[j] * prev) * inv
            y[j] = prev
            if ren.push(y, range(j, n), prev) is not None:
                prev = y[j]
        return y, ren.log_scale

    def scaled(self, r):
        return SubdiagonalAction([r * x for x in self.w], spec=None)

    def abs_row_col_sums(self):
        a = [float(abs(x)) for x in self.w]
        return [0.0] + a, a + [0.0]


class SparseLowerAction(TriangularAction):
    """General strictly lower-triangular matrix stored row-wise."""

    def __init__(self, dim, rows, spec=None):
        self.dim = dim
        self.rows = [tuple(r) for r in rows]
        cols = [[] for _ in range(dim)]
        for i, row in enumerate(self.rows):
            for j, t in row:
                if not j < i:
                    raise ValueError("entries must lie strictly below the diagonal")
                cols[j].append((i, t))
        self.cols = [tuple(c) for c in cols]
        self.is_real = all(_is_real_number(t) for row in self.rows for _, t in row)
        self.spec = spec

    def apply(self, v):
        zero = v[0] * 0
        return [sum((t * v[j] for j, t in row), zero) for row in self.rows]

    def apply_adjoint(self, v):
        zero = v[0] * 0
        return [sum((_conj(t) * v[i] for i, t in col), zero) for col in self.cols]

    def forward_solve(self, lam, b):
        inv = 1 / lam
        y = [None] * self.dim
        ren = _Renormalizer()
        for i, row in enumerate(self.rows):
            s = b[i] if ren.bfac is None else b[i] * ren.bfac
            for j, t in row:
                s += t * y[j]
            y[i] = s * inv
            ren.push(y, range(i + 1), y[i])
        return y, ren.log_scale

    def backward_solve(self, lam, b):
        inv = 1 / _conj(lam)
        n = self.dim
        y = [None] * n
        ren = _Renormalizer()
        for j in range(n - 1, -1, -1):
            s = b[j] if ren.bfac is None else b[j] * ren.bfac
            for i, t in self.cols[j]:
                s += _conj(t) * y[i]
            y[j] = s * inv
            ren.push(y, range(j, n), y[j])
        return y, ren.log_scale

    def scaled(self, r):
        return SparseLowerAction(self.dim, [[(j, r * t) for j, t in row] for row in self.rows])

    def abs_row_col_sums(self):
        rows = [sum(float(abs(t)) for _, t in row) for row in self.rows]
        cols = [sum(float(abs(t)) for _, t in col) for col in self.cols]
        return rows, cols


class PrefixSumAction(TriangularAction):
    """All entries below the diagonal equal to ``c`` (discrete Volterra).

    Row ``i`` of ``T v`` is ``c * sum_{j<i} v_j``, so every product and
    solve is a single running sum.
    """

    def __init__(self, dim, c, spec=None):
        self.dim = dim
        self.c = c
        self.is_real = _is_real_number(c)
        self.spec = spec

    def apply(self, v):
        out, s = [], v[0] * 0
        for x in v:
            out.append(self.c * s)
            s += x
        return out

    def apply_adjoint(self, v):
        out, s, cc = [None] * self.dim, v[0] * 0, _conj(self.c)
        for j in range(self.dim - 1, -1, -1):
            out[j] = cc * s
            s += v[j]
        return out

    def forward_solve(self, lam, b):
        inv = 1 / lam
        c = self.c
        y = [None] * self.dim
        ren = _Renormalizer()
        s = b[0] * 0
        for i in range(self.dim):
            bi = b[i] if ren.bfac is None else b[i] * ren.bfac
            yi = (bi + c * s) * inv
            y[i] = yi
            f = ren.push(y, range(i + 1), yi)
            if f is not None:
                s *= f
                yi = y[i]
            s += yi
        return y, ren.log_scale

    def backward_solve(self, lam, b):
        inv = 1 / _conj(lam)
        c = _conj(self.c)
        n = self.dim
        y = [None] * n
        ren = _Renormalizer()
        s = b[0] * 0
        for j in range(n - 1, -1, -1):
            bj = b[j] if ren.bfac is None else b[j] * ren.bfac
            yj = (bj + c * s) * inv
            y[j] = yj
            f = ren.push(y, range(j, n), yj)
            if f is not None:
                s *= f
                yj = y[j]
            s += yj
        return y, ren.log_scale

    def scaled(self, r):
        return PrefixSumAction(self.dim, r * self.c)

    def abs_row_col_sums(self):
        a = float(abs(self.c))
        return [a * i for i in range(self.dim)], [a * (self.dim - 1 - j) for j in range(self.dim)]


class BlockDiagonalAction(TriangularAction):
    """Direct sum of actions; solves run block by block."""

    def __init__(self, parts, spec=None):
        self.parts = tuple(parts)
        self.offsets = []
        acc = 0
        for p in self.parts:
            self.offsets.append(acc)
            acc += p.dim
        self.dim = acc
        self.is_real = all(p.is_real for p in self.parts)
        self.spec = spec

    @property
    def blocks(self):
        return tuple(zip(self.offsets, self.parts))

    def _split(self, v):
        return [v[o:o + p.dim] for o, p in zip(self.offsets, self.parts)]

    def apply(self, v):
        out = []
        for p, chunk in zip(self.parts, self._split(v)):
            out.extend(p.apply(chunk))
        return out

    def apply_adjoint(self, v):
        out = []
        for p, chunk in zip(self.parts, self._split(v)):
            out.extend(p.apply_adjoint(chunk))
        return out

    def _solve(self, lam, b, adjoint):
        pieces = []
        for p, chunk in zip(self.parts, self._split(b)):
            if all(c == 0 for c in chunk):
                pieces.append((list(chunk), None))
                continue
            y, ls = p.backward_solve(lam, chunk) if adjoint else p.forward_solve(lam, chunk)
            pieces.append((y, ls))
        scales = [ls for _, ls in pieces if ls is not None]
        top = max(scales) if scales else mpfr(0)
        out = []
        for y, ls in pieces:
            if ls is None or ls == top:
                out.extend(y)
            else:
                f = gmpy2.exp(ls - top)
                out.extend(f * c for c in y)
        return out, top

    def forward_solve(self, lam, b):
        return self._solve(lam, b, adjoint=False)

    def backward_solve(self, lam, b):
        return self._solve(lam, b, adjoint=True)

    def scaled(self, r):
        return BlockDiagonalAction([p.scaled(r) for p in self.parts])

    def abs_row_col_sums(self):
        rows, cols = [], []
        for p in self.parts:
            r, c = p.abs_row_col_sums()
            rows.extend(r)
            cols.extend(c)
        return rows, cols


# ---------------------------------------------------------------------------
# construction


def _number(x):
    """Parse a spec entry at the current precision; real values stay mpfr."""
    if isinstance(x, complex):
        return mpc(x) if x.imag != 0 else mpfr(x.real)
    if isinstance(x, mpc):
        return x if x.imag != 0 else x.real
    return to_mpfr(x)


def materialize(spec: OperatorSpec, ctx: PrecisionContext | None = None) -> TriangularAction:
    """Build the triangular action of ``spec`` at ``ctx.mantissa_bits``."""
    with working_precision(ctx):
        action = _materialize(spec)
    action.spec = spec
    return action


def _materialize(spec):
    if isinstance(spec, JordanNilpotent):
        return SubdiagonalAction([mpfr(1)] * (spec.n - 1))
    if isinstance(spec, WeightedShiftA):
        return SubdiagonalAction([mpfr(1) / k for k in range(1, spec.N)])
    if isinstance(spec, Scaled):
        inner = _materialize(spec.inner)
        out = inner.scaled(to_mpfr(spec.factor))
        out.spec = spec
        return out
    if isinstance(spec, DirectSum):
        parts = []
        for p in spec.parts:
            a = _materialize(p)
            a.spec = p
            parts.append(a)
        return BlockDiagonalAction(parts)
    if isinstance(spec, VolterraGrid):
        return _materialize(volterra_matrix(spec.N, spec.rule))
    if isinstance(spec, ExplicitLowerTriangular):
        return _materialize_explicit(spec)
    raise TypeError(f"not an operator spec: {spec!r}")


def _materialize_explicit(spec: ExplicitLowerTriangular):
    n, bands = spec.dim, spec.bands
    if n == 1 or not bands:
        return SubdiagonalAction([mpfr(0)] * (n - 1))
    if len(bands) == n - 1 and all(_is_scalar(b) for b in bands) and len({repr(b) for b in bands}) == 1:
        return PrefixSumAction(n, _number(bands[0]))
    if len(bands) == 1:
        b = bands[0]
        vals = [_number(b)] * (n - 1) if _is_scalar(b) else [_number(x) for x in b]
        return SubdiagonalAction(vals)
    rows = [[] for _ in range(n)]
    for k, band in enumerate(bands, start=1):
        for i in range(k, n):
            t = _number(band if _is_scalar(band) else band[i - k])
            if t != 0:
                rows[i].append((i - k, t))
    return SparseLowerAction(n, rows)


def volterra_matrix(N: int, rule: str = "left") -> ExplicitLowerTriangular:
    """Left-endpoint rule on ``t_i = i/N``: entry ``(i, j) = 1/N`` for ``j < i``."""
    if int(N) != N or N < 2:
        raise ValueError(f"grid size must be >= 2, got {N!r}")
    if rule != "left":
        raise ValueError(f"unsupported quadrature rule {rule!r}")
    # exact rational entry so materialization rounds once at working precision
    c = Fraction(1, N)
    return ExplicitLowerTriangular(N, tuple([c] * (N - 1)))


def embed_summand(spec: DirectSum, part_index: int, local: VectorSpec) -> VectorSpec:
    """Global vector supported exactly on block ``part_index`` of ``spec``."""
    spec = _unwrap_scaled(spec)
    if not isinstance(spec, DirectSum):
        raise TypeError("embed_summand needs a DirectSum spec")
    if not 0 <= part_index < len(spec.parts):
        raise IndexError(f"part index {part_index} out of range for {len(spec.parts)} parts")
    offset = spec.offsets[part_index]
    part = spec.parts[part_index]
    if isinstance(local, SummandVector):
        local = embed_summand(part, local.part_index, local.inner)
    if isinstance(local, BasisVector):
        if local.index >= part.dim:
            raise IndexError(f"basis index {local.index} outside part of dimension {part.dim}")
        return BasisVector(offset + local.index)
    if isinstance(local, Dense):
        if len(local.coefficients) != part.dim:
            raise ValueError("dense vector length does not match the part dimension")
        zeros = (0,)
        return Dense(zeros * offset + local.coefficients + zeros * (spec.dim - offset - part.dim))
    raise TypeError(f"not a vector spec: {local!r}")


def _unwrap_scaled(spec):
    while isinstance(spec, Scaled):
        spec = spec.inner
    return spec


def vector_coefficients(x, spec: OperatorSpec, ctx: PrecisionContext | None = None) -> list:
    """Coefficient list of ``x`` in the global basis of ``spec``.

    ``x`` may be a VectorSpec or a plain sequence of numbers.
    """
    with working_precision(ctx):
        return _coefficients(x, spec)


def _coefficients(x, spec):
    dim = spec.dim
    if isinstance(x, SummandVector):
        x = embed_summand(spec, x.part_index, x.inner)
    if isinstance(x, BasisVector):
        if x.index >= dim:
            raise IndexError(f"basis index {x.index} outside dimension {dim}")
        v = [mpfr(0)] * dim
        v[x.index] = mpfr(1)
        return v
    if isinstance(x, Dense):
        x = x.coefficients
    if isinstance(x, (list, tuple)):
        if len(x) != dim:
            raise ValueError(f"vector has {len(x)} coefficients, operator dimension is {dim}")
        return [c if isinstance(c, (mpfr, mpc)) else _number(c) for c in x]
    raise TypeError(f"not a vector: {x!r}")


# ---------------------------------------------------------------------------
# JSON


def _num_to_json(x):
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    if isinstance(x, mpc):
        return {"re": str(x.real), "im": str(x.imag)}
    if isinstance(x, mpfr):
        return str(x)
    return x


def _num_from_json(x):
    if isinstance(x, dict):
        re, im = x.get("re", 0), x.get("im", 0)
        if isinstance(re, str) or isinstance(im, str):
            with working_precision():
                return mpc(to_mpfr(_num_from_json(re)), to_mpfr(_num_from_json(im)))
        return complex(re, im)
    if isinstance(x, str) and "/" in x:
        return Fraction(x)
    return x


def spec_to_json(spec: OperatorSpec) -> dict:
    if isinstance(spec, JordanNilpotent):
        return {"type": "jordan", "n": spec.n}
    if isinstance(spec, WeightedShiftA):
        return {"type": "shift", "N": spec.N}
    if isinstance(spec, Scaled):
        return {"type": "scaled", "factor": _num_to_json(spec.factor), "inner": spec_to_json(spec.inner)}
    if isinstance(spec, DirectSum):
        return {"type": "direct_sum", "parts": [spec_to_json(p) for p in spec.parts]}
    if isinstance(spec, VolterraGrid):
        return {"type": "volterra", "N": spec.N, "rule": spec.rule}
    if isinstance(spec, ExplicitLowerTriangular):
        bands = [_num_to_json(b) if _is_scalar(b) else [_num_to_json(x) for x in b] for b in spec.bands]
        return {"type": "explicit", "dim": spec.dim, "bands": bands}
    raise TypeError(f"not an operator spec: {spec!r}")


def spec_from_json(data: dict) -> OperatorSpec:
    try:
        kind = data["type"]
        if kind == "jordan":
            return JordanNilpotent(int(data["n"]))
        if kind == "shift":
            return WeightedShiftA(int(data["N"]))
        if kind == "scaled":
            return Scaled(_num_from_json(data["factor"]), spec_from_json(data["inner"]))
        if kind == "direct_sum":
            return DirectSum(tuple(spec_from_json(p) for p in data["parts"]))
        if kind == "volterra":
            return VolterraGrid(int(data["N"]), data.get("rule", "left"))
        if kind == "explicit":
            bands = []
            for b in data.get("bands", []):
                if isinstance(b, list):
                    bands.append(tuple(_num_from_json(x) for x in b))
                else:
                    bands.append(_num_from_json(b))
            return ExplicitLowerTriangular(int(data["dim"]), tuple(bands))
    except KeyError as exc:
        raise ValueError(f"operator JSON is missing field {exc}") from None
    raise ValueError(f"unknown operator type {data.get('type')!r}")


def vector_to_json(x: VectorSpec) -> dict:
    if isinstance(x, BasisVector):
        return {"type": "basis", "index": x.index}
    if isinstance(x, Dense):
        return {"type": "dense", "coefficients": [_num_to_json(c) for c in x.coefficients]}
    if isinstance(x, SummandVector):
        return {"type": "summand", "part": x.part_index, "inner": vector_to_json(x.inner)}
    raise TypeError(f"not a vector spec: {x!r}")


def vector_from_json(data: dict) -> VectorSpec:
    try:
        kind = data["type"]
        if kind == "basis":
            return BasisVector(int(data["index"]))
        if kind == "dense":
            return Dense(tuple(_num_from_json(c) for c in data["coefficients"]))
        if kind == "summand":
            return SummandVector(int(data["part"]), vector_from_json(data["inner"]))
    except KeyError as exc:
        raise ValueError(f"vector JSON is missing field {exc}") from None
    raise ValueError(f"unknown vector type {data.get('type')!r}")
