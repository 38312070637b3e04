"""Right-closed subsets of [0, 1] and direct sums of scaled shifts realizing them.

A set is right closed when it contains the supremum of each of its nonempty
subsets.  For a finite union of intervals and points that reduces to: every
interval contains its right endpoint.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator

from .operators import DirectSum, Scaled, WeightedShiftA

__all__ = [
    "Interval",
    "RightClosedSetRep",
    "is_right_closed",
    "right_closure",
    "left_isolated_points",
    "iter_sequence",
    "extract_sequence",
    "build_power_set_operator",
    "MAX_DYADIC_LEVEL",
]

# Dyadic mesh stops at 2^-52, the spacing of doubles near 1.
MAX_DYADIC_LEVEL = 52


@dataclass(frozen=True)
class Interval:
    left: float
    right: float
    left_closed: bool
    right_closed: bool

    def __post_init__(self):
        for name in ("left", "right"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("left_closed", "right_closed"):
            object.__setattr__(self, name, bool(getattr(self, name)))
        if not 0 <= self.left < self.right <= 1:
            raise ValueError(f"interval needs 0 <= left < right <= 1, got ({self.left}, {self.right})")

    def __contains__(self, x) -> bool:
        if self.left < x < self.right:
            return True
        return (x == self.left and self.left_closed) or (x == self.right and self.right_closed)

    def to_json(self) -> dict:
        return {"l": self.left, "r": self.right, "lc": self.left_closed, "rc": self.right_closed}

    def __str__(self):
        return f"{'[' if self.left_closed else '('}{self.left!r}, {self.right!r}{']' if self.right_closed else ')'}"


def _as_interval(iv) -> Interval:
    if isinstance(iv, Interval):
        return iv
    if isinstance(iv, dict):
        return Interval(float(iv["l"]), float(iv["r"]), bool(iv["lc"]), bool(iv["rc"]))
    left, right, lc, rc = iv
    return Interval(float(left), float(right), bool(lc), bool(rc))


def _canonical(intervals, points):
    """Merge overlapping or touching pieces; points act as closed [p, p]."""
    pieces = [(iv.left, iv.right, iv.left_closed, iv.right_closed) for iv in intervals]
    pieces += [(p, p, True, True) for p in points]
    pieces.sort(key=lambda c: (c[0], not c[2]))
    merged = []
    for lo, hi, lc, rc in pieces:
        if merged:
            mlo, mhi, mlc, mrc = merged[-1]
            if lo < mhi or (lo == mhi and (mrc or lc)):
                if hi > mhi:
                    mhi, mrc = hi, rc
                elif hi == mhi:
                    mrc = mrc or rc
                merged[-1] = (mlo, mhi, mlc or (lo == mlo and lc), mrc)
                continue
        merged.append((lo, hi, lc, rc))
    ivs = tuple(Interval(*c) for c in merged if c[0] < c[1])
    pts = tuple(c[0] for c in merged if c[0] == c[1])
    return ivs, pts


class RightClosedSetRep:
    """Finite union of intervals and isolated points inside [0, 1], kept in a
    canonical form: sorted, disjoint, non-touching, points outside intervals.

    Despite the name the represented set need not be right closed; see
    :func:`is_right_closed`.
    """

    __slots__ = ("intervals", "points")

    def __init__(self, intervals=(), points=()):
        ivs = [_as_interval(iv) for iv in intervals]
        pts = []
        for p in points:
            p = float(p)
            if not 0 <= p <= 1:
                raise ValueError(f"point {p} outside [0, 1]")
            pts.append(p)
        self.intervals, self.points = _canonical(ivs, pts)

    def __contains__(self, x) -> bool:
        return x in self.points or any(x in iv for iv in self.intervals)

    def is_empty(self) -> bool:
        return not self.intervals and not self.points

    def is_finite(self) -> bool:
        return not self.intervals

    def __eq__(self, other):
        if not isinstance(other, RightClosedSetRep):
            return NotImplemented
        return self.intervals == other.intervals and self.points == other.points

    def __hash__(self):
        return hash((self.intervals, self.points))

    def __repr__(self):
        parts = [str(iv) for iv in self.intervals] + [f"{{{p!r}}}" for p in self.points]
        return "RightClosedSetRep(" + (" U ".join(parts) or "empty") + ")"

    def to_json(self) -> dict:
        return {"intervals": [iv.to_json() for iv in self.intervals], "points": list(self.points)}

    @classmethod
    def from_json(cls, data) -> RightClosedSetRep:
        if not isinstance(data, dict):
            raise ValueError("set JSON must be an object with 'intervals' and 'points'")
        unknown = set(data) - {"intervals", "points"}
        if unknown:
            raise ValueError(f"unknown set fields: {sorted(unknown)}")
        try:
            return cls(data.get("intervals", ()), data.get("points", ()))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed set JSON: {exc}") from exc


def _nonempty(S: RightClosedSetRep):
    if S.is_empty():
        raise ValueError("the set must be nonempty")


def is_right_closed(S: RightClosedSetRep) -> bool:
    _nonempty(S)
    return all(iv.right_closed for iv in S.intervals)


def right_closure(S: RightClosedSetRep) -> RightClosedSetRep:
    """Smallest right-closed set containing S: adjoin every right endpoint."""
    _nonempty(S)
    closed = [Interval(iv.left, iv.right, iv.left_closed, True) for iv in S.intervals]
    return RightClosedSetRep(closed, S.points)


def left_isolated_points(S: RightClosedSetRep) -> tuple[float, ...]:
    """Members with no other member immediately to their left, ascending.

    In canonical form these are the isolated points and the included left
    endpoints of intervals.
    """
    found = set(S.points)
    found.update(iv.left for iv in S.intervals if iv.left_closed)
    return tuple(sorted(found))


def _dyadics(S: RightClosedSetRep) -> Iterator[float]:
    """Dyadic members of the intervals by increasing denominator, then numerator."""
    for m in range(1, MAX_DYADIC_LEVEL + 1):
        scale = 2**m
        for iv in S.intervals:
            start = math.ceil(iv.left * scale)
            start += 1 - start % 2  # odd numerators only; even ones appeared at a coarser level
            for k in range(start, math.floor(iv.right * scale) + 1, 2):
                v = k / scale
                if v in iv:
                    yield v
    raise RuntimeError("dyadic enumeration exhausted at 2^-52")


def iter_sequence(S: RightClosedSetRep) -> Iterator[float]:
    """Infinite sequence of members of S, starting with 1, whose right
    closure is S.

    Left-isolated members come first in ascending order, then a dense dyadic
    mesh of the intervals.  A finite S is cycled.
    """
    if not is_right_closed(S):
        raise ValueError(f"{S!r} is not right closed")
    if 1.0 not in S:
        raise ValueError("the realization requires 1 in the target set")
    head = [1.0] + [p for p in left_isolated_points(S) if p != 1.0]
    if S.is_finite():
        yield from itertools.cycle(head)
    seen = set(head)
    yield from head
    for v in _dyadics(S):
        if v not in seen:
            seen.add(v)
            yield v


def extract_sequence(S: RightClosedSetRep, K: int) -> list[float]:
    """First K terms of :func:`iter_sequence`."""
    if int(K) != K or K < 1:
        raise ValueError("K must be a positive integer")
    return list(itertools.islice(iter_sequence(S), K))


def build_power_set_operator(S: RightClosedSetRep, K: int, N: int) -> DirectSum:
    """``r_1 A_N (+) ... (+) r_K A_N`` with ``r_k`` from :func:`extract_sequence`.

    A vector supported on summand k has exponent ``r_k``; a vector with
    mass on several summands has the largest of their rates.
    """
    if int(N) != N or N < 2:
        raise ValueError("N must be an integer >= 2")
    rates = extract_sequence(S, K)
    return DirectSum(tuple(Scaled(r, WeightedShiftA(N)) for r in rates))
