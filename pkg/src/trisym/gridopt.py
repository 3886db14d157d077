"""Algorithm family and processor grid selection.

Predicted bandwidth per processor, with s = n1/c^2 and p1 = c(c+1):

* 1D:  n1(n1+1)/2 * (1 - 1/P)
* 2D:  m * n1*n2/c * (1 - 1/p1)
* 3D:  m * n1*(n2/p2)/c * (1 - 1/p1) + T(c) * (1 - 1/p2)
  with T(c) = c(c-1)/2 * s^2 + s(s+1)/2 the triangle block of blocks.

The memory-independent case predicate names a family.  Each family's
grid is rounded down to a feasible p1; if rounding leaves the named family
predicting more words than another one, the cheaper family is taken and
``overridden`` is set.  Ties go to the lower dimension.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .bounds import memindep_case
from .gf import MAX_ORDER, prime_powers
from .kernels import KernelShape

__all__ = [
    "GridChoice",
    "LimitedParams",
    "FEASIBLE_P1",
    "feasible_p1",
    "predict_1d",
    "predict_2d",
    "predict_3d",
    "ideal_3d",
    "select_grid",
    "alternatives",
    "family_grid",
    "limited_params",
]

FEASIBLE_P1 = tuple(c * (c + 1) for c in prime_powers(MAX_ORDER))
_C_OF = {c * (c + 1): c for c in prime_powers(MAX_ORDER)}
_DIM = {"1d": 1, "2d": 2, "3d": 3}


@dataclass(frozen=True)
class GridChoice:
    algo: str
    p1: int
    p2: int
    c: int | None
    ideal_p1: float | None
    predicted_bandwidth: float
    utilization: float
    case_id: int
    overridden: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LimitedParams:
    p1: int
    p2: int
    b: int
    c: int


def feasible_p1(limit: float) -> int | None:
    """Largest c(c+1) <= limit, or None."""
    best = None
    for p in FEASIBLE_P1:
        if p <= limit:
            best = p
    return best


def triangle_of_blocks(n1: float, c: int) -> float:
    s = n1 / (c * c)
    return c * (c - 1) / 2 * s * s + s * (s + 1) / 2


def predict_1d(s: KernelShape, P: int) -> float:
    return s.n1 * (s.n1 + 1) / 2 * (1 - 1 / P)


def predict_2d(s: KernelShape, c: int) -> float:
    p1 = c * (c + 1)
    return s.m * s.n1 * s.n2 / c * (1 - 1 / p1)


def predict_3d(s: KernelShape, c: int, p2: float) -> float:
    p1 = c * (c + 1)
    return s.m * s.n1 * (s.n2 / p2) / c * (1 - 1 / p1) + triangle_of_blocks(s.n1, c) * (1 - 1 / p2)


def ideal_3d(s: KernelShape, P: int) -> tuple[float, float]:
    """Unrounded (p1, p2) balancing the two leading 3D terms."""
    p1 = (s.n1 * P / (s.m * s.n2)) ** (2 / 3)
    return p1, P / p1


def _candidates(s: KernelShape, P: int) -> dict[str, GridChoice]:
    case_id = memindep_case(s.m, s.n1, s.n2, P)
    out = {"1d": GridChoice("1d", 1, P, None, None, predict_1d(s, P), 1.0, case_id)}
    p1 = feasible_p1(P)
    if p1 is not None:
        c = _C_OF[p1]
        out["2d"] = GridChoice("2d", p1, 1, c, None, predict_2d(s, c), p1 / P, case_id)
    ideal, _ = ideal_3d(s, P) if s.n2 else (float("inf"), 0.0)
    p1 = feasible_p1(min(ideal, P))
    if p1 is not None:
        c, p2 = _C_OF[p1], P // p1
        out["3d"] = GridChoice("3d", p1, p2, c, ideal, predict_3d(s, c, p2), p1 * p2 / P, case_id)
    return out


def select_grid(s: KernelShape, P: int) -> GridChoice:
    if P < 1:
        raise ValueError("need P >= 1")
    cands = _candidates(s, P)
    case_id = memindep_case(s.m, s.n1, s.n2, P)
    named = {1: "1d", 2: "2d", 3: "3d"}[case_id]
    best = min(cands.values(), key=lambda g: (g.predicted_bandwidth, _DIM[g.algo]))
    pick = cands.get(named)
    if pick is None or best.predicted_bandwidth < pick.predicted_bandwidth:
        return GridChoice(**{**best.to_dict(), "overridden": True})
    return pick


def alternatives(s: KernelShape, P: int) -> dict[str, GridChoice]:
    """Every family's rounded grid; used to check the selector's dominance."""
    return _candidates(s, P)


def family_grid(s: KernelShape, P: int, algo: str) -> tuple[int, int]:
    """(p1, p2) used when ``algo`` is forced rather than selected.

    3D falls back to the smallest grid p1 = 6 when the ideal p1 is below it.
    """
    if algo == "1d":
        return 1, P
    if FEASIBLE_P1[0] > P:
        raise ValueError(f"no c(c+1) grid fits in P={P}")
    if algo == "2d":
        return feasible_p1(P), 1
    if algo == "3d":
        cand = _candidates(s, P).get("3d")
        p1 = cand.p1 if cand is not None else FEASIBLE_P1[0]
        return p1, P // p1
    raise ValueError(f"unknown algorithm {algo!r}")


def _nearest_divisor(P: int, x: float) -> int:
    divs = [d for d in range(2, P + 1) if P % d == 0]
    if not divs:
        return 1
    return min(divs, key=lambda d: (abs(d - x), d))


def limited_params(P: int, x: float, n1: int, c: int | None = None) -> LimitedParams:
    """Grid and step width for the memory-limited 3D algorithms.

    p2 is the divisor of P nearest to x (above 1), p1 the largest feasible
    c(c+1) <= P/p2 and b = max(1, floor(sqrt(n1/c))).
    """
    p2 = _nearest_divisor(P, x)
    p1 = feasible_p1(P / p2)
    while p1 is None and p2 > 1:
        p2 = max(d for d in range(1, p2) if P % d == 0)
        p1 = feasible_p1(P / p2)
    if p1 is None:
        raise ValueError(f"no feasible grid for P={P}")
    c_grid = _C_OF[p1]
    cb = c if c is not None else c_grid
    b = max(1, math.isqrt(n1 // cb))
    return LimitedParams(p1, p2, b, c_grid)
