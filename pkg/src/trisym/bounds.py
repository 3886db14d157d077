"""Communication lower bounds for SYRK, SYR2K and SYMM.

Notation: ``N = n1*(n1-1)`` counts the off-diagonal entries of the symmetric
matrix twice, ``m`` is the number of non-symmetric matrices.  Every bound is
a real number; nothing is floored.

Alongside the closed forms live two grid-search oracles that re-solve the
underlying constrained optimization problems without using the closed
forms, plus a KKT residual used to certify the memory-independent solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import KernelShape

__all__ = [
    "MemIndepResult",
    "OptPoint",
    "MemIndepPoint",
    "seq_read_lb",
    "par_memdep_lb",
    "memindep_case",
    "memindep_W",
    "memindep_lb",
    "memdep_opt_solve",
    "memdep_opt_oracle",
    "memindep_opt_solve",
    "memindep_opt_oracle",
    "memindep_kkt_residual",
]


@dataclass(frozen=True)
class MemIndepResult:
    case_id: int
    W: float
    lb: float
    thresholds: tuple[float, float]
    W_by_case: dict[int, float]


@dataclass(frozen=True)
class OptPoint:
    x1: float
    x2: float
    value: float


@dataclass(frozen=True)
class MemIndepPoint:
    case_id: int
    x1: float
    x2: float

    def value(self, m: int) -> float:
        return m * self.x1 + self.x2


def seq_read_lb(s: KernelShape, M: float) -> float:
    """Reads needed by any sequential schedule with fast memory M."""
    return s.m / math.sqrt(2) * s.n1 * (s.n1 - 1) * s.n2 / math.sqrt(M) - 2 * M


def par_memdep_lb(s: KernelShape, P: int, M: float) -> float:
    """Words some processor must receive when each holds M words."""
    return s.m / math.sqrt(2) * s.n1 * (s.n1 - 1) * s.n2 / (P * math.sqrt(M)) - 2 * M


def _thresholds(m: int, n1: int, n2: int) -> tuple[float, float]:
    N = n1 * (n1 - 1)
    return m * n2 / math.sqrt(N), N / (m * n2) ** 2


def memindep_case(m: int, n1: int, n2: int, P: int) -> int:
    """Case of the memory-independent bound; ties go to the lower case."""
    t1, t2 = _thresholds(m, n1, n2)
    if n1 <= m * n2 and P <= t1:
        return 1
    if m * n2 < n1 and P <= t2:
        return 2
    return 3


def memindep_W(m: int, n1: int, n2: int, P: int, case_id: int) -> float:
    N = n1 * (n1 - 1)
    if case_id == 1:
        return m * n2 * math.sqrt(N) / P + N / 2
    if case_id == 2:
        return m * n2 * math.sqrt(N / P) + N / (2 * P)
    if case_id == 3:
        return 1.5 * (m * N * n2 / P) ** (2 / 3)
    raise ValueError(f"no case {case_id}")


def memindep_lb(s: KernelShape, P: int) -> MemIndepResult:
    m, n1, n2 = s.m, s.n1, s.n2
    case_id = memindep_case(m, n1, n2, P)
    W_all = {c: memindep_W(m, n1, n2, P, c) for c in (1, 2, 3)}
    W = W_all[case_id]
    owned = (n1 * (n1 - 1) / 2 + m * n1 * n2) / P
    return MemIndepResult(case_id, W, W - owned, _thresholds(m, n1, n2), W_all)


# -- memory-dependent optimization problem ------------------------------------


def memdep_opt_solve(m: int, X: float) -> OptPoint:
    """max (sqrt2/2) x1 sqrt(x2) subject to m x1 + x2 <= X."""
    x1, x2 = 2 * X / (3 * m), X / 3
    return OptPoint(x1, x2, math.sqrt(2) * X**1.5 / (3 * math.sqrt(3) * m))


def memdep_opt_oracle(m: int, X: float, grid: int = 2000) -> OptPoint:
    """Dense search over the lattice x1 = i/g * X/m, x2 = j/g * X, i + j <= g."""
    g = int(grid)
    i = np.arange(g + 1, dtype=float)[:, None]
    j = np.arange(g + 1, dtype=float)[None, :]
    x1 = i / g * X / m
    x2 = j / g * X
    val = np.sqrt(2) / 2 * x1 * np.sqrt(x2)
    val = np.where(i + j <= g, val, -np.inf)
    a, b = np.unravel_index(int(np.argmax(val)), val.shape)
    return OptPoint(float(x1[a, 0]), float(x2[0, b]), float(val[a, b]))


# -- memory-independent optimization problem ------------------------------------


def _memindep_consts(m: int, n1: int, n2: int, P: int) -> tuple[float, float]:
    N = n1 * (n1 - 1)
    L = N * n2 / (math.sqrt(2) * P)
    return N, L


def memindep_opt_solve(m: int, n1: int, n2: int, P: int) -> MemIndepPoint:
    """min m x1 + x2 s.t. x1^2 x2 >= L^2, N/(2P) <= x2 <= N/2, x1 >= 0."""
    N, L = _memindep_consts(m, n1, n2, P)
    case_id = memindep_case(m, n1, n2, P)
    if case_id == 1:
        x2 = N / 2
        x1 = n2 * math.sqrt(N) / P
    elif case_id == 2:
        x2 = N / (2 * P)
        x1 = n2 * math.sqrt(N / P)
    else:
        V = N * n2 / P
        x1 = m ** (-1 / 3) * V ** (2 / 3)
        x2 = m ** (2 / 3) * V ** (2 / 3) / 2
    return MemIndepPoint(case_id, x1, x2)


def memindep_opt_oracle(m: int, n1: int, n2: int, P: int, grid: int = 20001) -> tuple[MemIndepPoint, float]:
    """Grid search over x2 with x1 set to the smallest feasible value.

    Returns the best point and the width of the grid cell it sits in.
    The x2 grid is geometric and contains both interval endpoints exactly.
    """
    N, L = _memindep_consts(m, n1, n2, P)
    lo, hi = N / (2 * P), N / 2
    if hi <= lo:
        x2 = np.array([lo])
    else:
        x2 = np.geomspace(lo, hi, grid)
        x2[0], x2[-1] = lo, hi
    x1 = L / np.sqrt(x2)
    obj = np.where(x1 <= m * n1 * n2, m * x1 + x2, np.inf)
    b = int(np.argmin(obj))
    cell = 0.0 if x2.size == 1 else float(max(x2[min(b + 1, x2.size - 1)] - x2[b], x2[b] - x2[max(b - 1, 0)]))
    return MemIndepPoint(0, float(x1[b]), float(x2[b])), cell


def memindep_kkt_residual(m: int, n1: int, n2: int, P: int, pt: MemIndepPoint) -> float:
    """Largest normalized KKT violation at ``pt`` using the case multipliers.

    Constraints in g(x) <= 0 form:
    g1 = L^2 - x1^2 x2, g2 = -x1, g3 = N/(2P) - x2, g4 = x2 - N/2.
    """
    N, L = _memindep_consts(m, n1, n2, P)
    x1, x2 = pt.x1, pt.x2
    if pt.case_id == 1:
        mu = [m * P / (N**1.5 * n2), 0.0, 0.0, m * n2 / (math.sqrt(N) * P) - 1]
    elif pt.case_id == 2:
        mu = [m * P**1.5 / (N**1.5 * n2), 0.0, 1 - m * n2 * math.sqrt(P / N), 0.0]
    else:
        mu = [m ** (2 / 3) * (P / (N * n2)) ** (4 / 3), 0.0, 0.0, 0.0]
    g = [L**2 - x1**2 * x2, -x1, N / (2 * P) - x2, x2 - N / 2]
    gscale = [L**2, x1, N / (2 * P), N / 2]
    jac = [(-2 * x1 * x2, -(x1**2)), (-1.0, 0.0), (0.0, -1.0), (0.0, 1.0)]
    grad_f = (float(m), 1.0)
    res = []
    for d in range(2):
        terms = [grad_f[d]] + [mu[i] * jac[i][d] for i in range(4)]
        res.append(abs(sum(terms)) / max(abs(t) for t in terms))
    for i in range(4):
        res.append(max(0.0, g[i]) / gscale[i])          # primal feasibility
        res.append(max(0.0, -mu[i]) / max(1.0, max(abs(v) for v in mu)))  # dual feasibility
        res.append(abs(mu[i] * g[i]) / (abs(mu[i]) * gscale[i] + 1e-300))  # slackness
    return max(res)
