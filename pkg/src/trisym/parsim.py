"""Simulated distributed-memory execution of SYRK, SYR2K and SYMM.

Ranks are simulated one superstep at a time.  They share nothing except
what the collectives move, and every collective is charged with the
pairwise-exchange cost model.  For a group of G ranks and a payload of n
words per member that is G-1 messages and (1 - 1/G)*n words sent and
received per member; a reduce-scatter also costs (1 - 1/G)*n flops.

Algorithms
----------
1D
    Columns of the non-symmetric matrices are split across the P ranks.
    SYRK/SYR2K reduce-scatter the packed result; SYMM all-gathers A.
2D / 3D / 3D limited
    Ranks form a p1 x p2 grid with p1 = c(c+1).  Within a column slice the
    symmetric matrix is distributed by the affine triangle-block partition
    over c^2 block rows of height ceil(n1/c^2).  Rank (k, l) needs the rows
    of the non-symmetric matrices indexed by R[k]; these arrive through an
    all-to-all among the p1 ranks of slice l.  The triangle block of blocks
    T_k is shared by the p2 ranks (k, *) and combined by a reduce-scatter
    (SYRK, SYR2K) or replicated by an all-gather (SYMM).  The limited
    variant streams each slice through the 2D step b columns at a time.

Rank (k, l) has id ``l*p1 + k``, so a 2D run uses ids 0..p1-1 directly.
Word counts are exact rationals.  Rows and columns added by padding are
never stored, moved or counted.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import tbp
from .errors import DimensionMismatch, GroupEmpty, InfeasibleGrid, MemoryOverflow
from .gf import is_prime_power
from .kernels import Kernel, KernelInstance, packed_index, packed_size, tril_coords

__all__ = [
    "MachineSpec",
    "RankCost",
    "PhaseCost",
    "CostLedger",
    "CollectiveCost",
    "collective",
    "Machine",
    "Distribution",
    "ParResult",
    "grid_c",
    "distribute",
    "run_1d",
    "run_2d",
    "run_3d",
    "run_3d_limited",
    "run_par",
]


@dataclass(frozen=True)
class MachineSpec:
    p1: int = 1
    p2: int = 1
    M: int | None = None
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.p1 < 1 or self.p2 < 1:
            raise InfeasibleGrid(f"grid {self.p1}x{self.p2} is empty")

    @property
    def P(self) -> int:
        return self.p1 * self.p2


@dataclass
class RankCost:
    words_sent: Fraction = Fraction(0)
    words_received: Fraction = Fraction(0)
    messages: int = 0
    flops: Fraction = Fraction(0)
    memory: int = 0
    peak_memory: int = 0
    owned_words: int = 0


@dataclass(frozen=True)
class PhaseCost:
    name: str
    messages: int
    words: Fraction
    flops: Fraction


@dataclass
class CostLedger:
    ranks: list[RankCost]
    phases: list[PhaseCost] = field(default_factory=list)
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    @property
    def max_words_received(self) -> Fraction:
        return max(r.words_received for r in self.ranks)

    @property
    def max_words_sent(self) -> Fraction:
        return max(r.words_sent for r in self.ranks)

    @property
    def max_words(self) -> Fraction:
        return max(max(r.words_sent, r.words_received) for r in self.ranks)

    @property
    def max_messages(self) -> int:
        return max(r.messages for r in self.ranks)

    @property
    def max_flops(self) -> Fraction:
        return max(r.flops for r in self.ranks)

    @property
    def peak_memory(self) -> int:
        return max(r.peak_memory for r in self.ranks)

    @property
    def total_sent(self) -> Fraction:
        return sum((r.words_sent for r in self.ranks), Fraction(0))

    @property
    def total_received(self) -> Fraction:
        return sum((r.words_received for r in self.ranks), Fraction(0))

    @property
    def modeled_time(self) -> float:
        return sum(
            self.alpha * ph.messages + self.beta * float(ph.words) + self.gamma * float(ph.flops)
            for ph in self.phases
        )

    def snapshot(self) -> tuple:
        """Hashable view used to compare ledgers of different runs."""
        return (
            tuple((r.words_sent, r.words_received, r.messages, r.flops, r.peak_memory, r.owned_words)
                  for r in self.ranks),
            tuple(self.phases),
        )

    def to_dict(self) -> dict:
        return {
            "max_words_received": float(self.max_words_received),
            "max_words_sent": float(self.max_words_sent),
            "max_messages": self.max_messages,
            "max_flops": float(self.max_flops),
            "peak_memory": self.peak_memory,
            "modeled_time": self.modeled_time,
            "total_words_sent": float(self.total_sent),
            "total_words_received": float(self.total_received),
            "phases": len(self.phases),
            "per_rank": [
                {"words_sent": float(r.words_sent), "words_received": float(r.words_received),
                 "messages": r.messages, "flops": float(r.flops), "peak_memory": r.peak_memory,
                 "owned_words": r.owned_words}
                for r in self.ranks
            ],
        }


@dataclass(frozen=True)
class CollectiveCost:
    messages: int
    words: Fraction
    flops: Fraction


def collective(kind: str, group_size: int, payload_per_proc) -> CollectiveCost:
    """Per-member cost of one pairwise-exchange collective."""
    if kind not in ("all_to_all", "reduce_scatter", "all_gather"):
        raise ValueError(f"unknown collective {kind!r}")
    G = group_size
    if G < 1:
        raise GroupEmpty("collective over an empty group")
    words = (1 - Fraction(1, G)) * Fraction(payload_per_proc)
    flops = words if kind == "reduce_scatter" else Fraction(0)
    return CollectiveCost(G - 1, words, flops)


def _even_splits(total: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous ranges, earlier parts take the remainder."""
    q, rem = divmod(total, parts)
    out, lo = [], 0
    for i in range(parts):
        hi = lo + q + (1 if i < rem else 0)
        out.append((lo, hi))
        lo = hi
    return out


def _tree_sum(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise (recursive halving) sum in rank order."""
    arrs = list(arrays)
    while len(arrs) > 1:
        nxt = [arrs[i] + arrs[i + 1] for i in range(0, len(arrs) - 1, 2)]
        if len(arrs) % 2:
            nxt.append(arrs[-1])
        arrs = nxt
    return arrs[0]


class Machine:
    """Per-rank cost ledger, memory accounting and data-moving collectives."""

    def __init__(self, spec: MachineSpec, P: int | None = None):
        self.spec = spec
        self.P = spec.P if P is None else P
        self.ledger = CostLedger([RankCost() for _ in range(self.P)],
                                 alpha=spec.alpha, beta=spec.beta, gamma=spec.gamma)
        self._phase: dict[int, list] | None = None

    # memory ----------------------------------------------------------------
    def alloc(self, rank: int, words: int) -> None:
        rc = self.ledger.ranks[rank]
        rc.memory += int(words)
        rc.peak_memory = max(rc.peak_memory, rc.memory)
        if self.spec.M is not None and rc.memory > self.spec.M:
            raise MemoryOverflow(f"rank {rank} holds {rc.memory} words, cap is {self.spec.M}")

    def free(self, rank: int, words: int) -> None:
        self.ledger.ranks[rank].memory -= int(words)

    def own(self, rank: int, words: int) -> None:
        self.ledger.ranks[rank].owned_words += int(words)
        self.alloc(rank, words)

    # phases ----------------------------------------------------------------
    @contextmanager
    def phase(self, name: str):
        """Collect costs of concurrent work; the phase costs the max over ranks."""
        outer = self._phase
        self._phase = {}
        try:
            yield
        finally:
            acc, self._phase = self._phase, outer
            if acc:
                msgs = max(v[0] for v in acc.values())
                words = max(v[1] for v in acc.values())
                flops = max(v[2] for v in acc.values())
                self.ledger.phases.append(PhaseCost(name, msgs, words, flops))

    def _charge(self, rank: int, msgs: int = 0, sent=0, received=0, flops=0) -> None:
        rc = self.ledger.ranks[rank]
        rc.messages += msgs
        rc.words_sent += Fraction(sent)
        rc.words_received += Fraction(received)
        rc.flops += Fraction(flops)
        if self._phase is not None:
            cur = self._phase.setdefault(rank, [0, Fraction(0), Fraction(0)])
            cur[0] += msgs
            cur[1] += max(Fraction(sent), Fraction(received))
            cur[2] += Fraction(flops)
        else:
            self.ledger.phases.append(
                PhaseCost("step", msgs, max(Fraction(sent), Fraction(received)), Fraction(flops)))

    def compute(self, rank: int, flops) -> None:
        self._charge(rank, flops=flops)

    def _meter(self, kind: str, group: Sequence[int], n) -> None:
        cost = collective(kind, len(group), n)
        for r in group:
            self._charge(r, cost.messages, cost.words, cost.words, cost.flops)

    # collectives -------------------------------------------------------------
    def all_to_all(self, group: Sequence[int], send: dict[int, dict[int, np.ndarray]],
                   slot: int | None = None) -> dict[int, dict[int, np.ndarray]]:
        """Deliver ``send[src][dst]``; every slot is charged at the largest block size."""
        if not group:
            raise GroupEmpty("all_to_all over an empty group")
        members = set(group)
        recv: dict[int, dict[int, np.ndarray]] = {r: {} for r in group}
        biggest = 0
        for src, out in send.items():
            for dst, buf in out.items():
                if src not in members or dst not in members:
                    raise ValueError(f"message {src}->{dst} leaves the group")
                recv[dst][src] = buf.copy()
                biggest = max(biggest, buf.size)
        slot = biggest if slot is None else slot
        self._meter("all_to_all", group, len(group) * slot)
        return recv

    def reduce_scatter(self, group: Sequence[int], contrib: dict[int, np.ndarray],
                       segments: Sequence[tuple[int, int]]) -> dict[int, np.ndarray]:
        """Sum the members' vectors; member g keeps ``segments[g]`` of the sum."""
        if not group:
            raise GroupEmpty("reduce_scatter over an empty group")
        n = contrib[group[0]].size
        if any(contrib[r].size != n for r in group):
            raise DimensionMismatch("reduce_scatter contributions differ in length")
        self._meter("reduce_scatter", group, n)
        out = {}
        for g, r in enumerate(group):
            lo, hi = segments[g]
            out[r] = _tree_sum([contrib[s][lo:hi] for s in group])
        return out

    def all_gather(self, group: Sequence[int], pieces: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
        if not group:
            raise GroupEmpty("all_gather over an empty group")
        full = np.concatenate([pieces[r] for r in group])
        self._meter("all_gather", group, full.size)
        return {r: full.copy() for r in group}


# -- distributions --------------------------------------------------------------


@dataclass
class Distribution:
    """Who owns which element at the start and end of a run.

    ``sym[rank]`` lists packed positions of the symmetric matrix;
    ``nonsym[rank]`` lists flat positions ``row*n2 + col`` owned in every
    non-symmetric matrix (the same layout is used for A, B and C).
    """

    layout: str
    P: int
    n1: int
    n2: int
    sym: list[np.ndarray]
    nonsym: list[np.ndarray]
    c: int | None = None
    p1: int = 1
    p2: int = 1
    b: int | None = None
    partition: tbp.TrianglePartition | None = None
    detail: dict = field(default_factory=dict)

    def owner_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """How many ranks own each symmetric and non-symmetric element."""
        s = np.bincount(np.concatenate(self.sym), minlength=packed_size(self.n1))
        ns = np.bincount(np.concatenate(self.nonsym), minlength=self.n1 * self.n2)
        return s, ns

    def sym_blocks(self, rank: int) -> list[tuple[int, int]]:
        """Block coordinates (i, j), i >= j, whose entries this rank holds."""
        if self.partition is None:
            return []
        return self.detail["sym_blocks"][rank]


def grid_c(p1: int) -> int:
    """The prime power c with c(c+1) = p1."""
    c = int((p1 ** 0.5))
    while c * (c + 1) < p1:
        c += 1
    if c * (c + 1) != p1 or not is_prime_power(c):
        raise InfeasibleGrid(f"p1={p1} is not c(c+1) for a prime power c")
    return c


class _GridLayout:
    """Index bookkeeping for the triangle-block layouts (2D, 3D, limited)."""

    def __init__(self, n1: int, n2: int, c: int, p2: int, b: int | None):
        self.n1, self.n2, self.c, self.p2 = n1, n2, c, p2
        self.p1 = c * (c + 1)
        self.part = tbp.assign_diagonals(tbp.affine_partition(c))
        self.Q = tbp.q_sets(self.part).Q
        self.s = -(-n1 // (c * c))
        self.w = -(-n2 // p2) if n2 else 0
        self.b = self.w if b is None else b
        if self.b < 1 and self.w:
            raise ValueError("b must be positive")
        self.steps = -(-self.w // self.b) if self.w else 0
        # block rows (real part only)
        self.rows = [np.arange(i * self.s, min((i + 1) * self.s, n1)) for i in range(c * c)]
        self.T, self.sym_blocks = self._triangle_blocks()
        self.T_split = [_even_splits(len(t), p2) for t in self.T]

    def rank(self, k: int, l: int) -> int:
        return l * self.p1 + k

    def chunk_cols(self, l: int, t: int) -> np.ndarray:
        lo = l * self.w + t * self.b
        hi = min(l * self.w + min((t + 1) * self.b, self.w), self.n2)
        return np.arange(lo, max(lo, hi))

    def _triangle_blocks(self):
        T, blocks = [], []
        for k, Rk in enumerate(self.part.R):
            pos, blks = [], []
            for a, i in enumerate(Rk):
                for j in Rk[:a]:
                    ri, rj = self.rows[i], self.rows[j]
                    if ri.size and rj.size:
                        pos.append(packed_index(np.repeat(ri, rj.size), np.tile(rj, ri.size)))
                    blks.append((i, j))
            for d in self.part.D[k]:
                rd = self.rows[d]
                a, bb = np.tril_indices(rd.size)
                pos.append(packed_index(rd[a], rd[bb]))
                blks.append((d, d))
            T.append(np.concatenate(pos).astype(np.int64) if pos else np.zeros(0, np.int64))
            blocks.append(blks)
        return T, blocks

    def pieces(self, i: int, l: int, t: int) -> list[tuple[int, np.ndarray]]:
        """(k, flat positions) for the c+1 pieces of chunk (i, l, t)."""
        rows, cols = self.rows[i], self.chunk_cols(l, t)
        flat = (rows[:, None] * self.n2 + cols[None, :]).ravel()
        return [(k, flat[lo:hi]) for k, (lo, hi) in zip(self.Q[i], _even_splits(flat.size, self.c + 1))]

    def max_piece(self) -> int:
        best = 0
        for i in range(self.c * self.c):
            n = self.rows[i].size * self.b
            best = max(best, -(-n // (self.c + 1)))
        return best


def _layout_1d(n1: int, n2: int, P: int) -> Distribution:
    cols = _even_splits(n2, P)
    syms = _even_splits(packed_size(n1), P)
    nonsym = [(np.arange(n1)[:, None] * n2 + np.arange(lo, hi)[None, :]).ravel() for lo, hi in cols]
    sym = [np.arange(lo, hi) for lo, hi in syms]
    return Distribution("1d", P, n1, n2, sym, nonsym, detail={"cols": cols, "sym_ranges": syms})


def _layout_grid(n1: int, n2: int, c: int, p2: int, b: int | None) -> tuple[Distribution, _GridLayout]:
    L = _GridLayout(n1, n2, c, p2, b)
    P = L.p1 * p2
    sym: list[list[np.ndarray]] = [[] for _ in range(P)]
    nonsym: list[list[np.ndarray]] = [[] for _ in range(P)]
    for k in range(L.p1):
        for l, (lo, hi) in enumerate(L.T_split[k]):
            sym[L.rank(k, l)].append(L.T[k][lo:hi])
    for l in range(p2):
        for t in range(L.steps):
            for i in range(c * c):
                for k, flat in L.pieces(i, l, t):
                    nonsym[L.rank(k, l)].append(flat)
    cat = lambda xs: np.concatenate(xs).astype(np.int64) if xs else np.zeros(0, np.int64)
    layout = "2d" if p2 == 1 and L.steps <= 1 else ("3d" if b is None else "3d-limited")
    blocks = {L.rank(k, l): L.sym_blocks[k] for k in range(L.p1) for l in range(p2)}
    dist = Distribution(layout, P, n1, n2, [cat(x) for x in sym], [cat(x) for x in nonsym],
                        c=c, p1=L.p1, p2=p2, b=L.b, partition=L.part,
                        detail={"sym_blocks": blocks, "s": L.s, "w": L.w, "steps": L.steps})
    return dist, L


def distribute(inst: KernelInstance, spec: MachineSpec, algo: str, b: int | None = None) -> Distribution:
    """Ownership maps for ``algo`` in {1d, 2d, 3d, 3d-limited}."""
    if algo == "1d":
        return _layout_1d(inst.n1, inst.n2, spec.P)
    c = grid_c(spec.p1)
    if algo == "2d" and spec.p2 != 1:
        raise InfeasibleGrid("2d needs p2 = 1")
    return _layout_grid(inst.n1, inst.n2, c, spec.p2, b if algo == "3d-limited" else None)[0]


# -- runs --------------------------------------------------------------------------


@dataclass
class ParResult:
    result: np.ndarray
    ledger: CostLedger
    distribution: Distribution
    algo: str


def _nonsym_inputs(inst: KernelInstance) -> list[np.ndarray]:
    if inst.kernel is Kernel.SYRK:
        return [inst.A]
    if inst.kernel is Kernel.SYR2K:
        return [inst.A, inst.B]
    return [inst.B]


def _pair_flops(kernel: Kernel) -> int:
    """Flops per owned symmetric entry per column."""
    return {Kernel.SYRK: 2, Kernel.SYR2K: 4, Kernel.SYMM: 4}[kernel]


def run_1d(inst: KernelInstance, spec: MachineSpec) -> ParResult:
    P = spec.P
    mach = Machine(spec)
    dist = _layout_1d(inst.n1, inst.n2, P)
    cols, syms = dist.detail["cols"], dist.detail["sym_ranges"]
    n1, m = inst.n1, inst.m
    T = packed_size(n1)
    ranks = list(range(P))
    for r in ranks:
        ncols = cols[r][1] - cols[r][0]
        mach.own(r, m * n1 * ncols + (syms[r][1] - syms[r][0]))
    if inst.kernel is Kernel.SYMM:
        A_full = mach.all_gather(ranks, {r: inst.A[lo:hi] for r, (lo, hi) in enumerate(syms)})
        out = inst.C.copy()
        with mach.phase("local symm"):
            for r, (lo, hi) in enumerate(cols):
                mach.alloc(r, T - (syms[r][1] - syms[r][0]))
                S = _unpack(A_full[r], n1)
                out[:, lo:hi] = inst.C[:, lo:hi] + S @ inst.B[:, lo:hi]
                mach.compute(r, 2 * n1 * n1 * (hi - lo))
        for r in ranks:
            mach.free(r, T - (syms[r][1] - syms[r][0]))
        return ParResult(out, mach.ledger, dist, "1d")
    rows, cc = tril_coords(n1)
    partial = {}
    with mach.phase("local update"):
        for r, (lo, hi) in enumerate(cols):
            mach.alloc(r, T - (syms[r][1] - syms[r][0]))
            A = inst.A[:, lo:hi]
            if inst.kernel is Kernel.SYRK:
                G = A @ A.T
            else:
                Bm = inst.B[:, lo:hi]
                G = A @ Bm.T + Bm @ A.T
            Cbar = G[rows, cc]
            Cbar[syms[r][0]:syms[r][1]] += inst.C[syms[r][0]:syms[r][1]]
            partial[r] = Cbar
            mach.compute(r, _pair_flops(inst.kernel) * T * (hi - lo))
    with mach.phase("reduce-scatter"):
        for r in ranks:
            mach.alloc(r, syms[r][1] - syms[r][0])
        got = mach.reduce_scatter(ranks, partial, syms)
    out = np.empty(T)
    for r, (lo, hi) in enumerate(syms):
        out[lo:hi] = got[r]
        mach.free(r, T)
    return ParResult(out, mach.ledger, dist, "1d")


def _unpack(packed: np.ndarray, n: int) -> np.ndarray:
    S = np.zeros((n, n))
    rows, cols = tril_coords(n)
    S[rows, cols] = packed
    S[cols, rows] = packed
    return S


def _run_grid(inst: KernelInstance, spec: MachineSpec, b: int | None, algo: str) -> ParResult:
    c = grid_c(spec.p1)
    n1, n2 = inst.n1, inst.n2
    dist, L = _layout_grid(n1, n2, c, spec.p2, b)
    mach = Machine(spec)
    p1, p2 = L.p1, L.p2
    kern = inst.kernel
    symm = kern is Kernel.SYMM
    # SYMM stores B and C pieces; only B travels in the input all-to-all
    owned_mats = [inst.B, inst.C] if symm else _nonsym_inputs(inst)
    n_in = 1 if symm else len(owned_mats)
    for r in range(dist.P):
        mach.own(r, len(owned_mats) * dist.nonsym[r].size + dist.sym[r].size)

    # initial placement: every rank's store holds only what it owns
    store: dict[tuple[int, int, int], list[np.ndarray]] = {}
    for l in range(p2):
        for t in range(L.steps):
            for i in range(c * c):
                for k, flat in L.pieces(i, l, t):
                    store[(L.rank(k, l), i, t)] = [X.ravel()[flat].copy() for X in owned_mats]
    sym_store = {L.rank(k, l): inst.C[L.T[k][lo:hi]].copy() if not symm else inst.A[L.T[k][lo:hi]].copy()
                 for k in range(p1) for l, (lo, hi) in enumerate(L.T_split[k])}

    Tsize = [t.size for t in L.T]
    stack_rows = [np.concatenate([L.rows[i] for i in L.part.R[k]]) for k in range(p1)]
    local_idx = [_local_pairs(L.T[k], stack_rows[k], n1) for k in range(p1)]

    # triangle block of blocks on every rank: replica (SYMM) or accumulator
    sym_local: dict[int, np.ndarray] = {}
    for k in range(p1):
        group = [L.rank(k, l) for l in range(p2)]
        for l, r in enumerate(group):
            lo, hi = L.T_split[k][l]
            mach.alloc(r, Tsize[k] - (hi - lo))
        if symm:
            if p2 > 1:
                with mach.phase("all-gather A"):
                    sym_local.update(mach.all_gather(group, {r: sym_store[r] for r in group}))
            else:
                sym_local[group[0]] = sym_store[group[0]]
        else:
            for l, r in enumerate(group):
                lo, hi = L.T_split[k][l]
                acc = np.zeros(Tsize[k])
                acc[lo:hi] = sym_store[r]
                sym_local[r] = acc

    in_slot = n_in * L.max_piece()
    for t in range(L.steps):
        rows_local, recv_words = _exchange_rows(mach, L, t, store, n_in, in_slot)
        partial_C: dict[int, np.ndarray] = {}
        with mach.phase("local compute"):
            for l in range(p2):
                ncols = L.chunk_cols(l, t).size
                for k in range(p1):
                    r = L.rank(k, l)
                    if not ncols or not stack_rows[k].size:
                        continue
                    Xs = rows_local[r]
                    li, lj = local_idx[k]
                    if symm:
                        nloc = stack_rows[k].size
                        S = np.zeros((nloc, nloc))
                        S[li, lj] = sym_local[r]
                        S[lj, li] = sym_local[r]
                        partial_C[r] = S @ Xs[0]
                        mach.alloc(r, partial_C[r].size)
                        ndiag = int(np.count_nonzero(li == lj))
                        mach.compute(r, (4 * (li.size - ndiag) + 2 * ndiag) * ncols)
                    else:
                        G = Xs[0] @ Xs[0].T if n_in == 1 else Xs[0] @ Xs[1].T + Xs[1] @ Xs[0].T
                        sym_local[r] += G[li, lj]
                        mach.compute(r, _pair_flops(kern) * li.size * ncols)
        for r, w in recv_words.items():
            mach.free(r, w)
        if symm:
            _symm_exchange(mach, L, t, partial_C, store)
        for r, part in partial_C.items():
            mach.free(r, part.size)

    if symm:
        out = np.empty((n1, n2))
        for l in range(p2):
            for t in range(L.steps):
                for i in range(c * c):
                    for k, flat in L.pieces(i, l, t):
                        out.ravel()[flat] = store[(L.rank(k, l), i, t)][1]
        for k in range(p1):
            for l in range(p2):
                lo, hi = L.T_split[k][l]
                mach.free(L.rank(k, l), Tsize[k] - (hi - lo))
        return ParResult(out, mach.ledger, dist, algo)

    out = np.empty(packed_size(n1))
    with mach.phase("reduce-scatter C"):
        for k in range(p1):
            group = [L.rank(k, l) for l in range(p2)]
            segs = L.T_split[k]
            if p2 > 1:
                for l, r in enumerate(group):
                    mach.alloc(r, segs[l][1] - segs[l][0])
                got = mach.reduce_scatter(group, {r: sym_local[r] for r in group}, segs)
                for l, r in enumerate(group):
                    mach.free(r, segs[l][1] - segs[l][0])
            else:
                got = {group[0]: sym_local[group[0]]}
            for l, r in enumerate(group):
                lo, hi = segs[l]
                sym_store[r] = got[r]
                out[L.T[k][lo:hi]] = got[r]
                mach.free(r, Tsize[k] - (hi - lo))
    return ParResult(out, mach.ledger, dist, algo)


def _local_pairs(positions: np.ndarray, rows_k: np.ndarray, n1: int):
    """Local (row, col) of packed positions inside the stacked rows of a rank."""
    rows, cols = tril_coords(n1)
    where = np.full(n1, -1, dtype=np.int64)
    where[rows_k] = np.arange(rows_k.size)
    return where[rows[positions]], where[cols[positions]]


def _exchange_rows(mach: Machine, L: _GridLayout, t: int, store, n_in: int, slot: int):
    """All-to-all of input pieces; returns each rank's stacked rows of R[k] per matrix."""
    send: dict[int, dict[int, dict[int, np.ndarray]]] = {}
    for l in range(L.p2):
        for i in range(L.c * L.c):
            pcs = L.pieces(i, l, t)
            for k, _ in pcs:
                src = L.rank(k, l)
                payload = np.concatenate(store[(src, i, t)][:n_in])
                for k2, _ in pcs:
                    if k2 != k:
                        send.setdefault(l, {}).setdefault(src, {})[L.rank(k2, l)] = payload
    recv: dict[int, dict[int, np.ndarray]] = {}
    recv_words: dict[int, int] = {}
    with mach.phase("all-to-all inputs"):
        for l in range(L.p2):
            group = [L.rank(k, l) for k in range(L.p1)]
            got = mach.all_to_all(group, send.get(l, {}), slot=slot)
            for r in group:
                recv_words[r] = sum(v.size for v in got[r].values())
                mach.alloc(r, recv_words[r])
            recv.update(got)
    rows_local: dict[int, list[np.ndarray]] = {}
    for l in range(L.p2):
        ncols = L.chunk_cols(l, t).size
        for k in range(L.p1):
            r = L.rank(k, l)
            mats: list[list[np.ndarray]] = [[] for _ in range(n_in)]
            for i in L.part.R[k]:
                flat_parts: list[list[np.ndarray]] = [[] for _ in range(n_in)]
                for k2, flat in L.pieces(i, l, t):
                    if k2 == k:
                        vals = store[(r, i, t)][:n_in]
                    else:
                        buf = recv[r][L.rank(k2, l)]
                        vals = np.split(buf, n_in)
                    for q in range(n_in):
                        flat_parts[q].append(vals[q])
                for q in range(n_in):
                    mats[q].append(np.concatenate(flat_parts[q]).reshape(L.rows[i].size, ncols))
            rows_local[r] = [np.concatenate(mq, axis=0) for mq in mats]
    return rows_local, recv_words


def _symm_exchange(mach: Machine, L: _GridLayout, t: int, partial_C, store) -> None:
    """Send partial C pieces to their owners, who add them to their C pieces."""
    c, p1 = L.c, L.p1
    send: dict[int, dict[int, dict[int, np.ndarray]]] = {}
    plan: list[tuple[int, int, int, list[int]]] = []
    for l in range(L.p2):
        ncols = L.chunk_cols(l, t).size
        for i in range(c * c):
            if not L.rows[i].size or not ncols:
                continue
            pcs = L.pieces(i, l, t)
            bounds = _even_splits(L.rows[i].size * ncols, c + 1)
            for (k_own, _), (lo, hi) in zip(pcs, bounds):
                dst = L.rank(k_own, l)
                for k, _ in pcs:
                    if k != k_own:
                        src = L.rank(k, l)
                        off = _row_offset(L, k, i)
                        seg = partial_C[src][off:off + L.rows[i].size].ravel()[lo:hi]
                        send.setdefault(l, {}).setdefault(src, {})[dst] = seg
                plan.append((l, i, k_own, [k for k, _ in pcs]))
    with mach.phase("all-to-all C"):
        recv: dict[int, dict[int, np.ndarray]] = {}
        for l in range(L.p2):
            group = [L.rank(k, l) for k in range(p1)]
            got = mach.all_to_all(group, send.get(l, {}), slot=L.max_piece())
            for r in group:
                mach.alloc(r, sum(v.size for v in got[r].values()))
            recv.update(got)
    with mach.phase("local add"):
        for l, i, k_own, ks in plan:
            dst = L.rank(k_own, l)
            ncols = L.chunk_cols(l, t).size
            lo, hi = _even_splits(L.rows[i].size * ncols, c + 1)[ks.index(k_own)]
            terms = []
            for k in ks:
                if k == k_own:
                    off = _row_offset(L, k, i)
                    terms.append(partial_C[dst][off:off + L.rows[i].size].ravel()[lo:hi])
                else:
                    terms.append(recv[dst][L.rank(k, l)])
            acc = terms[0]
            for tm in terms[1:]:
                acc = acc + tm
            piece = store[(dst, i, t)]
            piece[1] = piece[1] + acc
            mach.compute(dst, len(terms) * acc.size)
    for r, got in recv.items():
        mach.free(r, sum(v.size for v in got.values()))


def _row_offset(L: _GridLayout, k: int, i: int) -> int:
    off = 0
    for j in L.part.R[k]:
        if j == i:
            return off
        off += L.rows[j].size
    raise KeyError(i)


def run_2d(inst: KernelInstance, spec: MachineSpec) -> ParResult:
    if spec.p2 != 1:
        raise InfeasibleGrid("2d needs p2 = 1")
    return _run_grid(inst, spec, None, "2d")


def run_3d(inst: KernelInstance, spec: MachineSpec) -> ParResult:
    return _run_grid(inst, spec, None, "3d")


def run_3d_limited(inst: KernelInstance, spec: MachineSpec, b: int) -> ParResult:
    if b < 1:
        raise ValueError("b must be positive")
    return _run_grid(inst, spec, b, "3d-limited")


def run_par(inst: KernelInstance, spec: MachineSpec, algo: str, b: int | None = None) -> ParResult:
    if algo == "1d":
        return run_1d(inst, spec)
    if algo == "2d":
        return run_2d(inst, spec)
    if algo == "3d":
        return run_3d(inst, spec)
    if algo in ("3d-lim", "3d-limited"):
        return run_3d_limited(inst, spec, b if b is not None else 1)
    raise ValueError(f"unknown algorithm {algo!r}")
