"""Sequential SYRK/SYR2K/SYMM under a two-level memory model.

Each triangle block of the symmetric matrix is loaded once, then the rows
of the non-symmetric matrices it touches are streamed through fast memory
one column at a time.  The tracker meters every word moved between slow
and fast memory and refuses to exceed its capacity.

Three blocking modes are supported:

``elementwise``
    a triangle-block partition over single rows (affine, projective,
    a loaded Steiner system or the trivial all-pairs partition);
``chunked``
    the affine partition applied to chunks of ``g`` contiguous rows, where
    the chunk holding a block's diagonal contributes its whole lower
    triangle;
``whole``
    the whole symmetric matrix stays resident.

Rows past ``n1`` introduced by padding are virtual: never stored, moved or
counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterator, Sequence

import numpy as np

from . import tbp
from .bounds import seq_read_lb
from .errors import DimensionMismatch, InfeasibleMemory, MemoryOverflow
from .gf import prime_powers
from .kernels import Kernel, KernelInstance, KernelShape, packed_index

__all__ = [
    "FastMemoryTracker",
    "BlockingPlan",
    "Block",
    "SeqLedger",
    "SeqResult",
    "select_r",
    "candidate_plans",
    "select_blocking",
    "run_seq",
    "meter_seq",
    "symm_order",
    "tightness_denominator",
]

# cap on the pairs x columns working array used by the SYRK numerics
_BATCH_ELEMS = 1 << 22


class FastMemoryTracker:
    """Fast memory of ``capacity`` words holding named tiles.

    A tile is a group of words moved together; its key stands for the
    tagged words it contains.  Counters are exact word counts.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.resident: dict[Hashable, int] = {}
        self.size = 0
        self.peak = 0
        self.reads = 0
        self.writes = 0

    def load(self, key: Hashable, words: int) -> None:
        if key in self.resident:
            raise KeyError(f"tile {key!r} already resident")
        self._grow(words)
        self.resident[key] = words
        self.reads += words

    def write(self, key: Hashable) -> None:
        """Copy a resident tile back to slow memory."""
        self.writes += self.resident[key]

    def evict(self, key: Hashable) -> None:
        self.size -= self.resident.pop(key)

    def require(self, *keys: Hashable) -> None:
        missing = [k for k in keys if k not in self.resident]
        if missing:
            raise MemoryOverflow(f"computing with non-resident tiles {missing}")

    def stream(self, key: Hashable, words: int, count: int, write_words: int = 0) -> None:
        """``count`` rounds of: load ``words``, write back ``write_words``, evict."""
        if count <= 0 or words == 0:
            return
        self._grow(words)
        self.size -= words
        self.reads += words * count
        self.writes += write_words * count

    def _grow(self, words: int) -> None:
        if self.size + words > self.capacity:
            raise MemoryOverflow(
                f"{self.size} + {words} words exceeds fast memory of {self.capacity}"
            )
        self.size += words
        self.peak = max(self.peak, self.size)


@dataclass(frozen=True)
class Block:
    """One step of the schedule: real rows involved and owned lower entries."""

    rows: np.ndarray
    pr: np.ndarray
    pc: np.ndarray


@dataclass(frozen=True)
class BlockingPlan:
    mode: str
    n1: int
    n_hat: int
    r: int
    g: int = 1
    c: int | None = None
    partition: tbp.TrianglePartition | None = None

    def footprint(self, m: int) -> int:
        """Planned peak words in fast memory."""
        if self.mode == "whole":
            return self.n1 * (self.n1 + 1) // 2 + m * self.n1
        if self.mode == "chunked":
            c, g = self.c, self.g
            return g * g * c * (c - 1) // 2 + g * (g + 1) // 2 + m * c * g
        dmax = max((len(d) for d in self.partition.D), default=0)
        return m * self.r + self.r * (self.r - 1) // 2 + dmax

    @property
    def replication(self) -> int:
        """Blocks touching each real row."""
        if self.mode == "whole":
            return 1
        if self.mode == "chunked":
            return self.c + 1
        return self.partition.replication

    def predicted_reads(self, m: int, n2: int) -> int:
        return m * n2 * self.replication * self.n1 + self.n1 * (self.n1 + 1) // 2

    def describe(self) -> dict:
        out = {"mode": self.mode, "n_hat": self.n_hat, "r": self.r, "g": self.g}
        if self.c is not None:
            out["c"] = self.c
        if self.partition is not None:
            out["origin"] = self.partition.origin
        return out

    @cached_property
    def blocks(self) -> tuple[Block, ...]:
        return tuple(self._iter_blocks())

    def _iter_blocks(self) -> Iterator[Block]:
        n1, g = self.n1, self.g
        if self.mode == "whole":
            rows = np.arange(n1)
            pr, pc = np.tril_indices(n1)
            yield Block(rows, pr.astype(np.int64), pc.astype(np.int64))
            return
        part = self.partition
        for k, units in enumerate(part.R):
            rows = np.concatenate([np.arange(u * g, min((u + 1) * g, n1)) for u in units])
            rows = rows.astype(np.int64)
            diag = part.D[k][0] if part.D[k] else -1
            unit = rows // g
            a, b = np.tril_indices(len(rows))
            same = unit[a] == unit[b]
            keep = ~same | (unit[a] == diag)
            yield Block(rows, rows[a[keep]], rows[b[keep]])


def select_r(M: int, m: int) -> int:
    """Largest block size r with m*r + r^2/2 <= M."""
    return math.isqrt(2 * M + m * m) - m


def _diag(part: tbp.TrianglePartition) -> tbp.TrianglePartition:
    return part if part.has_diagonals else tbp.assign_diagonals(part)


def _elementwise_specs(n1: int, M: int, m: int, extra: Sequence[tbp.TrianglePartition]):
    """Yield (replication, n_hat, kind_rank, r, builder) for fitting partitions."""
    rmax = select_r(M, m)

    def fits(n: int, r: int) -> bool:
        return (2 <= r <= rmax and n1 <= n < n1 + r * r and n > r
                and m * r + r * (r - 1) // 2 + 1 <= M)

    for c in prime_powers():
        if fits(c * c, c):
            yield c + 1, c * c, 0, c, lambda c=c: tbp.affine_partition(c)
        n = c * c + c + 1
        if fits(n, c + 1):
            yield c + 1, n, 1, c + 1, lambda c=c: tbp.projective_partition(c)
    for part in extra:
        if fits(part.n, part.r):
            yield part.replication, part.n, 2, part.r, lambda part=part: part
    if n1 >= 3 and fits(n1, 2):
        yield n1 - 1, n1, 3, 2, lambda: tbp.pairs_partition(n1)


def _chunked_specs(n1: int, M: int, m: int):
    for c in prime_powers():
        g = -(-n1 // (c * c))
        if g * g * c * (c - 1) // 2 + g * (g + 1) // 2 + m * c * g <= M:
            yield c + 1, c * c * g, c, g


def _elementwise_plan(n1, r, build) -> BlockingPlan:
    part = _diag(build())
    return BlockingPlan("elementwise", n1, part.n, r, 1, None, part)


def _chunked_plan(n1, c, g) -> BlockingPlan:
    part = _diag(tbp.affine_partition(c))
    return BlockingPlan("chunked", n1, c * c * g, c, g, c, part)


def candidate_plans(n1: int, M: int, m: int,
                    extra: Sequence[tbp.TrianglePartition] = ()) -> list[tuple[int, int, int, str, tuple]]:
    """Sortable summaries (replication, n_hat, rank, mode, args) of every fitting plan."""
    out = []
    if n1 * (n1 + 1) // 2 + m * n1 <= M:
        out.append((1, n1, -1, "whole", ()))
    for rep, n, rank, r, build in _elementwise_specs(n1, M, m, extra):
        out.append((rep, n, rank, "elementwise", (r, build)))
    for rep, n, c, g in _chunked_specs(n1, M, m):
        out.append((rep, n, 4, "chunked", (c, g)))
    return out


def _build(n1: int, cand) -> BlockingPlan:
    rep, n, rank, mode, args = cand
    if mode == "whole":
        return BlockingPlan("whole", n1, n1, n1)
    if mode == "elementwise":
        return _elementwise_plan(n1, *args)
    return _chunked_plan(n1, *args)


def select_blocking(
    n1: int,
    M: int,
    m: int,
    *,
    strategy: str = "first-fit",
    mode: str | None = None,
    extra: Sequence[tbp.TrianglePartition] = (),
) -> BlockingPlan:
    """Choose a blocking plan that fits in M words.

    ``first-fit`` keeps the whole matrix resident when it fits, otherwise
    takes the best elementwise partition if any fits and falls back to
    the smallest chunked c.  ``min-reads`` picks the plan with the fewest
    predicted reads among all fitting plans.  ``mode`` restricts the
    search to one of ``elementwise`` or ``chunked``.  Ties prefer less
    padding, then affine before projective before loaded before pairs
    before chunked.
    """
    cands = candidate_plans(n1, M, m, extra)
    if mode is not None:
        cands = [cd for cd in cands if cd[3] == mode]
    key = lambda cd: cd[:3]
    if not cands:
        raise InfeasibleMemory(f"no blocking plan for n1={n1}, m={m} fits in M={M}")
    if strategy == "min-reads":
        return _build(n1, min(cands, key=key))
    if strategy != "first-fit":
        raise ValueError(f"unknown strategy {strategy!r}")
    for want in ("whole", "elementwise"):
        pool = [cd for cd in cands if cd[3] == want]
        if pool:
            return _build(n1, min(pool, key=key))
    chunked = [cd for cd in cands if cd[3] == "chunked"]
    return _build(n1, min(chunked, key=lambda cd: cd[4][0]))


@dataclass(frozen=True)
class SeqLedger:
    reads: int
    writes: int
    peak: int
    capacity: int


@dataclass
class SeqResult:
    C_out: np.ndarray | None
    ledger: SeqLedger
    plan: BlockingPlan
    extras: dict = field(default_factory=dict)


def symm_order(plan: BlockingPlan) -> list[np.ndarray]:
    """Per-row partner order in which the schedule accumulates SYMM terms."""
    acc: list[list[np.ndarray]] = [[] for _ in range(plan.n1)]
    for blk in plan.blocks:
        for i, partners in _symm_partners(blk):
            acc[i].append(partners)
    return [np.concatenate(a) if a else np.zeros(0, np.int64) for a in acc]


def _symm_partners(blk: Block):
    """(row, partners ascending) for every row of a block, rows ascending."""
    both_r = np.concatenate([blk.pr, blk.pc[blk.pr != blk.pc]])
    both_c = np.concatenate([blk.pc, blk.pr[blk.pr != blk.pc]])
    order = np.lexsort((both_c, both_r))
    both_r, both_c = both_r[order], both_c[order]
    if not both_r.size:
        return
    starts = np.flatnonzero(np.r_[True, both_r[1:] != both_r[:-1]])
    ends = np.r_[starts[1:], both_r.size]
    for s, e in zip(starts, ends):
        yield int(both_r[s]), both_c[s:e]


def _accumulate(c0: np.ndarray, terms_fn, n2: int, npairs: int) -> np.ndarray:
    """Sequential left-to-right sums c0 + t[:,0] + t[:,1] + ... in column batches."""
    acc = c0
    step = max(1, _BATCH_ELEMS // max(npairs, 1))
    for k0 in range(0, n2, step):
        t = terms_fn(k0, min(n2, k0 + step))
        acc = np.cumsum(np.column_stack([acc, t]), axis=1)[:, -1]
    return acc


def _check(inst: KernelInstance) -> None:
    if inst.n1 < 2:
        raise DimensionMismatch("n1 must be at least 2")


def _execute(shape: KernelShape, M: int, plan: BlockingPlan, inst: KernelInstance | None) -> SeqResult:
    if plan.n1 != shape.n1:
        raise DimensionMismatch(f"plan built for n1={plan.n1}, kernel has n1={shape.n1}")
    m, n2 = shape.m, shape.n2
    tr = FastMemoryTracker(M)
    out = None if inst is None else inst.C.copy()
    for k, blk in enumerate(plan.blocks):
        tri = ("sym", k)
        nrows = len(blk.rows)
        tr.load(tri, len(blk.pr))
        tr.require(tri)
        if shape.kernel is Kernel.SYMM:
            tr.stream(("BC", k), 2 * nrows, n2, write_words=nrows)
            if inst is not None:
                _symm_block(inst, blk, out)
            tr.evict(tri)
        else:
            tr.stream(("A", k), m * nrows, n2)
            if inst is not None and len(blk.pr):
                _rank_update_block(inst, blk, out)
            tr.write(tri)
            tr.evict(tri)
    ledger = SeqLedger(tr.reads, tr.writes, tr.peak, M)
    return SeqResult(out, ledger, plan)


def _rank_update_block(inst: KernelInstance, blk: Block, out: np.ndarray) -> None:
    pos = packed_index(blk.pr, blk.pc)
    A = inst.A
    if inst.kernel is Kernel.SYRK:
        fn = lambda a, b: A[blk.pr, a:b] * A[blk.pc, a:b]
    else:
        B = inst.B
        fn = lambda a, b: A[blk.pr, a:b] * B[blk.pc, a:b] + A[blk.pc, a:b] * B[blk.pr, a:b]
    out[pos] = _accumulate(out[pos], fn, inst.n2, len(pos))


def _symm_block(inst: KernelInstance, blk: Block, out: np.ndarray) -> None:
    A, B = inst.A, inst.B
    for i, partners in _symm_partners(blk):
        hi, lo = np.maximum(partners, i), np.minimum(partners, i)
        for j, a in zip(partners.tolist(), A[packed_index(hi, lo)].tolist()):
            out[i, :] += a * B[j, :]


def run_seq(inst: KernelInstance, M: int, plan: BlockingPlan | None = None, **select_kw) -> SeqResult:
    """Execute the blocked schedule with real numerics and metering."""
    _check(inst)
    if plan is None:
        plan = select_blocking(inst.n1, M, inst.m, **select_kw)
    return _execute(inst.shape, M, plan, inst)


def meter_seq(shape: KernelShape, M: int, plan: BlockingPlan | None = None, **select_kw) -> SeqResult:
    """Same schedule as run_seq without numerics (ledger only)."""
    if plan is None:
        plan = select_blocking(shape.n1, M, shape.m, **select_kw)
    return _execute(shape, M, plan, None)


def tightness_denominator(shape: KernelShape, M: int) -> float:
    """Leading-order read count m*n1(n1-1)n2/sqrt(2M) + n1(n1-1)/2."""
    n1 = shape.n1
    return shape.m * n1 * (n1 - 1) * shape.n2 / math.sqrt(2 * M) + n1 * (n1 - 1) / 2


def seq_bounds(shape: KernelShape, M: int, reads: int) -> dict:
    lb = seq_read_lb(shape, M)
    den = tightness_denominator(shape, M)
    return {"seq_lb": lb, "leading_order": den, "ratio_vs_leading": reads / den}
