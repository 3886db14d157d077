"""Triangle-block partitions of the strict lower triangle.

A partition is a family of index sets R[k] such that every unordered pair
{i, j} lies in exactly one R[k] (a Steiner (n, r, 2) system, equivalently a
clique partition of K_n).  The triangle block TB(R[k]) holds the entries
(i, j) with i > j in R[k].  Optional diagonal sets D[k] hand each diagonal
entry to one block.

Point indexing for the plane constructions: the affine point (x1, x2) gets
index ``idx(x1) + c*idx(x2)`` where ``idx`` is the field element order.  The
projective plane appends the c points at infinity ``(a:1:0)`` as
``c**2 + idx(a)`` and finally ``(1:0:0)`` as ``c**2 + c``.  Blocks of the
affine plane are listed as the lines through ``(b, 0)`` and ``(t, 1)`` at
position ``c*b + t``, followed by the horizontal lines ``x2 = j``.  The
projective plane extends every affine line by its point at infinity and
adds the line at infinity last, so the affine partition is a literal
sub-object of the projective one.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import NoPerfectMatching, NotASteinerSystem, ParseError
from .gf import field_new

__all__ = [
    "TrianglePartition",
    "QMap",
    "Violation",
    "ValidationReport",
    "affine_partition",
    "projective_partition",
    "pairs_partition",
    "load_steiner",
    "load_steiner_file",
    "builtin_steiner_15",
    "assign_diagonals",
    "hopcroft_karp",
    "validate",
    "q_sets",
    "to_text",
    "to_json",
    "from_json",
    "canonical",
]


@dataclass(frozen=True)
class TrianglePartition:
    n: int
    r: int
    R: tuple[tuple[int, ...], ...]
    D: tuple[tuple[int, ...], ...]
    origin: str

    @property
    def K(self) -> int:
        return len(self.R)

    @property
    def replication(self) -> int:
        """Blocks per index, (n-1)/(r-1)."""
        return (self.n - 1) // (self.r - 1)

    @property
    def has_diagonals(self) -> bool:
        return any(self.D)

    def tb(self, k: int) -> list[tuple[int, int]]:
        """Entries of TB(R[k]) as (row, col) with row > col, row-major."""
        rk = self.R[k]
        return [(i, j) for a, i in enumerate(rk) for j in rk[:a]]

    def with_diagonals(self, D: Sequence[Iterable[int]]) -> TrianglePartition:
        return replace(self, D=tuple(tuple(sorted(d)) for d in D))


@dataclass(frozen=True)
class QMap:
    Q: tuple[tuple[int, ...], ...]

    def __getitem__(self, i: int) -> tuple[int, ...]:
        return self.Q[i]

    def __len__(self) -> int:
        return len(self.Q)


@dataclass(frozen=True)
class Violation:
    kind: str
    witness: tuple
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def first(self, kind: str) -> Violation | None:
        return next((v for v in self.violations if v.kind == kind), None)

    def lines(self) -> list[str]:
        if self.ok:
            return ["ok"]
        return [f"{v.kind} {list(v.witness)}: {v.message}" for v in self.violations]


def _make(n: int, r: int, blocks: Iterable[Iterable[int]], origin: str) -> TrianglePartition:
    R = tuple(tuple(sorted(int(i) for i in b)) for b in blocks)
    return TrianglePartition(n=n, r=r, R=R, D=tuple(() for _ in R), origin=origin)


def _plane_lines(c: int, projective: bool) -> list[list[int]]:
    f = field_new(c)
    add, mul, neg = f.add_table, f.mul_table, f.neg_table
    ys = np.arange(c)
    lines = []
    for b in range(c):
        for t in range(c):
            slope = add[t, neg[b]]
            x1 = add[b, mul[slope, ys]]
            pts = (x1 + c * ys).tolist()
            if projective:
                pts.append(c * c + int(slope))
            lines.append(pts)
    for j in range(c):
        pts = (ys + c * j).tolist()
        if projective:
            pts.append(c * c + c)
        lines.append(pts)
    if projective:
        lines.append(list(range(c * c, c * c + c + 1)))
    return lines


def affine_partition(c: int) -> TrianglePartition:
    """Lines of the affine plane over GF(c): n = c^2, r = c, K = c^2 + c."""
    return _make(c * c, c, _plane_lines(c, projective=False), f"affine({c})")


def projective_partition(c: int) -> TrianglePartition:
    """Lines of the projective plane over GF(c): n = K = c^2 + c + 1, r = c + 1."""
    n = c * c + c + 1
    return _make(n, c + 1, _plane_lines(c, projective=True), f"projective({c})")


def pairs_partition(n: int) -> TrianglePartition:
    """Trivial r = 2 partition: one block per pair, row-major."""
    if n < 2:
        raise ValueError("pairs partition needs n >= 2")
    return _make(n, 2, ((j, i) for i in range(n) for j in range(i)), f"pairs({n})")


# -- validation ---------------------------------------------------------------


def _pair_counts(n: int, R: Sequence[Sequence[int]]) -> np.ndarray:
    codes = []
    for rk in R:
        a = np.asarray(rk, dtype=np.int64)
        ii, jj = np.triu_indices(len(a), k=1)
        lo, hi = np.minimum(a[ii], a[jj]), np.maximum(a[ii], a[jj])
        codes.append(hi * n + lo)
    flat = np.concatenate(codes) if codes else np.zeros(0, dtype=np.int64)
    return np.bincount(flat, minlength=n * n).reshape(n, n)


def validate(p: TrianglePartition, require_diagonals: bool | None = None) -> ValidationReport:
    """Check every partition invariant; diagonals are checked when present."""
    rep = ValidationReport()
    bad = rep.violations
    n, r = p.n, p.r
    if r < 2 or n < r:
        bad.append(Violation("shape", (n, r), "need 2 <= r <= n"))
        return rep
    in_range = True
    for k, rk in enumerate(p.R):
        if len(rk) != r or len(set(rk)) != len(rk):
            bad.append(Violation("size", (k,), f"block {k} has {len(set(rk))} distinct indices, expected {r}"))
        for i in rk:
            if not 0 <= i < n:
                bad.append(Violation("range", (k, i), f"index {i} outside [0, {n})"))
                in_range = False
    if in_range:
        counts = _pair_counts(n, p.R)
        hi, lo = np.tril_indices(n, k=-1)
        c = counts[hi, lo]
        for idx in np.flatnonzero(c == 0)[:1]:
            pair = (int(lo[idx]), int(hi[idx]))
            bad.append(Violation("missing", pair, f"pair {set(pair)} is in no block"))
        for idx in np.flatnonzero(c > 1)[:1]:
            pair = (int(lo[idx]), int(hi[idx]))
            bad.append(Violation("duplicated", pair, f"pair {set(pair)} is in {int(c[idx])} blocks"))
        if (n - 1) % (r - 1) == 0 and (n * (n - 1)) % (r * (r - 1)) == 0:
            if p.K != n * (n - 1) // (r * (r - 1)):
                bad.append(Violation("count", (p.K,), f"expected {n * (n - 1) // (r * (r - 1))} blocks"))
            rep_count = np.bincount(np.concatenate([np.asarray(b) for b in p.R]), minlength=n)
            off = np.flatnonzero(rep_count != (n - 1) // (r - 1))
            if off.size:
                i = int(off[0])
                bad.append(Violation("replication", (i,), f"index {i} is in {int(rep_count[i])} blocks"))
        else:
            bad.append(Violation("divisibility", (n, r), "no Steiner system with these parameters"))
    if len(p.D) != p.K:
        bad.append(Violation("diag_shape", (len(p.D),), "need one diagonal set per block"))
        return rep
    if require_diagonals is None:
        require_diagonals = p.has_diagonals
    if require_diagonals:
        owner: dict[int, int] = {}
        for k, dk in enumerate(p.D):
            if len(dk) > 1:
                bad.append(Violation("diag_size", (k,), f"block {k} holds {len(dk)} diagonals"))
            for i in dk:
                if i not in p.R[k]:
                    bad.append(Violation("diag_subset", (k, i), f"diagonal {i} not in R[{k}]"))
                if i in owner:
                    bad.append(Violation("diag_disjoint", (owner[i], k, i), f"diagonal {i} in blocks {owner[i]} and {k}"))
                owner.setdefault(i, k)
        uncovered = [i for i in range(n) if i not in owner]
        if uncovered:
            bad.append(Violation("diag_cover", (uncovered[0],), f"{len(uncovered)} diagonals unassigned"))
    return rep


def q_sets(p: TrianglePartition) -> QMap:
    Q: list[list[int]] = [[] for _ in range(p.n)]
    for k, rk in enumerate(p.R):
        for i in rk:
            Q[i].append(k)
    return QMap(tuple(tuple(q) for q in Q))


# -- diagonal assignment --------------------------------------------------------


def hopcroft_karp(adj: Sequence[Sequence[int]], n_right: int) -> list[int]:
    """Maximum matching; returns the right partner of each left vertex or -1.

    Adjacency lists are explored in the order given, left vertices in
    ascending order, so the result is deterministic.
    """
    n_left = len(adj)
    match_l = [-1] * n_left
    match_r = [-1] * n_right
    inf = n_left + 1
    while True:
        dist = [inf] * n_left
        queue = deque(u for u in range(n_left) if match_l[u] == -1)
        for u in queue:
            dist[u] = 0
        found = False
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                w = match_r[v]
                if w == -1:
                    found = True
                elif dist[w] == inf:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        if not found:
            return match_l
        ptr = [0] * n_left
        for root in range(n_left):
            if match_l[root] != -1:
                continue
            # iterative layered DFS for an augmenting path from root
            stack, path = [root], []
            while stack:
                u = stack[-1]
                advanced = False
                while ptr[u] < len(adj[u]):
                    v = adj[u][ptr[u]]
                    ptr[u] += 1
                    w = match_r[v]
                    if w == -1:
                        path.append((u, v))
                        for uu, vv in path:
                            match_l[uu], match_r[vv] = vv, uu
                        stack = []
                        advanced = True
                        break
                    if dist[w] == dist[u] + 1:
                        path.append((u, v))
                        stack.append(w)
                        advanced = True
                        break
                if not advanced:
                    dist[u] = inf
                    stack.pop()
                    if path:
                        path.pop()


def assign_diagonals(p: TrianglePartition) -> TrianglePartition:
    """Give every index one block containing it via maximum bipartite matching."""
    if p.n <= p.r:
        raise NoPerfectMatching(f"need n > r, got n={p.n}, r={p.r}")
    adj = [list(qs) for qs in q_sets(p).Q]
    match = hopcroft_karp(adj, p.K)
    if -1 in match:
        i = match.index(-1)
        raise NoPerfectMatching(f"index {i} cannot be matched; input is not a valid partition")
    D: list[list[int]] = [[] for _ in range(p.K)]
    for i, k in enumerate(match):
        D[k].append(i)
    return p.with_diagonals(D)


# -- serialization ----------------------------------------------------------------


def to_text(p: TrianglePartition) -> str:
    out = [f"steiner {p.n} {p.r}"]
    out += [" ".join(map(str, rk)) for rk in p.R]
    out += [f"diag {k} {i}" for k, dk in enumerate(p.D) for i in dk]
    return "\n".join(out) + "\n"


def load_steiner(text: str, path: str | None = None) -> TrianglePartition:
    """Parse the text format and insist on a valid Steiner system."""
    lines = [(no, ln.split()) for no, ln in enumerate(text.splitlines(), 1)]
    lines = [(no, toks) for no, toks in lines if toks and not toks[0].startswith("#")]
    if not lines:
        raise ParseError("empty partition file")
    no, head = lines[0]
    if len(head) != 3 or head[0] != "steiner":
        raise ParseError("header must be 'steiner n r'", no)
    try:
        n, r = int(head[1]), int(head[2])
    except ValueError:
        raise ParseError("n and r must be integers", no) from None
    blocks: list[list[int]] = []
    diags: list[tuple[int, int, int]] = []
    for no, toks in lines[1:]:
        try:
            if toks[0] == "diag":
                if len(toks) != 3:
                    raise ParseError("diag line needs 'diag k i'", no)
                diags.append((int(toks[1]), int(toks[2]), no))
                continue
            if diags:
                raise ParseError("block line after diag lines", no)
            blocks.append([int(t) for t in toks])
        except ValueError:
            raise ParseError(f"non-integer token in {' '.join(toks)!r}", no) from None
        if len(blocks[-1]) != r:
            raise ParseError(f"block has {len(blocks[-1])} entries, expected {r}", no)
    origin = f"steiner_file({path})" if path else "steiner_file"
    part = _make(n, r, blocks, origin)
    D: list[list[int]] = [[] for _ in blocks]
    for k, i, no in diags:
        if not 0 <= k < len(blocks):
            raise ParseError(f"diag refers to block {k} of {len(blocks)}", no)
        D[k].append(i)
    part = part.with_diagonals(D)
    rep = validate(part)
    if not rep.ok:
        miss, dup = rep.first("missing"), rep.first("duplicated")
        raise NotASteinerSystem(
            "; ".join(v.message for v in rep.violations),
            missing=miss.witness if miss else None,
            duplicated=dup.witness if dup else None,
        )
    return part


def load_steiner_file(path: str | Path) -> TrianglePartition:
    path = Path(path)
    return load_steiner(path.read_text(encoding="utf-8"), str(path))


def builtin_steiner_15() -> TrianglePartition:
    """The shipped Steiner (15, 3, 2) system, 0-indexed."""
    from importlib.resources import files

    text = files("trisym").joinpath("data/steiner_15_3_2.tbp").read_text(encoding="utf-8")
    return load_steiner(text, "steiner_15_3_2.tbp")


def to_json(p: TrianglePartition) -> str:
    doc = {"n": p.n, "r": p.r, "K": p.K, "R": [list(b) for b in p.R],
           "D": [list(d) for d in p.D], "origin": p.origin}
    return json.dumps(doc, indent=1)


def from_json(text: str) -> TrianglePartition:
    doc = json.loads(text)
    return TrianglePartition(
        n=doc["n"], r=doc["r"], R=tuple(tuple(b) for b in doc["R"]),
        D=tuple(tuple(d) for d in doc["D"]), origin=doc["origin"],
    )


def canonical(blocks: Iterable[Iterable[int]]) -> frozenset[frozenset[int]]:
    """Set-of-sets form used for labeling-independent comparison."""
    return frozenset(frozenset(b) for b in blocks)
