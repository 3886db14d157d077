"""Kernel shapes, operand instances and dense reference semantics.

Symmetric operands are stored packed: the lower triangle including the
diagonal, row-major, so entry (i, j) with i >= j sits at ``i*(i+1)//2 + j``.

Reference loop nests (one sequential accumulation per output entry):

* SYRK:  C[i,j] += A[i,k] * A[j,k]                      for k ascending
* SYR2K: C[i,j] += A[i,k] * B[j,k] + B[i,k] * A[j,k]    for k ascending
* SYMM:  C[i,:] += A[i,j] * B[j,:]                      for j in a given order
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

__all__ = [
    "Kernel",
    "KernelShape",
    "KernelInstance",
    "packed_index",
    "packed_size",
    "tril_coords",
    "pack",
    "unpack",
    "random_instance",
    "reference",
    "symm_natural_order",
]


class Kernel(str, enum.Enum):
    SYRK = "syrk"
    SYR2K = "syr2k"
    SYMM = "symm"

    @property
    def m(self) -> int:
        return 1 if self is Kernel.SYRK else 2

    @classmethod
    def parse(cls, name: str | Kernel) -> Kernel:
        return name if isinstance(name, Kernel) else cls(str(name).lower())


@dataclass(frozen=True)
class KernelShape:
    kernel: Kernel
    n1: int
    n2: int

    def __post_init__(self):
        object.__setattr__(self, "kernel", Kernel.parse(self.kernel))
        if self.n1 < 2 or self.n2 < 0:
            raise ValueError(f"need n1 >= 2 and n2 >= 0, got {self.n1}, {self.n2}")

    @property
    def m(self) -> int:
        return self.kernel.m


def packed_size(n: int) -> int:
    return n * (n + 1) // 2


def packed_index(i, j):
    """Packed position of (i, j); arguments may be arrays, requires i >= j."""
    return i * (i + 1) // 2 + j


def tril_coords(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of every packed position, in packed order."""
    return np.tril_indices(n)


def pack(S: np.ndarray) -> np.ndarray:
    return S[np.tril_indices(S.shape[0])].copy()


def unpack(packed: np.ndarray, n: int) -> np.ndarray:
    """Full symmetric matrix from its packed lower triangle."""
    S = np.zeros((n, n))
    rows, cols = np.tril_indices(n)
    S[rows, cols] = packed
    S[cols, rows] = packed
    return S


@dataclass
class KernelInstance:
    """Operands of one kernel call.

    SYRK uses A and packed C; SYR2K uses A, B and packed C; SYMM uses packed
    A with dense B and C.
    """

    kernel: Kernel
    n1: int
    n2: int
    A: np.ndarray
    B: np.ndarray | None
    C: np.ndarray

    def __post_init__(self):
        self.kernel = Kernel.parse(self.kernel)
        n1, n2, P = self.n1, self.n2, packed_size(self.n1)
        want = {
            Kernel.SYRK: {"A": (n1, n2), "B": None, "C": (P,)},
            Kernel.SYR2K: {"A": (n1, n2), "B": (n1, n2), "C": (P,)},
            Kernel.SYMM: {"A": (P,), "B": (n1, n2), "C": (n1, n2)},
        }[self.kernel]
        for name, shape in want.items():
            arr = getattr(self, name)
            if (arr is None) != (shape is None) or (arr is not None and arr.shape != shape):
                got = None if arr is None else arr.shape
                raise DimensionMismatch(f"{self.kernel.value}: {name} has shape {got}, expected {shape}")

    @property
    def shape(self) -> KernelShape:
        return KernelShape(self.kernel, self.n1, self.n2)

    @property
    def m(self) -> int:
        return self.kernel.m

    def copy(self) -> KernelInstance:
        return KernelInstance(
            self.kernel, self.n1, self.n2, self.A.copy(),
            None if self.B is None else self.B.copy(), self.C.copy(),
        )


def random_instance(kernel: Kernel | str, n1: int, n2: int, seed: int = 0) -> KernelInstance:
    """Operands uniform in [-1, 1] from a seeded PCG64 generator."""
    kernel = Kernel.parse(kernel)
    rng = np.random.default_rng(seed)
    P = packed_size(n1)
    if kernel is Kernel.SYMM:
        A = rng.uniform(-1, 1, P)
        B = rng.uniform(-1, 1, (n1, n2))
        C = rng.uniform(-1, 1, (n1, n2))
    else:
        A = rng.uniform(-1, 1, (n1, n2))
        B = rng.uniform(-1, 1, (n1, n2)) if kernel is Kernel.SYR2K else None
        C = rng.uniform(-1, 1, P)
    return KernelInstance(kernel, n1, n2, A, B, C)


def symm_natural_order(n: int) -> list[np.ndarray]:
    """Partner order of the plain loop nest: off-diagonal j ascending, then i."""
    return [np.array([*range(i), *range(i + 1, n), i], dtype=np.int64) for i in range(n)]


def reference(inst: KernelInstance, symm_order: list[np.ndarray] | None = None) -> np.ndarray:
    """Dense reference output with one fixed accumulation order per entry."""
    n1, n2 = inst.n1, inst.n2
    if inst.kernel is Kernel.SYMM:
        order = symm_order if symm_order is not None else symm_natural_order(n1)
        C = inst.C.copy()
        for i in range(n1):
            for j in order[i]:
                C[i, :] += inst.A[packed_index(max(i, j), min(i, j))] * inst.B[j, :]
        return C
    rows, cols = tril_coords(n1)
    C = inst.C.copy()
    A = inst.A
    for k in range(n2):
        if inst.kernel is Kernel.SYRK:
            C += A[rows, k] * A[cols, k]
        else:
            B = inst.B
            C += A[rows, k] * B[cols, k] + B[rows, k] * A[cols, k]
    return C
