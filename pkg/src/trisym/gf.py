"""Finite fields GF(q) for prime powers q <= 64.

Elements of GF(p^k) are polynomials over GF(p) of degree < k, stored as
degree-ascending coefficient tuples and reduced modulo a fixed monic
irreducible polynomial.  Elements are ordered by the integer
``sum(c_i * p**i)``, so index 0 is always the additive identity and index 1
the multiplicative identity.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DivisionByZero, FieldTooLarge, NotPrimePower

__all__ = [
    "MAX_ORDER",
    "Field",
    "FieldElement",
    "field_new",
    "field_arith",
    "field_elements",
    "prime_power",
    "is_prime_power",
    "prime_powers",
]

MAX_ORDER = 64

Poly = tuple[int, ...]


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % d for d in range(2, int(n**0.5) + 1))


def prime_power(q: int) -> tuple[int, int]:
    """Return ``(p, k)`` with ``q == p**k``; raise NotPrimePower otherwise."""
    if q < 2:
        raise NotPrimePower(f"{q} is not a prime power")
    p = next(d for d in range(2, q + 1) if q % d == 0)
    k, rest = 0, q
    while rest % p == 0:
        rest //= p
        k += 1
    if rest != 1:
        raise NotPrimePower(f"{q} has at least two distinct prime factors")
    return p, k


def is_prime_power(q: int) -> bool:
    try:
        prime_power(q)
    except NotPrimePower:
        return False
    return True


def prime_powers(limit: int = MAX_ORDER) -> list[int]:
    """Prime powers in ``[2, limit]``, ascending."""
    return [q for q in range(2, limit + 1) if is_prime_power(q)]


# -- polynomial helpers over GF(p); ascending coefficients ------------------


def _trim(a: list[int]) -> list[int]:
    while a and a[-1] == 0:
        a.pop()
    return a


def _poly_mod(a: Poly, b: Poly, p: int) -> list[int]:
    """Remainder of ``a`` divided by monic ``b`` over GF(p)."""
    r = _trim(list(a))
    db = len(b) - 1
    while len(r) - 1 >= db and r:
        coef = r[-1]
        shift = len(r) - 1 - db
        for i, bi in enumerate(b):
            r[shift + i] = (r[shift + i] - coef * bi) % p
        _trim(r)
    return r


def _monic_polys(degree: int, p: int):
    """Monic polynomials of ``degree`` in increasing integer order."""
    for tail in itertools.product(range(p), repeat=degree):
        yield tuple(reversed(tail)) + (1,)


def _is_irreducible(f: Poly, p: int) -> bool:
    k = len(f) - 1
    for d in range(1, k // 2 + 1):
        for g in _monic_polys(d, p):
            if not _poly_mod(f, g, p):
                return False
    return True


def _smallest_irreducible(p: int, k: int) -> Poly:
    for f in _monic_polys(k, p):
        if _is_irreducible(f, p):
            return f
    raise AssertionError("irreducible polynomials exist in every degree")


# -- public types -----------------------------------------------------------


@dataclass(frozen=True)
class Field:
    """GF(q) with q = p**k; ``modulus`` is empty for prime fields."""

    q: int
    p: int
    k: int
    modulus: Poly

    def element(self, index: int) -> FieldElement:
        if not 0 <= index < self.q:
            raise ValueError(f"index {index} outside GF({self.q})")
        coeffs = []
        for _ in range(self.k):
            index, c = divmod(index, self.p)
            coeffs.append(c)
        return FieldElement(tuple(coeffs), self)

    def index(self, a: FieldElement) -> int:
        return sum(c * self.p**i for i, c in enumerate(a.coeffs))

    @property
    def zero(self) -> FieldElement:
        return self.element(0)

    @property
    def one(self) -> FieldElement:
        return self.element(1)

    def add(self, a: FieldElement, b: FieldElement) -> FieldElement:
        return self._wrap([(x + y) % self.p for x, y in zip(a.coeffs, b.coeffs)])

    def neg(self, a: FieldElement) -> FieldElement:
        return self._wrap([(-x) % self.p for x in a.coeffs])

    def sub(self, a: FieldElement, b: FieldElement) -> FieldElement:
        return self.add(a, self.neg(b))

    def mul(self, a: FieldElement, b: FieldElement) -> FieldElement:
        prod = [0] * (2 * self.k - 1)
        for i, x in enumerate(a.coeffs):
            if x:
                for j, y in enumerate(b.coeffs):
                    prod[i + j] = (prod[i + j] + x * y) % self.p
        if self.k > 1:
            prod = _poly_mod(tuple(prod), self.modulus, self.p)
        return self._wrap(prod)

    def inv(self, a: FieldElement) -> FieldElement:
        if not any(a.coeffs):
            raise DivisionByZero(f"zero has no inverse in GF({self.q})")
        # a^(q-2) by square-and-multiply
        result, base, e = self.one, a, self.q - 2
        while e:
            if e & 1:
                result = self.mul(result, base)
            base = self.mul(base, base)
            e >>= 1
        return result

    def _wrap(self, coeffs: list[int]) -> FieldElement:
        coeffs = list(coeffs[: self.k]) + [0] * (self.k - len(coeffs))
        return FieldElement(tuple(coeffs), self)

    # Index-level tables, filled from the polynomial arithmetic above.
    @cached_property
    def add_table(self) -> np.ndarray:
        els = field_elements(self)
        return np.array(
            [[self.index(self.add(a, b)) for b in els] for a in els], dtype=np.int64
        )

    @cached_property
    def mul_table(self) -> np.ndarray:
        els = field_elements(self)
        return np.array(
            [[self.index(self.mul(a, b)) for b in els] for a in els], dtype=np.int64
        )

    @cached_property
    def neg_table(self) -> np.ndarray:
        return np.array([self.index(self.neg(a)) for a in field_elements(self)])


@dataclass(frozen=True)
class FieldElement:
    coeffs: tuple[int, ...]
    field: Field

    def __add__(self, other: FieldElement) -> FieldElement:
        return self.field.add(self, other)

    def __sub__(self, other: FieldElement) -> FieldElement:
        return self.field.sub(self, other)

    def __mul__(self, other: FieldElement) -> FieldElement:
        return self.field.mul(self, other)

    def __neg__(self) -> FieldElement:
        return self.field.neg(self)

    def __truediv__(self, other: FieldElement) -> FieldElement:
        return self.field.mul(self, self.field.inv(other))

    def __int__(self) -> int:
        return self.field.index(self)

    def __repr__(self) -> str:
        if self.field.k == 1:
            return f"GF{self.field.q}({self.coeffs[0]})"
        terms = [
            (f"{c}" if i == 0 else f"{'' if c == 1 else c}x{'' if i == 1 else f'^{i}'}")
            for i, c in enumerate(self.coeffs)
            if c
        ]
        return f"GF{self.field.q}({' + '.join(reversed(terms)) or '0'})"


def field_new(q: int) -> Field:
    """Construct GF(q); the modulus is the smallest monic irreducible."""
    if q > MAX_ORDER and is_prime_power(q):
        raise FieldTooLarge(f"GF({q}) exceeds the supported maximum {MAX_ORDER}")
    p, k = prime_power(q)
    if q > MAX_ORDER:
        raise FieldTooLarge(f"GF({q}) exceeds the supported maximum {MAX_ORDER}")
    modulus = _smallest_irreducible(p, k) if k > 1 else ()
    return Field(q=q, p=p, k=k, modulus=modulus)


def field_elements(f: Field) -> list[FieldElement]:
    return [f.element(i) for i in range(f.q)]


_BINARY = {"add", "sub", "mul"}


def field_arith(
    f: Field, op: str, a: FieldElement, b: FieldElement | None = None
) -> FieldElement:
    """Apply ``op`` in {add, sub, mul, neg, inv}."""
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return getattr(f, op)(a, b)
    if op in ("neg", "inv"):
        return getattr(f, op)(a)
    raise ValueError(f"unknown field operation {op!r}")
