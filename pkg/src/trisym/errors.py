"""Exception hierarchy shared by all trisym modules."""

from __future__ import annotations


class TrisymError(Exception):
    """Base class for every error raised by this package."""


class NotPrimePower(TrisymError, ValueError):
    """Field order has two or more distinct prime factors."""


class FieldTooLarge(TrisymError, ValueError):
    """Field order exceeds the supported maximum."""


class DivisionByZero(TrisymError, ZeroDivisionError):
    """Inverse of the additive identity requested."""


class ParseError(TrisymError, ValueError):
    """Malformed partition file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NotASteinerSystem(TrisymError, ValueError):
    """Parsed sets fail the exactly-once pair coverage property."""

    def __init__(
        self,
        message: str,
        missing: tuple[int, int] | None = None,
        duplicated: tuple[int, int] | None = None,
    ):
        self.missing = missing
        self.duplicated = duplicated
        super().__init__(message)


class NoPerfectMatching(TrisymError):
    """Some index could not be matched to a block."""


class InfeasibleMemory(TrisymError):
    """No blocking plan fits in the fast memory budget."""


class MemoryOverflow(TrisymError):
    """A memory tracker exceeded its capacity."""


class DimensionMismatch(TrisymError, ValueError):
    """Operand shapes disagree with the declared kernel shape."""


class InfeasibleGrid(TrisymError, ValueError):
    """Processor grid is not of the form required by the algorithm."""


class GroupEmpty(TrisymError, ValueError):
    """Collective invoked on an empty processor group."""
