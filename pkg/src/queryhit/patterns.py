"""Query patterns, the KMP failure function and the streaming matcher."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .sources import StreamCursor, TraceExhausted


def build_failure_function(symbols: Sequence[int]) -> List[int]:
    """Longest proper prefix that is also a suffix, for every prefix.

    ``failure[i]`` (0-based) is that length for ``symbols[:i + 1]``.

    >>> build_failure_function([1, 0, 1, 1])
    [0, 0, 1, 1]
    """
    m = len(symbols)
    if m == 0:
        raise ValueError("pattern must be non-empty")
    failure = [0] * m
    k = 0
    for i in range(1, m):
        while k > 0 and symbols[k] != symbols[i]:
            k = failure[k - 1]
        if symbols[k] == symbols[i]:
            k += 1
        failure[i] = k
    return failure


@dataclass(frozen=True)
class QueryPattern:
    symbols: Tuple[int, ...]
    failure: Tuple[int, ...]

    @classmethod
    def from_symbols(cls, symbols: Sequence[int]) -> "QueryPattern":
        syms = tuple(int(s) for s in symbols)
        if any(s < 0 for s in syms):
            raise ValueError("pattern symbols must be non-negative")
        return cls(syms, tuple(build_failure_function(syms)))

    @classmethod
    def parse(cls, text: str) -> "QueryPattern":
        """Parse a digit string such as ``"0111"``."""
        text = text.strip()
        if not text or not text.isdigit():
            raise ValueError(f"pattern must be a non-empty digit string, got {text!r}")
        return cls.from_symbols([int(c) for c in text])

    def __len__(self) -> int:
        return len(self.symbols)

    def __str__(self) -> str:
        return "".join(str(s) for s in self.symbols)

    def step(self, matched: int, symbol: int) -> int:
        """Matched-prefix length after reading ``symbol``; ``len(self)`` means a hit."""
        q = self.symbols
        j = matched
        while j > 0 and q[j] != symbol:
            j = self.failure[j - 1]
        if q[j] == symbol:
            j += 1
        return j

    def automaton(self, n_symbols: int) -> List[List[int]]:
        """Transition table ``delta[k][s]`` for partial-match states ``k < m``."""
        return [[self.step(k, s) for s in range(n_symbols)] for k in range(len(self))]

    def reversed(self) -> "QueryPattern":
        return QueryPattern.from_symbols(self.symbols[::-1])

    def complement(self) -> "QueryPattern":
        """Bitwise complement (binary patterns only)."""
        return QueryPattern.from_symbols([1 - s for s in self.symbols])


def query_set(n_symbols: int, m: int) -> List[QueryPattern]:
    """All ``n_symbols ** m`` patterns of length ``m`` in lexicographic order."""
    if n_symbols < 2 or m < 1:
        raise ValueError("need an alphabet of size >= 2 and m >= 1")
    return [QueryPattern.from_symbols(p) for p in itertools.product(range(n_symbols), repeat=m)]


@dataclass(frozen=True)
class HitRecord:
    delta_t: int
    absolute_end: int
    censored: bool = False


def stream_hit(cursor: StreamCursor, pattern: QueryPattern) -> HitRecord:
    """Consume symbols until ``pattern`` completes.

    The search starts fresh (no carried-over partial match), so successive
    calls on one cursor yield disjoint occurrence windows.  If the cursor runs
    out first the record is censored and ``delta_t`` counts what was consumed.
    """
    m = len(pattern)
    matched = 0
    consumed = 0
    while True:
        try:
            s = cursor.next_symbol()
        except TraceExhausted:
            return HitRecord(consumed, cursor.t, censored=True)
        consumed += 1
        matched = pattern.step(matched, s)
        if matched == m:
            return HitRecord(consumed, cursor.t)
