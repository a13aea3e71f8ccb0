"""Symbol-stream models for the two hypotheses and streaming cursors over them.

Alphabets are always ``{0, ..., n_symbols - 1}``.  A Markov model of order
``order`` keeps its past as a *context*: the last ``order`` symbols packed into
one integer, oldest symbol most significant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

PROB_TOL = 1e-12

IID = "iid"
MARKOV = "markov"
TRACE = "trace"


class SourceError(ValueError):
    """Malformed source parameters."""


class TraceExhausted(Exception):
    """The observation budget (trace or symbol cap) has been spent."""


def _check_prob_vector(p, name="probability vector") -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise SourceError(f"{name} must be 1-D with at least 2 entries")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise SourceError(f"{name} entries must lie in [0, 1]")
    if abs(arr.sum() - 1.0) > PROB_TOL:
        raise SourceError(f"{name} must sum to 1 (got {arr.sum()!r})")
    return arr


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Long-run law of a finite chain started from the uniform distribution.

    Uses the lazy chain ``(P + I) / 2`` so periodic chains converge too; for a
    reducible chain the result is the uniform-start limit (e.g. uniform for a
    frozen binary chain).
    """
    n = transition.shape[0]
    lazy = 0.5 * (transition + np.eye(n))
    for _ in range(64):
        lazy = lazy @ lazy
        lazy /= lazy.sum(axis=1, keepdims=True)  # stop rounding drift from compounding
    pi = np.full(n, 1.0 / n) @ lazy
    return pi / pi.sum()


@dataclass(frozen=True, eq=False)
class SourceModel:
    """Immutable generative model for a symbol stream.

    ``kind`` is one of ``"iid"``, ``"markov"``, ``"trace"``.  Only the fields
    relevant to the kind are populated.
    """

    kind: str
    n_symbols: int
    probs: Optional[np.ndarray] = None
    order: int = 0
    kernel: Optional[np.ndarray] = None  # shape (n_symbols**order, n_symbols)
    initial: Optional[np.ndarray] = None  # law of the starting context
    trace: Optional[np.ndarray] = None
    cursor_policy: str = "start"  # trace only: "start" or "random"
    name: str = field(default="", compare=False)

    @property
    def fingerprint(self) -> tuple:
        """Hashable summary of the law (equal fingerprints, equal models)."""
        def raw(a):
            return None if a is None else (a.shape, a.tobytes())
        return (self.kind, self.n_symbols, self.order, raw(self.probs), raw(self.kernel),
                raw(self.initial), raw(self.trace), self.cursor_policy)

    @property
    def n_contexts(self) -> int:
        return self.n_symbols ** self.order if self.kind == MARKOV else 1

    def next_context(self, context: int, symbol: int) -> int:
        if self.kind != MARKOV:
            return 0
        return (context * self.n_symbols + symbol) % self.n_contexts

    def context_of(self, symbols: Sequence[int]) -> int:
        """Context index after the given symbols have been emitted (needs ``len >= order``)."""
        if self.kind != MARKOV:
            return 0
        if len(symbols) < self.order:
            raise SourceError("not enough symbols to fix a Markov context")
        ctx = 0
        for s in symbols[len(symbols) - self.order:]:
            ctx = ctx * self.n_symbols + int(s)
        return ctx

    def context_transition(self) -> np.ndarray:
        """Transition matrix of the context chain (Markov kind only)."""
        n_ctx = self.n_contexts
        mat = np.zeros((n_ctx, n_ctx))
        for c in range(n_ctx):
            for s in range(self.n_symbols):
                mat[c, self.next_context(c, s)] += self.kernel[c, s]
        return mat

    def symbol_law(self) -> np.ndarray:
        """Stationary one-symbol marginal of the model."""
        if self.kind == IID:
            return self.probs.copy()
        if self.kind == MARKOV:
            ctx_law = stationary_distribution(self.context_transition())
            return ctx_law @ self.kernel
        counts = np.bincount(self.trace, minlength=self.n_symbols)
        return counts / counts.sum()

    def symbol_probability(self, context: int, symbol: int) -> float:
        if self.kind == IID:
            return float(self.probs[symbol])
        if self.kind == MARKOV:
            return float(self.kernel[context, symbol])
        raise SourceError("trace sources have no explicit law")

    def cursor(self, rng: Optional[np.random.Generator] = None,
               context: Optional[int] = None, budget: Optional[int] = None) -> "StreamCursor":
        return StreamCursor(self, rng=rng, context=context, budget=budget)

    def __repr__(self) -> str:
        if self.kind == IID:
            return f"SourceModel(iid, p={self.probs.tolist()})"
        if self.kind == MARKOV:
            return f"SourceModel(markov, order={self.order}, kernel={self.kernel.tolist()})"
        return f"SourceModel(trace, n={len(self.trace)})"


def make_iid(p) -> SourceModel:
    """IID source emitting symbol ``z`` with probability ``p[z]``."""
    arr = _check_prob_vector(p)
    arr.setflags(write=False)
    return SourceModel(kind=IID, n_symbols=arr.size, probs=arr)


def make_bernoulli(p_one: float) -> SourceModel:
    """Binary IID source with ``P(Z = 1) = p_one``."""
    return make_iid([1.0 - p_one, p_one])


def make_markov(kernel, order: int = 1, initial=None) -> SourceModel:
    """Markov source of the given order.

    ``kernel[c, z]`` is ``P(next = z | context c)`` with contexts enumerated as
    base-``|Z|`` integers over the last ``order`` symbols.  ``initial`` is the
    law of the (unobserved) starting context and defaults to the stationary
    law of the context chain.
    """
    k = np.asarray(kernel, dtype=float)
    if order < 1:
        raise SourceError("Markov order must be >= 1")
    if k.ndim != 2 or k.shape[1] < 2 or k.shape[0] != k.shape[1] ** order:
        raise SourceError("kernel must have shape (|Z|**order, |Z|)")
    for row in k:
        _check_prob_vector(row, "kernel row")
    model = SourceModel(kind=MARKOV, n_symbols=k.shape[1], order=order, kernel=k)
    if initial is None:
        init = stationary_distribution(model.context_transition())
    else:
        init = _check_prob_vector(initial, "initial distribution")
        if init.size != model.n_contexts:
            raise SourceError("initial distribution must cover all contexts")
    k.setflags(write=False)
    init.setflags(write=False)
    return SourceModel(kind=MARKOV, n_symbols=k.shape[1], order=order, kernel=k, initial=init)


def persistent_stay_probability(p: float) -> float:
    return 0.5 + (0.4 + 0.1 * p)


def make_markov_persistent(p: float) -> SourceModel:
    """Binary order-1 chain from the persistent family.

    ``P(z | z') = 1/2 + (-1)**[z == z'] * (0.4 + 0.1 p)`` read with the stay
    branch carrying the ``+``, so the stay probability is ``0.9 + 0.1 p``.
    """
    if not 0.0 < p <= 1.0:
        raise SourceError("persistent-family parameter must lie in (0, 1]")
    stay = persistent_stay_probability(p)
    flip = 1.0 - stay
    if not (0.0 <= stay <= 1.0 and 0.0 <= flip <= 1.0):
        raise SourceError("stay probability outside [0, 1]")
    return make_markov([[stay, flip], [flip, stay]], order=1, initial=[0.5, 0.5])


def make_symmetric_markov(flip: float) -> SourceModel:
    """Binary symmetric chain that changes state with probability ``flip``."""
    return make_markov([[1.0 - flip, flip], [flip, 1.0 - flip]], order=1, initial=[0.5, 0.5])


def make_trace(symbols, n_symbols: Optional[int] = None, cursor_policy: str = "start") -> SourceModel:
    """Replay source over a recorded symbol sequence."""
    arr = np.asarray(list(symbols), dtype=np.int64)
    if arr.size == 0:
        raise SourceError("trace must be non-empty")
    if np.any(arr < 0):
        raise SourceError("trace symbols must be non-negative")
    if n_symbols is None:
        n_symbols = max(2, int(arr.max()) + 1)
    if arr.max() >= n_symbols:
        raise SourceError("trace symbol outside alphabet")
    if cursor_policy not in ("start", "random"):
        raise SourceError(f"unknown cursor policy {cursor_policy!r}")
    arr.setflags(write=False)
    return SourceModel(kind=TRACE, n_symbols=n_symbols, trace=arr, cursor_policy=cursor_policy)


@dataclass(frozen=True)
class HypothesisPair:
    """The two candidate sources and the prior belief ``prior = P(hypothesis 1)``."""

    p1: SourceModel
    p2: SourceModel
    prior: float = 0.5

    def __post_init__(self):
        if self.p1.n_symbols != self.p2.n_symbols:
            raise SourceError("hypotheses must share an alphabet")
        if not 0.0 <= self.prior <= 1.0:
            raise SourceError("prior must lie in [0, 1]")


def draw_switch(prior: float, rng: np.random.Generator) -> int:
    """Draw the hypothesis label: 1 with probability ``prior``, else 2."""
    if not 0.0 <= prior <= 1.0:
        raise ValueError("prior must lie in [0, 1]")
    return 1 if rng.random() < prior else 2


class StreamCursor:
    """Forward-only reader over a source.

    ``t`` counts the symbols emitted so far.  ``budget`` caps the number of
    symbols this cursor may emit; hitting it raises :class:`TraceExhausted`
    exactly like running off the end of a trace.
    """

    _BLOCK = 256

    def __init__(self, model: SourceModel, rng: Optional[np.random.Generator] = None,
                 context: Optional[int] = None, budget: Optional[int] = None):
        self.model = model
        self.rng = rng if rng is not None else np.random.default_rng()
        self.t = 0
        self.budget = budget
        self._uniforms = np.empty(0)
        self._u_pos = 0
        self.context = 0
        self.offset = 0
        if model.kind == MARKOV:
            if context is None:
                context = int(self._draw(np.cumsum(model.initial)))
            self.context = int(context)
            self._cdf = np.cumsum(model.kernel, axis=1)
        elif model.kind == IID:
            self._cdf = np.cumsum(model.probs)
        elif model.cursor_policy == "random":
            self.offset = int(self.rng.integers(0, len(model.trace)))

    def _uniform(self) -> float:
        if self._u_pos >= self._uniforms.size:
            self._uniforms = self.rng.random(self._BLOCK)
            self._u_pos = 0
        u = self._uniforms[self._u_pos]
        self._u_pos += 1
        return u

    def _draw(self, cdf: np.ndarray) -> int:
        s = int(np.searchsorted(cdf, self._uniform(), side="right"))
        return min(s, cdf.size - 1)

    @property
    def remaining(self) -> Optional[int]:
        """Symbols still available, or ``None`` when unbounded."""
        left = None
        if self.model.kind == TRACE:
            left = len(self.model.trace) - self.offset - self.t
        if self.budget is not None:
            b = self.budget - self.t
            left = b if left is None else min(left, b)
        return left

    def next_symbol(self) -> int:
        if self.budget is not None and self.t >= self.budget:
            raise TraceExhausted(f"symbol budget of {self.budget} spent")
        m = self.model
        if m.kind == IID:
            s = self._draw(self._cdf)
        elif m.kind == MARKOV:
            s = self._draw(self._cdf[self.context])
            self.context = m.next_context(self.context, s)
        else:
            idx = self.offset + self.t
            if idx >= len(m.trace):
                raise TraceExhausted("trace exhausted")
            s = int(m.trace[idx])
        self.t += 1
        return s


def next_symbol(cursor: StreamCursor) -> int:
    return cursor.next_symbol()
