"""Exact (truncated) hit-time distributions by dynamic programming.

The DP state is the matched-prefix length ``k`` in ``[0, m-1]`` paired with
the source context (always 0 for IID sources).  One step reads a symbol,
moves ``k`` through the KMP automaton and either completes the pattern (the
mass goes to ``pmf[t]``) or stays in the table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .patterns import QueryPattern
from .sources import IID, MARKOV, SourceModel, make_iid

DEFAULT_EPSILON = 1e-6
MAX_HORIZON = 1 << 22

StartContext = Union[None, int, str, np.ndarray]


class PatternImpossible(ValueError):
    """The pattern is not hit almost surely under the source."""


class InsufficientMass(ValueError):
    """A truncated PMF captured less than ``1 - epsilon`` of the mass."""


@dataclass(frozen=True, eq=False)
class HitTimePmf:
    """Normalized hit-time law on ``t = 1..t_max``; ``probs[t - 1] = P(dT = t)``.

    ``log_probs`` holds the same law in log scale and stays finite where
    ``probs`` underflows.
    """

    probs: np.ndarray
    t_max: int
    mass_captured: float
    epsilon: float
    log_probs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.log_probs is None:
            with np.errstate(divide="ignore"):
                lp = np.log(self.probs)
            lp.setflags(write=False)
            object.__setattr__(self, "log_probs", lp)

    def prob(self, t: int) -> float:
        if 1 <= t <= self.t_max:
            return float(self.probs[t - 1])
        return 0.0

    def log_prob(self, t: int) -> float:
        if 1 <= t <= self.t_max:
            return float(self.log_probs[t - 1])
        return -np.inf

    def survival(self, t: int) -> float:
        """``P(dT > t)`` under the normalized law."""
        return float(np.exp(self.log_survival(t)))

    def log_survival(self, t: int) -> float:
        if t < 1:
            return 0.0
        if t >= self.t_max:
            return -np.inf
        return float(self._log_tail()[t])

    def _log_tail(self) -> np.ndarray:
        # _log_tail()[t] = log P(dT > t) for t in 0..t_max - 1
        tail = self.__dict__.get("_tail")
        if tail is None:
            tail = np.logaddexp.accumulate(self.log_probs[::-1])[::-1]
            object.__setattr__(self, "_tail", tail)
        return tail

    @property
    def tail_mass(self) -> float:
        return max(0.0, 1.0 - self.mass_captured)

    def mean(self) -> float:
        return float(np.dot(np.arange(1, self.t_max + 1), self.probs))

    def padded(self, t_max: int) -> np.ndarray:
        out = np.zeros(t_max)
        n = min(t_max, self.t_max)
        out[:n] = self.probs[:n]
        return out


def truncate_and_normalize(raw, epsilon: float = DEFAULT_EPSILON, log_raw=None) -> HitTimePmf:
    """Normalize truncated raw masses, refusing if less than ``1 - epsilon`` was captured."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size == 0 or np.any(raw < 0):
        raise ValueError("raw PMF must be a non-empty non-negative vector")
    mass = float(raw.sum())
    if mass < 1.0 - epsilon:
        raise InsufficientMass(f"captured mass {mass:.3g} < 1 - {epsilon:g}")
    probs = raw / mass
    probs.setflags(write=False)
    log_probs = None
    if log_raw is not None:
        log_probs = np.asarray(log_raw, dtype=float) - np.log(mass)
        log_probs.setflags(write=False)
    return HitTimePmf(probs, raw.size, mass, epsilon, log_probs)


class _HitChain:
    """Sub-stochastic transition structure over the transient DP states."""

    def __init__(self, pattern: QueryPattern, source: SourceModel):
        if source.kind not in (IID, MARKOV):
            raise ValueError("exact hit-time laws need an IID or Markov source")
        m = len(pattern)
        if source.kind == MARKOV and source.order > m:
            raise ValueError("Markov order must not exceed the pattern length")
        if max(pattern.symbols) >= source.n_symbols:
            raise ValueError("pattern uses symbols outside the source alphabet")
        n_ctx = source.n_contexts
        n = m * n_ctx
        delta = pattern.automaton(source.n_symbols)
        move = np.zeros((n, n))
        hit = np.zeros(n)
        for k in range(m):
            for c in range(n_ctx):
                row = k * n_ctx + c
                for s in range(source.n_symbols):
                    p = source.symbol_probability(c, s)
                    if p == 0.0:
                        continue
                    j = delta[k][s]
                    if j == m:
                        hit[row] += p
                    else:
                        move[row, j * n_ctx + source.next_context(c, s)] += p
        self.m = m
        self.n_ctx = n_ctx
        self.move = move
        self.hit = hit
        self.source = source

    def start_vector(self, start: StartContext) -> np.ndarray:
        v = np.zeros(self.m * self.n_ctx)
        src = self.source
        if src.kind == IID:
            v[0] = 1.0
        elif start is None or (isinstance(start, str) and start == "stationary"):
            v[: self.n_ctx] = src.initial
        elif isinstance(start, (int, np.integer)):
            if not 0 <= start < self.n_ctx:
                raise ValueError("start context out of range")
            v[int(start)] = 1.0
        else:
            law = np.asarray(start, dtype=float)
            if law.shape != (self.n_ctx,) or abs(law.sum() - 1) > 1e-12:
                raise ValueError("start law must be a distribution over contexts")
            v[: self.n_ctx] = law
        return v

    def check_hit_almost_surely(self, start: np.ndarray) -> None:
        adj = self.move > 0
        reach = start > 0
        frontier = reach.copy()
        while frontier.any():
            nxt = adj[frontier].any(axis=0) & ~reach
            reach |= nxt
            frontier = nxt
        # states that can eventually complete the pattern
        can_hit = self.hit > 0
        changed = True
        while changed:
            grown = can_hit | (adj & can_hit[None, :]).any(axis=1)
            changed = bool((grown != can_hit).any())
            can_hit = grown
        if not can_hit[reach].all():
            if not can_hit[reach].any():
                raise PatternImpossible("pattern has probability 0 under the source")
            raise PatternImpossible("pattern is not hit almost surely under the source")


def _block_size(move: np.ndarray) -> int:
    """Steps per block, short enough that ``move ** block`` does not underflow."""
    rho = float(np.max(np.abs(np.linalg.eigvals(move)))) if move.size else 0.0
    if rho >= 0.05:
        return 256
    if rho <= 0.0:
        return 1
    return int(min(256, max(1, np.floor(-600.0 / np.log(rho)))))


def _log_pmf(chain: _HitChain, start: np.ndarray, epsilon: float,
             t_max: Optional[int]) -> Tuple[np.ndarray, float]:
    """Log first-passage masses up to ``t_max`` (or the doubling horizon), and their total.

    Steps are taken in blocks: with ``powers[j] = move ** j`` one block is a
    single batched product.  The state vector is renormalized after every
    block and the scale kept in log form, so far tails do not underflow.
    """
    horizon = t_max if t_max is not None else 4 * chain.m
    block = _block_size(chain.move)
    powers = np.empty((block,) + chain.move.shape)
    powers[0] = np.eye(chain.move.shape[0])
    for j in range(1, block):
        powers[j] = powers[j - 1] @ chain.move
    jump = powers[-1] @ chain.move
    hit_block = powers @ chain.hit  # (block, n): hit mass j steps ahead
    out = []
    dp = start.astype(float)
    log_scale = 0.0
    mass = 0.0
    t = 0
    while True:
        while t < horizon:
            n = min(block, horizon - t)
            chunk = hit_block[:n] @ dp
            with np.errstate(divide="ignore"):
                out.append(np.log(chunk) + log_scale)
            mass += float(chunk.sum()) * np.exp(log_scale)
            dp = dp @ (jump if n == block else powers[n])
            t += n
            total = dp.sum()
            if total > 0:
                dp = dp / total
                log_scale += np.log(total)
            else:
                log_scale = -np.inf
                dp = np.zeros_like(dp)
        if t_max is not None or mass >= 1.0 - epsilon:
            break
        if horizon >= MAX_HORIZON:
            raise InsufficientMass("hit-time tail too heavy for the horizon cap")
        horizon *= 2
    return np.concatenate(out), mass


def _raw_pmf(chain: _HitChain, start: np.ndarray, epsilon: float,
             t_max: Optional[int]) -> np.ndarray:
    return np.exp(_log_pmf(chain, start, epsilon, t_max)[0])


def raw_hit_masses(pattern: QueryPattern, source: SourceModel, t_max: int,
                   start: StartContext = None) -> np.ndarray:
    """Unnormalized ``P(dT = t)`` for ``t = 1..t_max``."""
    chain = _HitChain(pattern, source)
    return _raw_pmf(chain, chain.start_vector(start), 0.0, t_max)


def mass_profile(pattern: QueryPattern, source: SourceModel, steps: int,
                 start: StartContext = None) -> Tuple[np.ndarray, np.ndarray]:
    """Cumulative hit mass and remaining DP-table mass after each of ``steps`` steps."""
    chain = _HitChain(pattern, source)
    dp = chain.start_vector(start)
    hit_cum = np.empty(steps)
    table = np.empty(steps)
    acc = 0.0
    for t in range(steps):
        acc += float(dp @ chain.hit)
        dp = dp @ chain.move
        hit_cum[t] = acc
        table[t] = dp.sum()
    return hit_cum, table


def hit_time_pmf(pattern: QueryPattern, source: SourceModel, epsilon: float = DEFAULT_EPSILON,
                 start: StartContext = None, t_max: Optional[int] = None) -> HitTimePmf:
    """Hit-time PMF of ``pattern`` for an IID or Markov ``source``.

    ``start`` selects the Markov context before the first symbol: a context
    index, a law over contexts, or ``None``/``"stationary"`` for the model's
    initial law.  Without ``t_max`` the horizon doubles from ``4 m`` until the
    captured mass reaches ``1 - epsilon``.
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    chain = _HitChain(pattern, source)
    v0 = chain.start_vector(start)
    chain.check_hit_almost_surely(v0)
    log_raw, _ = _log_pmf(chain, v0, epsilon, t_max)
    return truncate_and_normalize(np.exp(log_raw), epsilon, log_raw)


def hit_time_pmf_iid(pattern: QueryPattern, p, epsilon: float = DEFAULT_EPSILON,
                     t_max: Optional[int] = None) -> HitTimePmf:
    """IID case; ``p`` is the symbol distribution."""
    return hit_time_pmf(pattern, make_iid(p), epsilon=epsilon, t_max=t_max)


def hit_time_pmf_markov(pattern: QueryPattern, source: SourceModel, start_context: StartContext = None,
                        epsilon: float = DEFAULT_EPSILON, t_max: Optional[int] = None) -> HitTimePmf:
    if source.kind != MARKOV:
        raise ValueError("expected a Markov source")
    return hit_time_pmf(pattern, source, epsilon=epsilon, start=start_context, t_max=t_max)


_CACHE: dict = {}
_CACHE_LIMIT = 4096


def cached_hit_time_pmf(pattern: QueryPattern, source: SourceModel, epsilon: float = DEFAULT_EPSILON,
                        start: StartContext = None, t_max: Optional[int] = None) -> HitTimePmf:
    """Memoized :func:`hit_time_pmf` for hashable ``start`` values."""
    if source.kind == IID:
        start = None
    key = (source.fingerprint, start, pattern.symbols, epsilon, t_max)
    hit = _CACHE.get(key)
    if hit is None:
        if len(_CACHE) >= _CACHE_LIMIT:
            _CACHE.clear()
        hit = _CACHE[key] = hit_time_pmf(pattern, source, epsilon, start=start, t_max=t_max)
    return hit


def paired_pmfs(pattern: QueryPattern, source1: SourceModel, source2: SourceModel,
                epsilon: float = DEFAULT_EPSILON, start1: StartContext = None,
                start2: StartContext = None) -> Tuple[HitTimePmf, HitTimePmf]:
    """Both hypotheses' PMFs normalized on one common horizon.

    A shared horizon keeps the truncated laws mutually absolutely continuous
    whenever the untruncated ones are.
    """
    a = cached_hit_time_pmf(pattern, source1, epsilon, start=start1)
    b = cached_hit_time_pmf(pattern, source2, epsilon, start=start2)
    if a.t_max < b.t_max:
        a = cached_hit_time_pmf(pattern, source1, epsilon, start=start1, t_max=b.t_max)
    elif b.t_max < a.t_max:
        b = cached_hit_time_pmf(pattern, source2, epsilon, start=start2, t_max=a.t_max)
    return a, b
