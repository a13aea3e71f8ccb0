"""Divergences, efficiency ratios and belief updates."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .hitpmf import (DEFAULT_EPSILON, HitTimePmf, PatternImpossible, cached_hit_time_pmf,
                     paired_pmfs)
from .patterns import QueryPattern
from .sources import IID

CLAMP = 1e-12


class AbsoluteContinuityViolation(ValueError):
    """The first law puts mass where the second has none."""


class BothLikelihoodsZero(ValueError):
    """An observation has zero likelihood under both hypotheses."""


class Decision(enum.Enum):
    DECLARE_1 = 1
    DECLARE_2 = 2
    CONTINUE = 0


def _as_log_probs(pmf) -> np.ndarray:
    if isinstance(pmf, HitTimePmf):
        return np.asarray(pmf.log_probs)
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(pmf, dtype=float))


def kl_divergence(pmf1, pmf2) -> float:
    """``sum p1 ln(p1 / p2)`` in nats over a shared index range.

    Accepts :class:`HitTimePmf` objects (evaluated in log scale) or plain
    probability vectors; shorter inputs are zero-padded.
    """
    lp = _as_log_probs(pmf1)
    lq = _as_log_probs(pmf2)
    n = max(lp.size, lq.size)
    if lp.size < n:
        lp = np.concatenate([lp, np.full(n - lp.size, -np.inf)])
    if lq.size < n:
        lq = np.concatenate([lq, np.full(n - lq.size, -np.inf)])
    support = lp > -np.inf
    if np.any(lq[support] == -np.inf):
        raise AbsoluteContinuityViolation("p1 > 0 where p2 == 0")
    a, b = lp[support], lq[support]
    return float(max(0.0, np.sum(np.exp(a) * (a - b))))


def kl_bits(nats: float) -> float:
    return nats / np.log(2.0)


@dataclass(frozen=True)
class QueryStats:
    pattern: QueryPattern
    kl: float
    e1: float
    e2: float


def query_stats(pattern: QueryPattern, pmf1: HitTimePmf, pmf2: HitTimePmf) -> QueryStats:
    return QueryStats(pattern, kl_divergence(pmf1, pmf2), pmf1.mean(), pmf2.mean())


def efficiency_ratio(stats: QueryStats, belief: float) -> float:
    """KL per unit of belief-averaged expected hit time."""
    denom = belief * stats.e1 + (1.0 - belief) * stats.e2
    if denom <= 0:
        raise ValueError("belief-averaged expected hit time must be positive")
    return stats.kl / denom


def efficiency_ratios(kl, e1, e2, belief: float) -> np.ndarray:
    """Vectorized :func:`efficiency_ratio` over aligned arrays.

    Infinite divergence gives an infinite ratio; ``nan`` entries (excluded
    patterns) stay ``nan``.
    """
    kl = np.asarray(kl, dtype=float)
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        nu = kl / (belief * e1 + (1.0 - belief) * e2)
    return np.where(np.isinf(kl), np.inf, nu)


def clamp_belief(pi: float) -> float:
    return min(max(pi, CLAMP), 1.0 - CLAMP)


def bayes_update(belief: float, l1: float, l2: float) -> float:
    """Posterior of hypothesis 1 after an observation with likelihoods ``l1``, ``l2``."""
    if l1 < 0 or l2 < 0:
        raise ValueError("likelihoods must be non-negative")
    if l1 == 0 and l2 == 0:
        raise BothLikelihoodsZero("observation impossible under both hypotheses")
    num = l1 * belief
    return clamp_belief(num / (num + l2 * (1.0 - belief)))


def bayes_update_log(belief: float, ll1: float, ll2: float) -> float:
    """:func:`bayes_update` with log-likelihoods, safe when both underflow."""
    if ll1 == -np.inf and ll2 == -np.inf:
        raise BothLikelihoodsZero("observation impossible under both hypotheses")
    belief = clamp_belief(belief)
    # posterior = 1 / (1 + exp(-z)) with z the log posterior odds
    z = (ll1 - ll2) + np.log(belief) - np.log1p(-belief)
    if z >= 0:
        post = 1.0 / (1.0 + np.exp(-z))
    else:
        ez = np.exp(z)
        post = ez / (1.0 + ez)
    return clamp_belief(float(post))


def general_prior_posterior(p_eq: float, s: float) -> float:
    """Re-weight a uniform-prior posterior ``p_eq`` to the prior ``s``.

    From ``l2 / l1 = 1 / p_eq - 1`` the posterior under prior ``s`` is
    ``s / (s + (1 - s)(1 / p_eq - 1))``.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError("prior must lie in [0, 1]")
    p = clamp_belief(p_eq)
    ratio = 1.0 / p - 1.0
    return clamp_belief(s / (s + (1.0 - s) * ratio))


def decide(belief: float, eps_t: float) -> Decision:
    if not 0.0 < eps_t < 0.5:
        raise ValueError("eps_t must lie in (0, 0.5)")
    if belief > 1.0 - eps_t:
        return Decision.DECLARE_1
    if belief < eps_t:
        return Decision.DECLARE_2
    return Decision.CONTINUE


def _never_likelihood(delta_t: int, censored: bool) -> float:
    # law of a pattern that is never hit: all mass at infinity
    return 1.0 if censored else 0.0


class ExactHitModel:
    """Hit-time laws and query statistics computed exactly for two known sources.

    Laws depend on where the search starts.  For Markov sources that is the
    context left by the previous query (its last ``order`` symbols); the first
    query starts from the stationary context law.  Keys returned by
    :meth:`start_key` index the cached tables.

    A pattern impossible under both hypotheses is never a candidate.  One that
    is impossible under a single hypothesis gets infinite divergence: seeing it
    hit at all settles the test.
    """

    def __init__(self, source1, source2, patterns, epsilon: float = DEFAULT_EPSILON):
        if source1.n_symbols != source2.n_symbols:
            raise ValueError("hypotheses must share an alphabet")
        self.source1 = source1
        self.source2 = source2
        self.patterns = list(patterns)
        self.epsilon = epsilon
        self._pmfs = {}
        self._stats = {}

    def start_key(self, previous: Optional[QueryPattern]):
        if previous is None:
            return ("stationary", "stationary")
        return (self.source1.context_of(previous.symbols), self.source2.context_of(previous.symbols))

    def canonical_key(self, key):
        """Drop context information that an IID hypothesis ignores."""
        return (None if self.source1.kind == IID else key[0],
                None if self.source2.kind == IID else key[1])

    def pmfs(self, key, idx: int) -> Tuple[Optional[HitTimePmf], Optional[HitTimePmf]]:
        """Paired laws, with ``None`` standing for a pattern that never hits."""
        ck = self.canonical_key(key) + (idx,)
        if ck not in self._pmfs:
            q = self.patterns[idx]
            s1, s2 = ck[0], ck[1]
            if s1 == "stationary":
                s1 = None
            if s2 == "stationary":
                s2 = None
            try:
                pair = paired_pmfs(q, self.source1, self.source2, self.epsilon, s1, s2)
            except PatternImpossible:
                pair = (_maybe_pmf(q, self.source1, self.epsilon, s1),
                        _maybe_pmf(q, self.source2, self.epsilon, s2))
            self._pmfs[ck] = pair
        return self._pmfs[ck]

    def stats(self, key) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(kl, e1, e2)`` over all patterns; ``nan`` marks excluded patterns."""
        key = self.canonical_key(key)
        if key not in self._stats:
            n = len(self.patterns)
            kl, e1, e2 = np.empty(n), np.empty(n), np.empty(n)
            for i in range(n):
                a, b = self.pmfs(key, i)
                if a is None and b is None:
                    kl[i] = e1[i] = e2[i] = np.nan
                elif a is None or b is None:
                    kl[i] = np.inf
                    e1[i] = np.inf if a is None else a.mean()
                    e2[i] = np.inf if b is None else b.mean()
                else:
                    kl[i] = kl_divergence(a, b)
                    e1[i], e2[i] = a.mean(), b.mean()
            for arr in (kl, e1, e2):
                arr.setflags(write=False)
            self._stats[key] = (kl, e1, e2)
        return self._stats[key]

    def query_stats(self, key, idx: int) -> QueryStats:
        kl, e1, e2 = self.stats(key)
        return QueryStats(self.patterns[idx], float(kl[idx]), float(e1[idx]), float(e2[idx]))

    def log_likelihoods(self, key, idx: int, delta_t: int, censored: bool = False) -> Tuple[float, float]:
        """Log of ``P(dT = delta_t)`` per hypothesis, or of ``P(dT > delta_t)`` when censored."""
        out = []
        for law in self.pmfs(key, idx):
            if law is None:
                out.append(np.log(_never_likelihood(delta_t, censored)) if censored else -np.inf)
            elif censored:
                out.append(law.log_survival(delta_t))
            else:
                out.append(law.log_prob(delta_t))
        return out[0], out[1]

    def likelihoods(self, key, idx: int, delta_t: int, censored: bool = False) -> Tuple[float, float]:
        ll1, ll2 = self.log_likelihoods(key, idx, delta_t, censored)
        return float(np.exp(ll1)), float(np.exp(ll2))

    def update(self, belief: float, key, idx: int, delta_t: int, censored: bool = False) -> float:
        ll1, ll2 = self.log_likelihoods(key, idx, delta_t, censored)
        try:
            return bayes_update_log(belief, ll1, ll2)
        except BothLikelihoodsZero:
            # beyond both truncation horizons: fall back on the tail masses
            a, b = self.pmfs(key, idx)
            t1 = a.tail_mass if a is not None else 1.0
            t2 = b.tail_mass if b is not None else 1.0
            if t1 == 0.0 and t2 == 0.0:
                return clamp_belief(belief)
            return bayes_update(belief, t1, t2)


def _maybe_pmf(pattern, source, epsilon, start):
    try:
        return cached_hit_time_pmf(pattern, source, epsilon, start=start)
    except PatternImpossible:
        return None
