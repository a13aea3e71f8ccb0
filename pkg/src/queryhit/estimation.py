"""Trace-based estimators for sources without a known law.

Hit times are sampled from uniformly random offsets into a training trace and
summarized as Laplace-smoothed histograms.  The resulting
:class:`EmpiricalHitModel` exposes the same interface as
:class:`~queryhit.inference.ExactHitModel`, so the test engine can run on
either.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .inference import BothLikelihoodsZero, bayes_update_log, clamp_belief
from .patterns import QueryPattern
from .sources import SourceModel

DEFAULT_SMOOTHING = 1.0
OVERFLOW_QUANTILE = 0.995
TAIL_FIT_QUANTILE = 0.75
MIN_UNCENSORED = 0.5
MAX_ROUNDS = 20
TAIL_EPS = 1e-16
MAX_DENSE = 10_000_000


class InsufficientTrace(ValueError):
    """The trace is too short (or lacks the pattern) to sample hit times."""


@dataclass(frozen=True, eq=False)
class TrainingTrace:
    symbols: np.ndarray
    label: int

    def __post_init__(self):
        if self.label not in (1, 2):
            raise ValueError("label must be 1 or 2")
        arr = np.asarray(self.symbols, dtype=np.int64)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("trace needs at least 2 symbols")
        object.__setattr__(self, "symbols", arr)


def _as_symbols(trace) -> np.ndarray:
    if isinstance(trace, TrainingTrace):
        return trace.symbols
    if isinstance(trace, SourceModel):
        if trace.trace is None:
            raise ValueError("expected a trace source")
        return np.asarray(trace.trace)
    return np.asarray(trace, dtype=np.int64)


def occurrence_starts(symbols: np.ndarray, pattern: QueryPattern) -> np.ndarray:
    """Start indices of every (possibly overlapping) occurrence."""
    m = len(pattern)
    if symbols.size < m:
        return np.empty(0, dtype=np.int64)
    win = np.lib.stride_tricks.sliding_window_view(symbols, m)
    return np.flatnonzero(np.all(win == np.asarray(pattern.symbols), axis=1))


def hit_times_from(symbols: np.ndarray, pattern: QueryPattern, offsets) -> np.ndarray:
    """Hit time from each start offset; ``0`` marks a censored start."""
    starts = occurrence_starts(symbols, pattern)
    offsets = np.asarray(offsets, dtype=np.int64)
    pos = np.searchsorted(starts, offsets, side="left")
    out = np.zeros(offsets.size, dtype=np.int64)
    ok = pos < starts.size
    out[ok] = starts[pos[ok]] + len(pattern) - offsets[ok]
    return out


def _sample(trace, pattern: QueryPattern, n_samples: int, rng: np.random.Generator,
            max_rounds: int = MAX_ROUNDS) -> Tuple[np.ndarray, float]:
    symbols = _as_symbols(trace)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if symbols.size < len(pattern) + 1:
        raise InsufficientTrace("trace shorter than pattern length + 1")
    starts = occurrence_starts(symbols, pattern)
    # a start offset s is uncensored iff some occurrence begins at or after s
    frac = 0.0 if starts.size == 0 else (starts[-1] + 1) / symbols.size
    if frac < MIN_UNCENSORED:
        raise InsufficientTrace(f"only {frac:.1%} of start offsets reach a hit of {pattern}")
    kept = []
    have = drawn = censored = 0
    for _ in range(max_rounds):
        need = n_samples - have
        if need <= 0:
            break
        dt = hit_times_from(symbols, pattern, rng.integers(0, symbols.size, need))
        drawn += need
        censored += int(np.sum(dt == 0))
        dt = dt[dt > 0]
        kept.append(dt)
        have += dt.size
    if have < n_samples:
        raise InsufficientTrace("retry cap reached before collecting enough uncensored samples")
    return np.concatenate(kept)[:n_samples], censored / drawn


def sample_hit_times(trace, pattern: QueryPattern, n_samples: int,
                     rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """``n_samples`` uncensored hit times from uniformly random start offsets.

    Censored draws (no hit before the trace ends) are dropped and redrawn, up
    to a fixed number of rounds.
    """
    rng = rng if rng is not None else np.random.default_rng()
    return _sample(trace, pattern, n_samples, rng)[0]


@dataclass(frozen=True, eq=False)
class HitHistogram:
    """Smoothed hit-time law.

    ``body[t - 1]`` is the probability of ``t <= cut``.  Beyond ``cut`` the
    remaining ``tail_mass`` is either spread geometrically with ratio
    ``tail_rate`` or, when ``tail_rate`` is ``None``, kept as one overflow bin.
    """

    body: np.ndarray
    tail_mass: float
    tail_rate: Optional[float]
    n_samples: int = 0
    sample_mean: float = float("nan")
    censor_rate: float = 0.0

    @property
    def cut(self) -> int:
        return self.body.size

    def prob(self, t: int) -> float:
        """Likelihood of an observed hit time (the overflow bin's mass when lumped)."""
        if t < 1:
            return 0.0
        if t <= self.cut:
            return float(self.body[t - 1])
        if self.tail_rate is None:
            return self.tail_mass
        r = self.tail_rate
        return self.tail_mass * (1.0 - r) * r ** (t - self.cut - 1)

    def log_prob(self, t: int) -> float:
        if self.tail_rate is not None and t > self.cut and self.tail_mass > 0 and self.tail_rate > 0:
            r = self.tail_rate
            return float(np.log(self.tail_mass) + np.log1p(-r) + (t - self.cut - 1) * np.log(r))
        p = self.prob(t)
        return float(np.log(p)) if p > 0 else -np.inf

    def log_survival(self, t: int) -> float:
        if self.tail_rate is not None and t >= self.cut and self.tail_mass > 0 and self.tail_rate > 0:
            return float(np.log(self.tail_mass) + (t - self.cut) * np.log(self.tail_rate))
        s = self.survival(t)
        return float(np.log(s)) if s > 0 else -np.inf

    def survival(self, t: int) -> float:
        if t < 1:
            return 1.0
        if t < self.cut:
            return float(self.body[t:].sum() + self.tail_mass)
        if self.tail_rate is None:
            return self.tail_mass
        return self.tail_mass * self.tail_rate ** (t - self.cut)

    def dense(self, horizon: int) -> np.ndarray:
        """Point masses on ``1..horizon`` (geometric tails only)."""
        out = np.zeros(horizon)
        n = min(horizon, self.cut)
        out[:n] = self.body[:n]
        if horizon > self.cut and self.tail_mass > 0:
            r = self.tail_rate
            j = np.arange(horizon - self.cut)
            out[self.cut:] = self.tail_mass * (1.0 - r) * r ** j
        return out

    def horizon(self) -> int:
        if self.tail_rate is None or self.tail_mass == 0.0 or self.tail_rate == 0.0:
            return self.cut + 1
        extra = int(np.ceil(np.log(TAIL_EPS) / np.log(self.tail_rate)))
        return min(self.cut + max(extra, 1), MAX_DENSE)

    @classmethod
    def from_pmf(cls, probs) -> "HitHistogram":
        """Wrap an exact PMF (``probs[t - 1]``) with no tail."""
        p = np.asarray(getattr(probs, "probs", probs), dtype=float)
        return cls(p.copy(), 0.0, 0.0, 0, float(np.dot(np.arange(1, p.size + 1), p)))


def _geometric_rate(samples: np.ndarray) -> float:
    """Ratio of a geometric law fitted to the upper tail of ``samples``."""
    c = np.quantile(samples, TAIL_FIT_QUANTILE)
    excess = samples[samples > c] - c
    if excess.size == 0:
        return 0.0
    return float(min(max(1.0 - 1.0 / excess.mean(), 0.0), 1.0 - 1e-12))


def build_histogram(samples, m: int = 1, smoothing: float = DEFAULT_SMOOTHING,
                    cut: Optional[int] = None, tail: str = "geometric",
                    censor_rate: float = 0.0) -> HitHistogram:
    """Laplace-smoothed histogram over ``m..cut`` plus a tail.

    Every hit time in ``m..cut`` gets its own bin (with pseudo-count
    ``smoothing``) and the tail one more.  ``cut`` defaults to the upper
    quantile of ``samples``.
    """
    x = np.asarray(samples, dtype=np.int64)
    if x.size == 0:
        raise InsufficientTrace("no samples")
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    if tail not in ("geometric", "overflow"):
        raise ValueError("tail must be 'geometric' or 'overflow'")
    if cut is None:
        cut = int(np.ceil(np.quantile(x, OVERFLOW_QUANTILE)))
    cut = max(int(cut), m)
    counts = np.bincount(np.minimum(x, cut + 1), minlength=cut + 2).astype(float)
    body = counts[1:cut + 1]
    body[m - 1:] += smoothing
    over = counts[cut + 1] + smoothing
    z = body.sum() + over
    rate = _geometric_rate(x) if tail == "geometric" else None
    return HitHistogram(body / z, over / z, rate, int(x.size), float(x.mean()), censor_rate)


def histogram_kl(h1: HitHistogram, h2: HitHistogram) -> float:
    """Plug-in KL divergence (nats) between two smoothed histograms."""
    if h1.tail_rate is None or h2.tail_rate is None:
        if h1.cut != h2.cut:
            raise ValueError("overflow-bin histograms need a common cut")
        p = np.append(h1.body, h1.tail_mass)
        q = np.append(h2.body, h2.tail_mass)
    else:
        n = max(h1.horizon(), h2.horizon())
        p, q = h1.dense(n), h2.dense(n)
    s = p > 0
    if np.any(q[s] <= 0):
        # only reachable with zero smoothing
        return float("inf")
    return float(max(0.0, np.sum(p[s] * (np.log(p[s]) - np.log(q[s])))))


class EmpiricalHitModel:
    """Histogram hit-time laws for two labelled training traces.

    With ``tail="geometric"`` (default) each hypothesis keeps its own cut at
    its upper quantile and a geometric tail fitted to its largest samples; with
    ``tail="overflow"`` both share a cut at the pooled upper quantile and
    everything beyond is a single overflow bin.
    """

    def __init__(self, trace1, trace2, patterns: Sequence[QueryPattern], n_samples: int = 10_000,
                 rng: Optional[np.random.Generator] = None, smoothing: float = DEFAULT_SMOOTHING,
                 tail: str = "geometric"):
        rng = rng if rng is not None else np.random.default_rng()
        self.patterns = list(patterns)
        self.smoothing = smoothing
        self.tail = tail
        self.samples = []
        self.histograms = []
        for q in self.patterns:
            s1, c1 = _sample(trace1, q, n_samples, rng)
            s2, c2 = _sample(trace2, q, n_samples, rng)
            self.samples.append((s1, s2))
            self.histograms.append(self._pair(q, s1, s2, c1, c2))
        self._stats = None

    def _pair(self, q, s1, s2, c1, c2):
        m = len(q)
        if self.tail == "overflow":
            cut = int(np.ceil(np.quantile(np.concatenate([s1, s2]), OVERFLOW_QUANTILE)))
            return (build_histogram(s1, m, self.smoothing, cut, "overflow", c1),
                    build_histogram(s2, m, self.smoothing, cut, "overflow", c2))
        return (build_histogram(s1, m, self.smoothing, None, "geometric", c1),
                build_histogram(s2, m, self.smoothing, None, "geometric", c2))

    @classmethod
    def from_histograms(cls, patterns, histograms) -> "EmpiricalHitModel":
        obj = cls.__new__(cls)
        obj.patterns = list(patterns)
        obj.histograms = list(histograms)
        obj.samples = [(np.empty(0), np.empty(0))] * len(obj.patterns)
        obj.smoothing = 0.0
        obj.tail = "geometric"
        obj._stats = None
        return obj

    def index(self, pattern: QueryPattern) -> int:
        return self.patterns.index(pattern)

    def start_key(self, previous):
        return (None, None)

    def canonical_key(self, key):
        return (None, None)

    def stats(self, key=None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self._stats is None:
            kl = np.array([histogram_kl(a, b) for a, b in self.histograms])
            e1 = np.array([a.sample_mean for a, _ in self.histograms])
            e2 = np.array([b.sample_mean for _, b in self.histograms])
            for arr in (kl, e1, e2):
                arr.setflags(write=False)
            self._stats = (kl, e1, e2)
        return self._stats

    def log_likelihoods(self, key, idx: int, delta_t: int, censored: bool = False) -> Tuple[float, float]:
        a, b = self.histograms[idx]
        if censored:
            return a.log_survival(delta_t), b.log_survival(delta_t)
        return a.log_prob(delta_t), b.log_prob(delta_t)

    def likelihoods(self, key, idx: int, delta_t: int, censored: bool = False) -> Tuple[float, float]:
        l1, l2 = self.log_likelihoods(key, idx, delta_t, censored)
        return float(np.exp(l1)), float(np.exp(l2))

    def update(self, belief: float, key, idx: int, delta_t: int, censored: bool = False) -> float:
        # log-odds form of the general-prior posterior; safe deep in the tails
        l1, l2 = self.log_likelihoods(key, idx, delta_t, censored)
        try:
            return bayes_update_log(belief, l1, l2)
        except BothLikelihoodsZero:
            return clamp_belief(belief)


def estimate_kl(model: EmpiricalHitModel, pattern: QueryPattern) -> float:
    return float(model.stats()[0][model.index(pattern)])


def estimate_expected_hit_time(model: EmpiricalHitModel, pattern: QueryPattern, hypothesis: int) -> float:
    if hypothesis not in (1, 2):
        raise ValueError("hypothesis must be 1 or 2")
    h = model.histograms[model.index(pattern)][hypothesis - 1]
    if not np.isfinite(h.sample_mean):
        raise InsufficientTrace("no samples behind this histogram")
    return h.sample_mean


def posterior_from_histograms(model: EmpiricalHitModel, pattern: QueryPattern, delta_t: int) -> float:
    """Uniform-prior posterior ``h1 / (h1 + h2)`` of hypothesis 1."""
    l1, l2 = model.log_likelihoods(None, model.index(pattern), delta_t)
    if l1 == -np.inf and l2 == -np.inf:
        raise BothLikelihoodsZero("hit time outside both histograms")
    return float(clamp_belief(1.0 / (1.0 + np.exp(l2 - l1))))
