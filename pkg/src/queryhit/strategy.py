"""Query-selection policies and the maximum-ratio cycle over query pairs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .hitpmf import DEFAULT_EPSILON
from .inference import ExactHitModel, QueryStats, efficiency_ratios
from .patterns import QueryPattern, query_set

TIE_RTOL = 1e-9


class EmptyCandidateSet(ValueError):
    """No admissible query to choose from."""


class NoFiniteCycle(ValueError):
    """Every edge of the query graph is excluded."""


def _pattern_order(patterns: Sequence[QueryPattern]) -> np.ndarray:
    """Rank of each pattern in lexicographic order of its symbols."""
    order = sorted(range(len(patterns)), key=lambda i: patterns[i].symbols)
    rank = np.empty(len(patterns), dtype=int)
    rank[order] = np.arange(len(patterns))
    return rank


def argmax_efficiency(patterns: Sequence[QueryPattern], kl, e1, e2, belief: float) -> int:
    """Index of the pattern with the largest efficiency ratio.

    Ratios within ``TIE_RTOL`` (relative) of the best are ties; among ties the
    lexicographically smallest pattern wins.  ``nan`` entries are skipped.
    """
    nu = efficiency_ratios(kl, e1, e2, belief)
    ok = ~np.isnan(nu)
    if len(patterns) == 0 or not ok.any():
        raise EmptyCandidateSet("no admissible query")
    best = np.max(nu[ok])
    if np.isinf(best):
        tied = ok & np.isinf(nu)
    else:
        tied = ok & (nu >= best - TIE_RTOL * max(abs(best), 1e-300))
    idx = np.flatnonzero(tied)
    rank = _pattern_order(patterns)
    return int(idx[np.argmin(rank[idx])])


def optimal_static_query_iid(table: Sequence[QueryStats], belief: float) -> QueryPattern:
    """Pattern maximizing the efficiency ratio at ``belief`` (fixed for the whole test)."""
    if not table:
        raise EmptyCandidateSet("empty query table")
    pats = [s.pattern for s in table]
    kl = np.array([s.kl for s in table], dtype=float)
    e1 = np.array([s.e1 for s in table], dtype=float)
    e2 = np.array([s.e2 for s in table], dtype=float)
    for a, b in zip(e1, e2):
        if not belief * a + (1 - belief) * b > 0:
            raise ValueError("belief-averaged expected hit time must be positive")
    return pats[argmax_efficiency(pats, kl, e1, e2, belief)]


def adaptive_next_query(table: Sequence[QueryStats], belief: float) -> QueryPattern:
    """Greedy choice re-evaluated at the current belief."""
    return optimal_static_query_iid(table, belief)


def random_query(patterns: Sequence[QueryPattern], rng: np.random.Generator) -> QueryPattern:
    if not patterns:
        raise EmptyCandidateSet("empty query set")
    return patterns[int(rng.integers(len(patterns)))]


# ---------------------------------------------------------------------------
# query graph and maximum cycle ratio


@dataclass(frozen=True, eq=False)
class QueryGraph:
    """Complete directed graph over a query set.

    ``D[n, k]`` and ``T[n, k]`` are the divergence and prior-averaged expected
    hit time of query ``k`` sent right after query ``n`` was hit; ``d0`` and
    ``t0`` belong to a first query started from the stationary context.
    ``excluded`` marks edges whose target cannot be hit under one or both
    hypotheses.
    """

    patterns: Tuple[QueryPattern, ...]
    d0: np.ndarray
    t0: np.ndarray
    D: np.ndarray
    T: np.ndarray
    excluded: np.ndarray
    prior: float

    @property
    def n_nodes(self) -> int:
        return len(self.patterns)

    @classmethod
    def from_arrays(cls, D, T, excluded=None, patterns=None, prior: float = 0.5) -> "QueryGraph":
        D = np.asarray(D, dtype=float)
        T = np.asarray(T, dtype=float)
        n = D.shape[0]
        if D.shape != (n, n) or T.shape != (n, n):
            raise ValueError("D and T must be square and of equal shape")
        if excluded is None:
            excluded = ~(np.isfinite(D) & np.isfinite(T))
        if patterns is None:
            width = max(1, int(np.ceil(np.log2(max(n, 2)))))
            patterns = tuple(QueryPattern.from_symbols([int(b) for b in format(i, f"0{width}b")])
                             for i in range(n))
        return cls(tuple(patterns), D[0].copy(), T[0].copy(), D, T, np.asarray(excluded, bool), prior)


def build_query_graph(p1, p2, m: int, prior: float = 0.5, epsilon: float = DEFAULT_EPSILON,
                      patterns: Optional[Sequence[QueryPattern]] = None,
                      model: Optional[ExactHitModel] = None) -> QueryGraph:
    """Edge divergences and prior-averaged times from exact hit-time laws."""
    if not 0.0 <= prior <= 1.0:
        raise ValueError("prior must lie in [0, 1]")
    if model is None:
        pats = list(patterns) if patterns is not None else query_set(p1.n_symbols, m)
        model = ExactHitModel(p1, p2, pats, epsilon)
    pats = model.patterns
    n = len(pats)

    def row(key):
        kl, e1, e2 = model.stats(key)
        with np.errstate(invalid="ignore"):
            t = prior * e1 + (1.0 - prior) * e2
        bad = ~(np.isfinite(kl) & np.isfinite(t))
        return kl, t, bad

    d0, t0, _ = row(model.start_key(None))
    D = np.empty((n, n))
    T = np.empty((n, n))
    excluded = np.empty((n, n), dtype=bool)
    for i, q in enumerate(pats):
        D[i], T[i], excluded[i] = row(model.start_key(q))
    for a in (d0, t0, D, T, excluded):
        a.setflags(write=False)
    return QueryGraph(tuple(pats), d0, t0, D, T, excluded, prior)


@dataclass(frozen=True)
class CyclicStrategy:
    cycle: Tuple[int, ...]
    mu: float
    patterns: Tuple[QueryPattern, ...] = ()

    def pattern_cycle(self) -> List[QueryPattern]:
        return [self.patterns[i] for i in self.cycle]

    def node_at(self, step: int) -> int:
        return self.cycle[step % len(self.cycle)]


def cycle_ratio(D, T, cycle: Sequence[int]) -> float:
    nxt = list(cycle[1:]) + [cycle[0]]
    d = sum(D[i, j] for i, j in zip(cycle, nxt))
    t = sum(T[i, j] for i, j in zip(cycle, nxt))
    return float(d / t)


def _negative_cycle(W: np.ndarray, valid: np.ndarray, tol: float) -> Optional[List[int]]:
    """A cycle of total weight below ``-tol``, if Bellman-Ford finds one."""
    n = W.shape[0]
    Wm = np.where(valid, W, np.inf)
    dist = np.zeros(n)
    pred = np.full(n, -1)
    for it in range(n + 1):
        cand = dist[:, None] + Wm
        src = np.argmin(cand, axis=0)
        best = cand[src, np.arange(n)]
        improved = best < dist - tol
        if not improved.any():
            return None
        dist = np.where(improved, best, dist)
        pred = np.where(improved, src, pred)
        if it >= n - 1:
            break
    # walk predecessors from an updated node to land on the cycle
    v = int(np.flatnonzero(improved)[0])
    for _ in range(n):
        v = int(pred[v])
    cyc = [v]
    u = int(pred[v])
    while u != v:
        cyc.append(u)
        u = int(pred[u])
        if len(cyc) > n:
            return None
    cyc.reverse()
    return cyc


def _canonical(cycle: Sequence[int]) -> Tuple[int, ...]:
    k = min(range(len(cycle)), key=lambda i: cycle[i])
    return tuple(cycle[k:]) + tuple(cycle[:k])


def _shortest_tight_cycle(W: np.ndarray, valid: np.ndarray, tol: float) -> Optional[Tuple[int, ...]]:
    """Shortest closed walk of reduced weight ``<= tol``, lexicographically smallest.

    At the optimum every cycle has non-negative reduced weight, so the
    shortest tight closed walk is a simple cycle.
    """
    n = W.shape[0]
    Wm = np.where(valid, W, np.inf)
    # walks[k][v, s]: min weight of a k-edge walk from v to s
    walks = [None, Wm]
    for L in range(1, n + 1):
        if L > 1:
            walks.append(np.min(Wm[:, :, None] + walks[L - 1][None, :, :], axis=1))
        diag = np.diag(walks[L])
        starts = np.flatnonzero(diag <= tol)
        if starts.size == 0:
            continue
        s = int(starts[0])
        cyc = [s]
        acc = 0.0
        u = s
        for step in range(1, L):
            rest = walks[L - step]
            for v in range(n):
                if acc + Wm[u, v] + rest[v, s] <= tol:
                    acc += Wm[u, v]
                    cyc.append(v)
                    u = v
                    break
        return tuple(cyc)
    return None


def max_ratio_cycle(graph, T=None, excluded=None, tol: float = 1e-10) -> CyclicStrategy:
    """Cycle maximizing ``sum D / sum T`` over the edges of the query graph.

    Accepts a :class:`QueryGraph` or raw ``(D, T)`` arrays.  A binary search on
    ``lambda`` tests for negative cycles of ``lambda T - D``; every cycle found
    lifts the lower bound to its own ratio.  Among optimal cycles the shortest
    one, then the smallest node sequence, is returned.
    """
    if isinstance(graph, QueryGraph):
        D, T, excl, pats = graph.D, graph.T, graph.excluded, graph.patterns
    else:
        D = np.asarray(graph, dtype=float)
        T = np.asarray(T, dtype=float)
        excl = np.zeros(D.shape, bool) if excluded is None else np.asarray(excluded, bool)
        pats = ()
    valid = ~excl & np.isfinite(D) & np.isfinite(T)
    if not valid.any():
        raise NoFiniteCycle("all edges are excluded")
    if np.any(T[valid] <= 0):
        raise ValueError("edge times must be positive")
    Dz = np.where(valid, D, 0.0)
    Tz = np.where(valid, T, 1.0)
    scale = max(1.0, float(np.max(np.abs(Dz))), float(np.max(Tz)))
    ratios = Dz / Tz

    # incumbent: a cycle found below every possible ratio
    floor = float(ratios[valid].min()) - 1.0
    best = _negative_cycle(floor * Tz - Dz, valid, 0.0)
    if best is None:
        raise NoFiniteCycle("graph has no cycle")
    lo = cycle_ratio(Dz, Tz, best)
    hi = float(ratios[valid].max())
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        cyc = _negative_cycle(mid * Tz - Dz, valid, 1e-14 * scale)
        if cyc is None:
            hi = mid
        else:
            r = cycle_ratio(Dz, Tz, cyc)
            if r > lo:
                best, lo = cyc, r
            else:
                hi = mid
    # polish: jump to strictly better cycles until none remains
    for _ in range(D.shape[0] ** 2 + 1):
        cyc = _negative_cycle(lo * Tz - Dz, valid, 1e-12 * scale)
        if cyc is None:
            break
        r = cycle_ratio(Dz, Tz, cyc)
        if r <= lo:
            break
        best, lo = cyc, r

    tight = _shortest_tight_cycle(lo * Tz - Dz, valid, 1e-9 * scale)
    if tight is not None and cycle_ratio(Dz, Tz, tight) >= lo - 1e-9 * max(1.0, abs(lo)):
        best = tight
    best = _canonical(best)
    return CyclicStrategy(best, cycle_ratio(Dz, Tz, best), tuple(pats))


# ---------------------------------------------------------------------------
# policies used by the test engine


class Policy:
    """Chooses the next query index.  Stateless between runs."""

    name = "policy"

    def choose(self, model, key, belief: float, step: int, rng: np.random.Generator) -> int:
        raise NotImplementedError


class StaticPolicy(Policy):
    name = "static"

    def __init__(self, index: int):
        self.index = index

    def choose(self, model, key, belief, step, rng):
        return self.index


class FixedPolicy(StaticPolicy):
    name = "fixed"


class CyclicPolicy(Policy):
    name = "cyclic"

    def __init__(self, strategy: CyclicStrategy):
        self.strategy = strategy

    def choose(self, model, key, belief, step, rng):
        return self.strategy.node_at(step)


class AdaptivePolicy(Policy):
    name = "adaptive"

    def choose(self, model, key, belief, step, rng):
        kl, e1, e2 = model.stats(key)
        return argmax_efficiency(model.patterns, kl, e1, e2, belief)


class RandomPolicy(Policy):
    name = "random"

    def choose(self, model, key, belief, step, rng):
        return int(rng.integers(len(model.patterns)))
