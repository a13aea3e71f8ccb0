"""Sequential test runner, replay and batch experiment drivers."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .hitpmf import DEFAULT_EPSILON
from .inference import Decision, ExactHitModel, clamp_belief, decide
from .patterns import QueryPattern, query_set, stream_hit
from .sources import HypothesisPair, SourceModel, draw_switch
from .strategy import (AdaptivePolicy, CyclicPolicy, FixedPolicy, Policy, RandomPolicy, StaticPolicy,
                       argmax_efficiency, build_query_graph, max_ratio_cycle)

POLICIES = ("static", "cyclic", "adaptive", "random", "fixed")


class StopReason(enum.Enum):
    THRESHOLD = "threshold"
    QUERY_BUDGET = "query_budget"
    SYMBOL_BUDGET = "symbol_budget"


@dataclass(frozen=True)
class TestConfig:
    hypotheses: HypothesisPair
    policy: str = "adaptive"
    m: int = 3
    eps_t: float = 0.01
    max_queries: int = 10
    max_symbols: int = 20
    seed: Optional[int] = None
    fixed_pattern: Optional[str] = None
    epsilon: float = DEFAULT_EPSILON

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if not 0.0 < self.eps_t < 0.5:
            raise ValueError("eps_t must lie in (0, 0.5)")
        if self.m < 1 or self.max_queries < 1 or self.max_symbols < 1:
            raise ValueError("m and budgets must be >= 1")
        if self.policy == "fixed":
            if self.fixed_pattern is None:
                raise ValueError("fixed policy needs a pattern")
            if len(QueryPattern.parse(self.fixed_pattern)) != self.m:
                raise ValueError("fixed pattern length must equal m")

    @property
    def prior(self) -> float:
        return self.hypotheses.prior


@dataclass(frozen=True)
class TestOutcome:
    decision: int
    truth: int
    belief_trajectory: Tuple[float, ...]
    queries_sent: Tuple[str, ...]
    hit_times: Tuple[Tuple[int, bool], ...]
    total_symbols: int
    stopped_by: StopReason

    __test__ = False

    @property
    def correct(self) -> bool:
        return self.decision == self.truth

    def to_dict(self) -> dict:
        return {
            "decision": self.decision,
            "truth": self.truth,
            "belief_trajectory": [float(b) for b in self.belief_trajectory],
            "queries_sent": list(self.queries_sent),
            "hit_times": [{"delta_t": int(d), "censored": bool(c)} for d, c in self.hit_times],
            "total_symbols": int(self.total_symbols),
            "stopped_by": self.stopped_by.value,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def build_model(config: TestConfig, patterns: Optional[Sequence[QueryPattern]] = None) -> ExactHitModel:
    h = config.hypotheses
    pats = list(patterns) if patterns is not None else query_set(h.p1.n_symbols, config.m)
    return ExactHitModel(h.p1, h.p2, pats, config.epsilon)


def make_policy(config: TestConfig, model) -> Policy:
    """Policy object for ``config``; expensive parts (cycle search) are done here."""
    name = config.policy
    if name == "adaptive":
        return AdaptivePolicy()
    if name == "random":
        return RandomPolicy()
    if name == "fixed":
        return FixedPolicy(model.patterns.index(QueryPattern.parse(config.fixed_pattern)))
    h = config.hypotheses
    markov = isinstance(model, ExactHitModel) and "markov" in (h.p1.kind, h.p2.kind)
    if name == "static" and not markov:
        kl, e1, e2 = model.stats(model.start_key(None))
        return StaticPolicy(argmax_efficiency(model.patterns, kl, e1, e2, h.prior))
    if not isinstance(model, ExactHitModel):
        raise ValueError("cyclic policy needs exact hit-time laws")
    graph = build_query_graph(h.p1, h.p2, config.m, h.prior, model=model)
    return CyclicPolicy(max_ratio_cycle(graph))


def run_test(config: TestConfig, model=None, rng: Optional[np.random.Generator] = None,
             policy: Optional[Policy] = None, truth: Optional[int] = None) -> TestOutcome:
    """One sequential test: draw the switch, then query until a decision or a budget trips.

    ``model`` is an :class:`ExactHitModel` or an ``EmpiricalHitModel`` over the
    candidate patterns; it defaults to exact laws for ``config``.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if model is None:
        model = build_model(config)
    if policy is None:
        policy = make_policy(config, model)
    h = config.hypotheses
    if truth is None:
        truth = draw_switch(h.prior, rng)
    source = h.p1 if truth == 1 else h.p2
    cursor = source.cursor(rng, budget=config.max_symbols)

    belief = clamp_belief(h.prior)
    trajectory = [belief]
    queries: List[str] = []
    hits: List[Tuple[int, bool]] = []
    previous = None
    stopped = None
    while True:
        verdict = decide(belief, config.eps_t)
        if verdict is not Decision.CONTINUE:
            stopped = StopReason.THRESHOLD
            break
        if len(queries) >= config.max_queries:
            stopped = StopReason.QUERY_BUDGET
            break
        left = cursor.remaining
        if left is not None and left <= 0:
            stopped = StopReason.SYMBOL_BUDGET
            break
        key = model.start_key(previous)
        idx = policy.choose(model, key, belief, len(queries), rng)
        pattern = model.patterns[idx]
        rec = stream_hit(cursor, pattern)
        belief = model.update(belief, key, idx, rec.delta_t, rec.censored)
        trajectory.append(belief)
        queries.append(str(pattern))
        hits.append((rec.delta_t, rec.censored))
        previous = pattern
        if rec.censored:
            verdict = decide(belief, config.eps_t)
            stopped = StopReason.THRESHOLD if verdict is not Decision.CONTINUE else StopReason.SYMBOL_BUDGET
            break
    if stopped is StopReason.THRESHOLD:
        decision = 1 if verdict is Decision.DECLARE_1 else 2
    else:
        decision = 1 if belief >= 0.5 else 2
    return TestOutcome(decision, truth, tuple(trajectory), tuple(queries), tuple(hits),
                       int(cursor.t), stopped)


def replay(outcome: TestOutcome, model, prior: float) -> List[float]:
    """Belief trajectory recomputed from the recorded queries and hit times."""
    belief = clamp_belief(prior)
    out = [belief]
    previous = None
    for q, (dt, censored) in zip(outcome.queries_sent, outcome.hit_times):
        pattern = QueryPattern.parse(q)
        key = model.start_key(previous)
        belief = model.update(belief, key, model.patterns.index(pattern), dt, censored)
        out.append(belief)
        previous = pattern
    return out


# ---------------------------------------------------------------------------
# batches


@dataclass
class BatchMetrics:
    """Aggregates over the runs of one grid cell.

    ``alpha`` and ``beta`` condition on the drawn truth (``nan`` when that
    truth never came up).  ``beta_rb`` is a lower-variance estimate of ``beta``
    that weights every declare-1 run by its final posterior of hypothesis 2;
    it is only meaningful with exact laws.
    """

    label: str
    policy: str
    n: int = 0
    n1: int = 0
    n2: int = 0
    errors1: int = 0
    errors2: int = 0
    sum_symbols: float = 0.0
    sum_queries: float = 0.0
    sum_rb: float = 0.0
    prior: float = 0.5
    mu_star: float = float("nan")
    params: Dict[str, float] = field(default_factory=dict)

    def add(self, outcome: TestOutcome) -> None:
        self.n += 1
        if outcome.truth == 1:
            self.n1 += 1
            self.errors1 += outcome.decision != 1
        else:
            self.n2 += 1
            self.errors2 += outcome.decision != 2
        self.sum_symbols += outcome.total_symbols
        self.sum_queries += len(outcome.queries_sent)
        if outcome.decision == 1:
            self.sum_rb += 1.0 - outcome.belief_trajectory[-1]

    @property
    def correct(self) -> int:
        return self.n - self.errors1 - self.errors2

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else float("nan")

    @property
    def alpha(self) -> float:
        return self.errors1 / self.n1 if self.n1 else float("nan")

    @property
    def beta(self) -> float:
        return self.errors2 / self.n2 if self.n2 else float("nan")

    @property
    def beta_rb(self) -> float:
        return self.sum_rb / (self.n * (1.0 - self.prior)) if self.n and self.prior < 1 else float("nan")

    @property
    def prior_weighted_accuracy(self) -> float:
        """``1 - (prior alpha + (1 - prior) beta)``; needs both truths sampled."""
        return 1.0 - (self.prior * self.alpha + (1.0 - self.prior) * self.beta)

    @property
    def mean_symbols(self) -> float:
        return self.sum_symbols / self.n if self.n else float("nan")

    @property
    def mean_queries(self) -> float:
        return self.sum_queries / self.n if self.n else float("nan")

    def row(self) -> dict:
        out = dict(self.params)
        out.update(policy=self.policy, accuracy=self.accuracy,
                   weighted_accuracy=self.prior_weighted_accuracy, mean_symbols=self.mean_symbols,
                   mean_queries=self.mean_queries, alpha=self.alpha, beta=self.beta, n=self.n,
                   n1=self.n1, n2=self.n2)
        return out


def run_seed(seed: int, cell: int, run: int) -> np.random.Generator:
    """Generator for run ``run`` of cell ``cell``; independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cell, run)))


def run_cell(config: TestConfig, runs: int, seed: int, cell: int = 0, model=None,
             label: str = "", params: Optional[dict] = None) -> BatchMetrics:
    if runs < 1:
        raise ValueError("runs_per_cell must be >= 1")
    if model is None:
        model = build_model(config)
    policy = make_policy(config, model)
    metrics = BatchMetrics(label=label, policy=config.policy, prior=config.prior, params=dict(params or {}))
    for r in range(runs):
        metrics.add(run_test(config, model, run_seed(seed, cell, r), policy))
    return metrics


def run_batch(configs: Sequence[TestConfig], runs_per_cell: int, seed: int = 0,
              labels: Optional[Sequence[str]] = None,
              params: Optional[Sequence[dict]] = None) -> List[BatchMetrics]:
    """Run every config ``runs_per_cell`` times with per-(cell, run) RNG substreams."""
    out = []
    for i, cfg in enumerate(configs):
        out.append(run_cell(cfg, runs_per_cell, seed, i,
                            label=labels[i] if labels else "",
                            params=params[i] if params else None))
    return out


def exponent_diagnostic(p1: SourceModel, p2: SourceModel, m: int, prior: float = 0.5,
                        epsilon: float = DEFAULT_EPSILON):
    """Largest achievable error exponent and the cycle attaining it."""
    graph = build_query_graph(p1, p2, m, prior, epsilon)
    strat = max_ratio_cycle(graph)
    return strat.mu, strat
