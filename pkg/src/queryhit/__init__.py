"""Query/Hit sequential hypothesis testing.

A tester tells two candidate sources apart by sending query patterns to a stream
holder and observing only how long each pattern takes to appear.
"""

__version__ = "0.1.0"

from .hitpmf import HitTimePmf, hit_time_pmf, hit_time_pmf_iid, hit_time_pmf_markov, paired_pmfs
from .inference import (Decision, ExactHitModel, bayes_update, decide, efficiency_ratio,
                        general_prior_posterior, kl_divergence, query_stats)
from .patterns import QueryPattern, build_failure_function, query_set, stream_hit
from .sources import (HypothesisPair, SourceModel, make_bernoulli, make_iid, make_markov,
                      make_markov_persistent, make_trace)
from .strategy import build_query_graph, max_ratio_cycle, optimal_static_query_iid

__all__ = [
    "HitTimePmf", "hit_time_pmf", "hit_time_pmf_iid", "hit_time_pmf_markov", "paired_pmfs",
    "Decision", "ExactHitModel", "bayes_update", "decide", "efficiency_ratio",
    "general_prior_posterior", "kl_divergence", "query_stats", "QueryPattern",
    "build_failure_function", "query_set", "stream_hit", "HypothesisPair", "SourceModel",
    "make_bernoulli", "make_iid", "make_markov", "make_markov_persistent", "make_trace",
    "build_query_graph", "max_ratio_cycle", "optimal_static_query_iid",
]
