import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import geometric_kl, scripted_bayes
from queryhit.hitpmf import hit_time_pmf, hit_time_pmf_iid
from queryhit.inference import (CLAMP, AbsoluteContinuityViolation, BothLikelihoodsZero, Decision,
                                ExactHitModel, QueryStats, bayes_update, bayes_update_log,
                                clamp_belief, decide, efficiency_ratio, efficiency_ratios,
                                general_prior_posterior, kl_bits, kl_divergence, query_stats)
from queryhit.patterns import QueryPattern, query_set
from queryhit.sources import make_bernoulli, make_iid, make_markov_persistent

Q = QueryPattern.parse


class TestKl:
    def test_identical(self):
        pmf = hit_time_pmf_iid(Q("101"), [0.4, 0.6])
        assert kl_divergence(pmf, pmf) == 0.0

    def test_geometric_closed_form(self):
        a = hit_time_pmf_iid(Q("1"), [0.5, 0.5], epsilon=1e-9)
        b = hit_time_pmf_iid(Q("1"), [0.75, 0.25], epsilon=1e-9)
        assert b.t_max >= a.t_max
        got = kl_divergence(a, b)
        assert got == pytest.approx(geometric_kl(0.5, 0.25), abs=1e-4)
        assert geometric_kl(0.5, 0.25) == pytest.approx(0.2877, abs=1e-4)

    def test_two_point(self):
        assert kl_divergence([0.9, 0.1], [0.1, 0.9]) == pytest.approx(0.8 * np.log(9), abs=1e-9)

    def test_violation(self):
        with pytest.raises(AbsoluteContinuityViolation):
            kl_divergence([0.5, 0.5], [1.0, 0.0])

    def test_zero_padding(self):
        assert kl_divergence([1.0], [0.5, 0.5]) == pytest.approx(np.log(2))

    def test_bits(self):
        assert kl_bits(np.log(2)) == pytest.approx(1.0)

    def test_log_scale_far_tail(self):
        # second law underflows in linear scale where the first still has mass
        a = hit_time_pmf(Q("111"), make_bernoulli(0.1))
        b = hit_time_pmf(Q("111"), make_bernoulli(0.9), t_max=a.t_max)
        d = kl_divergence(a, b)
        assert np.isfinite(d) and d > 100

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.01, 1), min_size=2, max_size=8), st.lists(st.floats(0.01, 1), min_size=2, max_size=8))
    def test_nonnegative(self, a, b):
        n = min(len(a), len(b))
        p = np.array(a[:n]) / sum(a[:n])
        q = np.array(b[:n]) / sum(b[:n])
        d = kl_divergence(p, q)
        assert d >= 0
        if d < 1e-12:
            np.testing.assert_allclose(p, q, atol=1e-5)


class TestEfficiency:
    def test_arithmetic(self):
        assert efficiency_ratio(QueryStats(Q("1"), 1.0, 2.0, 4.0), 0.5) == pytest.approx(1 / 3)

    def test_boundary(self):
        assert efficiency_ratio(QueryStats(Q("1"), 1.5, 3.0, 9.0), 1.0) == pytest.approx(0.5)

    def test_monotone_unless_equal_times(self):
        pis = np.linspace(0, 1, 21)
        nu = [efficiency_ratio(QueryStats(Q("1"), 1.0, 2.0, 5.0), p) for p in pis]
        assert np.all(np.diff(nu) > 0)
        flat = [efficiency_ratio(QueryStats(Q("1"), 1.0, 3.0, 3.0), p) for p in pis]
        np.testing.assert_allclose(flat, flat[0])

    def test_vectorized_inf_and_nan(self):
        nu = efficiency_ratios([np.inf, np.nan, 1.0], [np.inf, np.nan, 2.0], [2.0, np.nan, 2.0], 0.5)
        assert nu[0] == np.inf and np.isnan(nu[1]) and nu[2] == pytest.approx(0.5)

    def test_query_stats(self):
        a = hit_time_pmf_iid(Q("11"), [0.5, 0.5])
        s = query_stats(Q("11"), a, a)
        assert s.kl == 0 and s.e1 == pytest.approx(6.0, abs=1e-6)


class TestBayes:
    def test_uninformative(self):
        assert bayes_update(0.3, 0.2, 0.2) == pytest.approx(0.3)

    def test_arithmetic(self):
        assert bayes_update(0.5, 0.2, 0.1) == pytest.approx(2 / 3)

    def test_clamped_floor_against_evidence_for_two(self):
        for ratio in (1.0, 1e-3, 1e-10):
            assert bayes_update(CLAMP, ratio, 1.0) <= CLAMP * max(ratio, 1.0) * (1 + 1e-9)
        assert bayes_update(CLAMP, 1e-6, 1.0) == CLAMP

    def test_clamp_is_not_absorbing(self):
        # strong evidence lifts a belief sitting at the clamp
        assert bayes_update(CLAMP, 1e10, 1.0) == pytest.approx(1e-2 / (1 + 1e-2), rel=1e-6)

    def test_both_zero(self):
        with pytest.raises(BothLikelihoodsZero):
            bayes_update(0.5, 0.0, 0.0)
        with pytest.raises(BothLikelihoodsZero):
            bayes_update_log(0.5, -np.inf, -np.inf)

    def test_negative(self):
        with pytest.raises(ValueError):
            bayes_update(0.5, -0.1, 0.2)

    def test_log_matches_linear(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            pi, a, b = rng.random(3)
            assert bayes_update_log(pi, np.log(a), np.log(b)) == pytest.approx(bayes_update(pi, a, b), rel=1e-12)

    def test_scripted_trace(self):
        rng = np.random.default_rng(4)
        l1, l2 = rng.random(30), rng.random(30)
        pi = 0.4
        got = [pi]
        for a, b in zip(l1, l2):
            pi = bayes_update(pi, a, b)
            got.append(pi)
        np.testing.assert_allclose(got, scripted_bayes(0.4, l1, l2), rtol=1e-12)

    def test_order_independence(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            n = int(rng.integers(1, 12))
            l1, l2 = rng.uniform(0.05, 1, n), rng.uniform(0.05, 1, n)
            prior = rng.uniform(0.05, 0.95)
            seq = prior
            for a, b in zip(l1, l2):
                seq = bayes_update(seq, a, b)
            perm = rng.permutation(n)
            alt = prior
            for a, b in zip(l1[perm], l2[perm]):
                alt = bayes_update(alt, a, b)
            lr = np.prod(l1 / l2)
            direct = prior * lr / (prior * lr + 1 - prior)
            assert seq == pytest.approx(direct, rel=1e-9)
            assert alt == pytest.approx(direct, rel=1e-9)


class TestGeneralPrior:
    def test_base_cases(self):
        assert general_prior_posterior(0.73, 0.5) == pytest.approx(0.73)
        assert general_prior_posterior(0.5, 0.21) == pytest.approx(0.21)

    def test_equals_bayes(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            l1, l2 = rng.uniform(1e-3, 1, 2)
            s = rng.uniform(0.01, 0.99)
            assert general_prior_posterior(l1 / (l1 + l2), s) == pytest.approx(bayes_update(s, l1, l2), rel=1e-9)

    def test_extremes_clamped(self):
        assert 0 < general_prior_posterior(0.0, 0.5) < 1e-11
        assert 1 - 1e-11 < general_prior_posterior(1.0, 0.5) < 1

    def test_bad_prior(self):
        with pytest.raises(ValueError):
            general_prior_posterior(0.5, 1.2)


class TestDecide:
    @pytest.mark.parametrize("pi, want", [(0.995, Decision.DECLARE_1), (0.5, Decision.CONTINUE),
                                          (0.005, Decision.DECLARE_2)])
    def test_examples(self, pi, want):
        assert decide(pi, 0.01) is want

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            decide(0.5, 0.5)

    def test_clamp(self):
        assert clamp_belief(0.0) == CLAMP and clamp_belief(1.0) == 1 - CLAMP


class TestExactHitModel:
    def test_iid_stats_ignore_context(self):
        m = ExactHitModel(make_bernoulli(0.3), make_bernoulli(0.7), query_set(2, 2))
        a = m.stats(m.start_key(None))
        b = m.stats(m.start_key(Q("01")))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_markov_stats_depend_on_context(self):
        m = ExactHitModel(make_markov_persistent(0.2), make_markov_persistent(0.8), query_set(2, 2))
        k0 = m.stats(m.start_key(Q("00")))[1]
        k1 = m.stats(m.start_key(Q("01")))[1]
        assert not np.allclose(k0, k1)

    def test_one_sided_impossible(self):
        m = ExactHitModel(make_iid([1.0, 0.0]), make_iid([0.5, 0.5]), query_set(2, 1))
        kl, e1, e2 = m.stats(m.start_key(None))
        assert kl[1] == np.inf and e1[1] == np.inf and np.isfinite(e2[1])
        # one hit of "1" settles the test
        assert m.update(0.5, m.start_key(None), 1, 3) == CLAMP

    def test_both_impossible_excluded(self):
        m = ExactHitModel(make_iid([1.0, 0.0]), make_iid([1.0, 0.0]), query_set(2, 1))
        kl = m.stats(m.start_key(None))[0]
        assert np.isnan(kl[1])

    def test_censored_uses_survival(self):
        m = ExactHitModel(make_bernoulli(0.2), make_bernoulli(0.8), query_set(2, 1))
        l1, l2 = m.likelihoods(m.start_key(None), 1, 3, censored=True)
        assert l1 == pytest.approx(0.8 ** 3) and l2 == pytest.approx(0.2 ** 3)

    def test_beyond_both_horizons(self):
        m = ExactHitModel(make_bernoulli(0.5), make_bernoulli(0.6), query_set(2, 1))
        key = m.start_key(None)
        a, b = m.pmfs(key, 1)
        post = m.update(0.5, key, 1, a.t_max + 50)
        assert 0 < post < 1
