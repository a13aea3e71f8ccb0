import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import geometric_kl
from queryhit.hitpmf import hit_time_pmf_iid, paired_pmfs
from queryhit.inference import kl_divergence
from queryhit.patterns import QueryPattern, query_set
from queryhit.sources import make_bernoulli, make_trace
from queryhit.estimation import (EmpiricalHitModel, HitHistogram, InsufficientTrace, TrainingTrace,
                                 build_histogram, estimate_expected_hit_time, estimate_kl,
                                 histogram_kl, hit_times_from, occurrence_starts,
                                 posterior_from_histograms, sample_hit_times)

Q = QueryPattern.parse


def bern_trace(p, n, seed):
    return (np.random.default_rng(seed).random(n) < p).astype(np.int64)


class TestSampling:
    def test_periodic(self):
        trace = np.tile([0, 1], 50)
        x = sample_hit_times(trace, Q("01"), 5000, np.random.default_rng(0))
        assert set(np.unique(x)) <= {2, 3}
        # direct scan: even offsets give 2, odd offsets give 3 (the final odd offset is censored)
        assert x.mean() == pytest.approx(2.5, abs=0.05)

    def test_constant_trace(self):
        with pytest.raises(InsufficientTrace):
            sample_hit_times(np.ones(100, int), Q("0"), 10, np.random.default_rng(0))

    def test_too_short(self):
        with pytest.raises(InsufficientTrace):
            sample_hit_times([0, 1], Q("01"), 10, np.random.default_rng(0))

    def test_iid_mean(self):
        x = sample_hit_times(bern_trace(0.5, 100_000, 1), Q("11"), 10_000, np.random.default_rng(2))
        assert x.mean() == pytest.approx(6.0, abs=0.2)

    def test_hit_times_from_scan(self):
        sym = np.array([1, 0, 1, 1, 0, 1, 1])
        np.testing.assert_array_equal(occurrence_starts(sym, Q("11")), [2, 5])
        # offset 6 sees only the last symbol: censored
        np.testing.assert_array_equal(hit_times_from(sym, Q("11"), [0, 1, 3, 4, 6]), [4, 3, 4, 3, 0])

    def test_trace_inputs_equivalent(self):
        sym = bern_trace(0.4, 2000, 3)
        a = sample_hit_times(sym, Q("10"), 100, np.random.default_rng(4))
        b = sample_hit_times(make_trace(sym), Q("10"), 100, np.random.default_rng(4))
        c = sample_hit_times(TrainingTrace(sym, 1), Q("10"), 100, np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, c)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            TrainingTrace(np.zeros(5, int), 3)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_deterministic_given_seed(self, seed):
        sym = bern_trace(0.5, 3000, 9)
        a = sample_hit_times(sym, Q("101"), 200, np.random.default_rng(seed))
        b = sample_hit_times(sym, Q("101"), 200, np.random.default_rng(seed))
        np.testing.assert_array_equal(a, b)
        assert np.all(a >= 3)


class TestHistogram:
    def test_smoothing_and_normalization(self):
        h = build_histogram([2, 2, 3], m=2, cut=3, tail="overflow")
        # bins 2, 3 and overflow carry pseudo-count 1, bin 1 is impossible
        np.testing.assert_allclose(h.body, [0, 3 / 6, 2 / 6])
        assert h.tail_mass == pytest.approx(1 / 6)
        assert h.prob(1) == 0 and h.prob(50) == pytest.approx(1 / 6)

    def test_geometric_tail_sums_to_one(self):
        x = np.random.default_rng(0).geometric(0.1, 5000)
        h = build_histogram(x)
        assert h.dense(h.horizon()).sum() == pytest.approx(1.0, abs=1e-9)
        assert h.survival(h.cut) == pytest.approx(h.tail_mass)
        assert h.survival(0) == 1.0

    def test_posterior_in_open_interval(self):
        rng = np.random.default_rng(1)
        h1 = build_histogram(rng.geometric(0.3, 2000))
        h2 = build_histogram(rng.geometric(0.7, 2000))
        model = EmpiricalHitModel.from_histograms([Q("1")], [(h1, h2)])
        for t in (1, 2, 5, 40, 10_000):
            assert 0 < posterior_from_histograms(model, Q("1"), t) < 1

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            build_histogram([1, 2], smoothing=-1)
        with pytest.raises(ValueError):
            build_histogram([1, 2], tail="flat")
        with pytest.raises(InsufficientTrace):
            build_histogram([])


class TestPluginConsistency:
    def test_exact_pmfs_recover_kl(self):
        for q in query_set(2, 2):
            a, b = paired_pmfs(q, make_bernoulli(0.3), make_bernoulli(0.7))
            model = EmpiricalHitModel.from_histograms([q], [(HitHistogram.from_pmf(a), HitHistogram.from_pmf(b))])
            assert estimate_kl(model, q) == pytest.approx(kl_divergence(a, b), rel=1e-12, abs=1e-15)

    def test_exact_pmfs_posterior(self):
        a, b = paired_pmfs(Q("11"), make_bernoulli(0.3), make_bernoulli(0.7))
        model = EmpiricalHitModel.from_histograms([Q("11")], [(HitHistogram.from_pmf(a), HitHistogram.from_pmf(b))])
        for t in (2, 3, 7, 20):
            l1, l2 = a.prob(t), b.prob(t)
            assert posterior_from_histograms(model, Q("11"), t) == pytest.approx(l1 / (l1 + l2), rel=1e-12)

    def test_equal_histograms_give_half(self):
        h = build_histogram([1, 2, 2, 3])
        model = EmpiricalHitModel.from_histograms([Q("1")], [(h, h)])
        assert posterior_from_histograms(model, Q("1"), 2) == pytest.approx(0.5)

    def test_mean_of_single_sample(self):
        model = EmpiricalHitModel.from_histograms([Q("1")], [(build_histogram([7]), build_histogram([4]))])
        assert estimate_expected_hit_time(model, Q("1"), 1) == 7.0
        assert estimate_expected_hit_time(model, Q("1"), 2) == 4.0
        with pytest.raises(ValueError):
            estimate_expected_hit_time(model, Q("1"), 3)


class TestEstimators:
    def test_identical_traces(self):
        trace = bern_trace(0.5, 100_000, 5)
        model = EmpiricalHitModel(trace, trace, query_set(2, 2), 10_000, np.random.default_rng(6))
        for q in query_set(2, 2):
            assert estimate_kl(model, q) <= 0.02

    def test_single_symbol_kl(self):
        model = EmpiricalHitModel(bern_trace(0.3, 100_000, 7), bern_trace(0.7, 100_000, 8), [Q("1")],
                                  10_000, np.random.default_rng(9))
        assert estimate_kl(model, Q("1")) == pytest.approx(geometric_kl(0.3, 0.7), rel=0.15)

    def test_kac_mean(self):
        model = EmpiricalHitModel(bern_trace(0.5, 100_000, 10), bern_trace(0.5, 100_000, 11), [Q("1")],
                                  10_000, np.random.default_rng(12))
        assert estimate_expected_hit_time(model, Q("1"), 1) == pytest.approx(2.0, abs=0.05)

    def test_periodic_mean(self):
        trace = np.tile([0, 1], 50)
        model = EmpiricalHitModel(trace, trace, [Q("01")], 20_000, np.random.default_rng(13))
        # 50 offsets with time 2, 49 with time 3
        assert estimate_expected_hit_time(model, Q("01"), 1) == pytest.approx((50 * 2 + 49 * 3) / 99, abs=0.02)

    def test_deterministic(self):
        a, b = bern_trace(0.3, 20_000, 14), bern_trace(0.6, 20_000, 15)
        s1 = EmpiricalHitModel(a, b, query_set(2, 2), 1000, np.random.default_rng(3)).stats()
        s2 = EmpiricalHitModel(a, b, query_set(2, 2), 1000, np.random.default_rng(3)).stats()
        for x, y in zip(s1, s2):
            np.testing.assert_array_equal(x, y)

    def test_consistency_with_trace_length(self):
        pats = query_set(2, 2)
        exact = []
        for q in pats:
            a, b = paired_pmfs(q, make_bernoulli(0.3), make_bernoulli(0.7))
            exact.append((kl_divergence(a, b), a.mean()))
        exact = np.array(exact)
        errors = []
        for n in (1_000, 10_000, 100_000):
            err = []
            for seed in range(5):
                model = EmpiricalHitModel(bern_trace(0.3, n, 100 + seed), bern_trace(0.7, n, 200 + seed), pats,
                                          n, np.random.default_rng(seed))
                kl, e1, _ = model.stats()
                err.append(np.abs(np.column_stack([kl, e1]) - exact) / exact.clip(min=0.02))
            errors.append(np.median(np.array(err), axis=(0, 1)))
        errors = np.array(errors)
        assert np.all(np.diff(errors, axis=0) < 0), errors

    def test_overflow_mode_shares_cut(self):
        model = EmpiricalHitModel(bern_trace(0.3, 20_000, 1), bern_trace(0.7, 20_000, 2), [Q("11")], 2000,
                                  np.random.default_rng(0), tail="overflow")
        h1, h2 = model.histograms[0]
        assert h1.cut == h2.cut and h1.tail_rate is None
        assert np.isfinite(histogram_kl(h1, h2))

    def test_censored_update_uses_survival(self):
        h1 = HitHistogram.from_pmf(hit_time_pmf_iid(Q("1"), [0.7, 0.3]))
        h2 = HitHistogram.from_pmf(hit_time_pmf_iid(Q("1"), [0.3, 0.7]))
        model = EmpiricalHitModel.from_histograms([Q("1")], [(h1, h2)])
        post = model.update(0.5, None, 0, 3, censored=True)
        assert post == pytest.approx(0.7 ** 3 / (0.7 ** 3 + 0.3 ** 3), rel=1e-6)
