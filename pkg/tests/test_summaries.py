import math

import numpy as np
import pytest

from platelet_abc import (
    DataFormatError,
    DepositionSeries,
    SummaryStatistics,
    SummaryVector,
    bhattacharyya_rho,
    discrepancy,
    discrepancy_from_summaries,
    summarize,
)
from platelet_abc.summaries import PAIRS, SIGMA_FLOOR, SUMMARY_NAMES

from conftest import rng_of


def series_from_matrix(data: np.ndarray) -> DepositionSeries:
    data = np.asarray(data, dtype=float)
    return DepositionSeries(
        times=np.arange(len(data), dtype=float),
        s_agg=data[:, 0], n_agg=data[:, 1], n_plt=data[:, 2], n_act=data[:, 3],
    )


def random_series(rng, t=5) -> DepositionSeries:
    return series_from_matrix(rng.random((t, 4)) * 100)


class TestSummarize:
    def test_constant_series_degenerate_rule(self):
        data = np.column_stack([
            np.full(5, 7.0), np.arange(5.0), np.arange(5.0) * 2, np.arange(5.0) + 1,
        ])
        s = summarize(series_from_matrix(data))
        assert s.mu[0] == 7.0
        assert s.sigma[0] == 0.0
        assert s.ac[0] == 0.0   # zero-variance operand -> 0

    def test_affine_pair_perfect_correlation(self):
        x = np.array([1.0, 3.0, 2.0, 5.0, 4.0])
        data = np.column_stack([x, 2 * x + 3, x[::-1], x + 1])
        s = summarize(series_from_matrix(data))
        pair_index = PAIRS.index((0, 1))
        assert s.c[pair_index] == pytest.approx(1.0, abs=1e-12)

    def test_linear_ramp_hand_values(self):
        # series (1,2,3,4,5): mean 3, population variance 2, lag-1 ac 1
        ramp = np.arange(1.0, 6.0)
        data = np.column_stack([ramp, ramp[::-1], ramp * 2, ramp + 5])
        s = summarize(series_from_matrix(data))
        assert s.mu[0] == pytest.approx(3.0)
        assert s.sigma[0] == pytest.approx(2.0)
        assert s.ac[0] == pytest.approx(1.0)

    def test_too_short_series_rejected(self):
        with pytest.raises(DataFormatError, match="length >= 3"):
            summarize(series_from_matrix(np.ones((2, 4))))

    def test_brute_force_formula_oracle(self):
        # independent reimplementation with explicit loops
        rng = rng_of(10)
        data = rng.random((6, 4)) * 50
        s = summarize(series_from_matrix(data))

        def pearson(a, b):
            a, b = np.asarray(a), np.asarray(b)
            am, bm = a - a.mean(), b - b.mean()
            va, vb = (am ** 2).sum(), (bm ** 2).sum()
            if va == 0 or vb == 0:
                return 0.0
            return (am * bm).sum() / math.sqrt(va * vb)

        for i in range(4):
            assert s.mu[i] == pytest.approx(data[:, i].mean(), rel=1e-12)
            assert s.sigma[i] == pytest.approx(
                ((data[:, i] - data[:, i].mean()) ** 2).mean(), rel=1e-12
            )
            assert s.ac[i] == pytest.approx(
                pearson(data[:-1, i], data[1:, i]), rel=1e-12
            )
        for k, (i, j) in enumerate(PAIRS):
            assert s.c[k] == pytest.approx(pearson(data[:, i], data[:, j]), rel=1e-12)
            assert s.cc[k] == pytest.approx(
                pearson(data[:-1, i], data[1:, j]), rel=1e-12
            )

    def test_cross_correlation_direction_i_leads(self):
        # x_j tomorrow equals x_i today -> cc for (i, j) must be exactly 1
        rng = rng_of(11)
        x = rng.random(6) * 10
        data = np.column_stack([x, np.roll(x, 1), rng.random(6), rng.random(6)])
        # pair (0,1): x_1[t+1] == x_0[t]
        s = summarize(series_from_matrix(data))
        assert s.cc[PAIRS.index((0, 1))] == pytest.approx(1.0, abs=1e-12)


class TestBhattacharyya:
    def test_identical_inputs_zero(self):
        assert bhattacharyya_rho(3.0, 3.0, 2.0, 2.0) == 0.0

    def test_mean_shift_value(self):
        # 1/4 * log(1/4 * (1 + 1 + 2)) + 1/4 * (4 / 2) = 0.5
        assert bhattacharyya_rho(0.0, 2.0, 1.0, 1.0) == pytest.approx(0.5, rel=1e-12)

    def test_variance_ratio_value(self):
        expected = 0.25 * math.log(0.25 * (0.25 + 4.0 + 2.0))
        got = bhattacharyya_rho(0.0, 0.0, 1.0, 4.0)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(0.111572, abs=1e-6)

    def test_symmetry(self):
        rng = rng_of(12)
        for _ in range(100):
            m1, m2 = rng.normal(size=2) * 10
            s1, s2 = rng.random(2) * 5 + 0.1
            assert bhattacharyya_rho(m1, m2, s1, s2) == pytest.approx(
                bhattacharyya_rho(m2, m1, s2, s1), rel=1e-12
            )

    def test_zero_variance_floored(self):
        v = bhattacharyya_rho(0.0, 1.0, 0.0, 0.0)
        assert math.isfinite(v)
        assert v == pytest.approx(0.25 / (2 * SIGMA_FLOOR), rel=1e-9)

    def test_negative_variance_rejected(self):
        with pytest.raises(DataFormatError):
            bhattacharyya_rho(0.0, 0.0, -1.0, 1.0)

    def test_positive_unless_identical(self):
        rng = rng_of(13)
        for _ in range(200):
            m1, m2 = rng.normal(size=2)
            s1, s2 = rng.random(2) + 0.05
            v = bhattacharyya_rho(m1, m2, s1, s2)
            if (m1, s1) != (m2, s2):
                assert v > 0


def random_summary(rng) -> SummaryVector:
    return SummaryVector(
        mu=rng.normal(size=4) * 10,
        sigma=rng.random(4) * 5 + 1e-3,
        ac=rng.uniform(-1, 1, 4),
        c=rng.uniform(-1, 1, 6),
        cc=rng.uniform(-1, 1, 6),
    )


class TestDiscrepancy:
    def test_self_discrepancy_zero(self):
        rng = rng_of(14)
        for _ in range(10):
            x = random_series(rng)
            assert discrepancy(x, x) == 0.0

    def test_single_ac_slot_difference(self):
        # identical (mu, sigma), one ac slot differing by exactly 1:
        # d = 1/2 * sqrt(1/16) = 0.125
        rng = rng_of(15)
        base = random_summary(rng)
        other = SummaryVector(
            mu=base.mu.copy(), sigma=base.sigma.copy(),
            ac=np.concatenate([[base.ac[0] - 1.0], base.ac[1:]]),
            c=base.c.copy(), cc=base.cc.copy(),
        )
        assert discrepancy_from_summaries(base, other) == pytest.approx(
            0.125, abs=1e-6
        )

    def test_symmetry_and_bounds_random_pairs(self):
        rng = rng_of(16)
        for _ in range(10_000):
            a, b = random_summary(rng), random_summary(rng)
            d_ab = discrepancy_from_summaries(a, b)
            d_ba = discrepancy_from_summaries(b, a)
            assert d_ab == pytest.approx(d_ba, rel=1e-12)
            assert 0.0 <= d_ab <= 1.5

    def test_term_bounds(self):
        # first term in [0, 0.5]; second in [0, 1] for correlations in [-1, 1]
        worst = SummaryVector(
            mu=np.zeros(4), sigma=np.ones(4),
            ac=np.ones(4), c=np.ones(6), cc=np.ones(6),
        )
        opposite = SummaryVector(
            mu=np.full(4, 1e12), sigma=np.full(4, 1e-6),
            ac=-np.ones(4), c=-np.ones(6), cc=-np.ones(6),
        )
        d = discrepancy_from_summaries(worst, opposite)
        assert d <= 1.5
        assert d == pytest.approx(0.5 + 1.0, abs=1e-6)   # both terms maxed

    def test_monotone_in_mean_shift(self):
        rng = rng_of(17)
        base = random_summary(rng)
        last = -1.0
        for shift in np.linspace(0, 50, 21):
            shifted = SummaryVector(
                mu=base.mu + np.array([shift, 0, 0, 0]),
                sigma=base.sigma.copy(), ac=base.ac.copy(),
                c=base.c.copy(), cc=base.cc.copy(),
            )
            d = discrepancy_from_summaries(base, shifted)
            assert d >= last - 1e-12
            last = d

    def test_matches_explicit_formula(self):
        # direct transcription oracle
        rng = rng_of(18)
        a, b = random_summary(rng), random_summary(rng)
        mean_term = 0.0
        for i in range(4):
            rho = bhattacharyya_rho(a.mu[i], b.mu[i], a.sigma[i], b.sigma[i])
            mean_term += (1 - math.exp(-rho)) / 8.0
        sq = (
            ((a.ac - b.ac) ** 2).sum()
            + ((a.c - b.c) ** 2).sum()
            + ((a.cc - b.cc) ** 2).sum()
        )
        expected = mean_term + 0.5 * math.sqrt(sq / 16.0)
        assert discrepancy_from_summaries(a, b) == pytest.approx(expected, rel=1e-12)


class TestSummaryTransformer:
    def test_transform_shape_and_order(self):
        rng = rng_of(19)
        batch = [random_series(rng) for _ in range(3)]
        out = SummaryStatistics().fit_transform(batch)
        assert out.shape == (3, 24)
        np.testing.assert_allclose(out[1], summarize(batch[1]).as_array())

    def test_single_series_accepted(self):
        rng = rng_of(20)
        out = SummaryStatistics().transform(random_series(rng))
        assert out.shape == (1, 24)

    def test_feature_names(self):
        names = SummaryStatistics().get_feature_names_out()
        assert list(names) == list(SUMMARY_NAMES)
        assert len(names) == 24

    def test_rejects_junk(self):
        with pytest.raises(DataFormatError):
            SummaryStatistics().transform([np.ones((5, 4))])

    def test_sklearn_clone(self):
        from sklearn.base import clone
        clone(SummaryStatistics())
