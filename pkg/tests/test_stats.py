"""Nonparametric statistics against independent oracles.

Exact tests are checked against full enumeration (sign patterns for the
signed-rank test, subset combinations for the rank-sum test); the rest
against direct formula evaluations and scipy.
"""

import itertools
import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from ocuflow.core import substream
from ocuflow.stats import TestResult as StatResult
from ocuflow.stats import (BlandAltman, bland_altman, bootstrap_ci,
                           cohens_kappa, deming_fit, icc_2_1, kruskal_wallis,
                           mann_whitney_bonferroni, mann_whitney_u, ols_fit,
                           spearman_rho, wilcoxon_signed_rank)


def enum_signed_rank_p(diffs) -> float:
    """Two-sided exact p by brute force over all 2^n sign assignments."""
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0.0]
    r = scipy.stats.rankdata(np.abs(d))
    w_obs = min(r[d > 0].sum(), r[d < 0].sum())
    n = d.size
    count = 0
    for signs in itertools.product((False, True), repeat=n):
        w_minus = sum(ri for ri, neg in zip(r, signs) if neg)
        if w_minus <= w_obs + 1e-12:
            count += 1
    return min(1.0, 2.0 * count / 2**n)


def enum_mwu_p(x, y) -> float:
    """Two-sided exact p by brute force over all group-1 subsets."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n1 = x.size
    pooled = np.concatenate([x, y])
    r = scipy.stats.rankdata(pooled)
    u1_obs = r[:n1].sum() - n1 * (n1 + 1) / 2.0
    u_values = []
    for subset in itertools.combinations(range(pooled.size), n1):
        u_values.append(r[list(subset)].sum() - n1 * (n1 + 1) / 2.0)
    u_values = np.asarray(u_values)
    p_le = np.mean(u_values <= u1_obs + 1e-12)
    p_ge = np.mean(u_values >= u1_obs - 1e-12)
    return min(1.0, 2.0 * min(p_le, p_ge))


class TestSpearman:
    def test_perfect_monotone(self):
        r = spearman_rho([1.0, 2.0, 5.0, 9.0], [2.0, 3.0, 8.0, 20.0])
        assert r.statistic == pytest.approx(1.0)
        assert r.p_value < 1e-12

    def test_hand_fixture(self):
        # 1 - 6*6/(3*8) = -0.5
        r = spearman_rho([1.0, 2.0, 3.0], [3.0, 1.0, 2.0])
        assert r.statistic == pytest.approx(-0.5, abs=1e-12)

    def test_reversal(self):
        x = np.arange(10.0)
        assert spearman_rho(x, -x).statistic == pytest.approx(-1.0)

    def test_matches_scipy(self):
        rng = substream(11, "spearman")
        for _ in range(20):
            x = rng.normal(size=15)
            y = rng.normal(size=15) + 0.5 * x
            ours = spearman_rho(x, y)
            ref_rho, ref_p = scipy.stats.spearmanr(x, y)
            assert ours.statistic == pytest.approx(ref_rho, abs=1e-12)
            assert ours.p_value == pytest.approx(ref_p, abs=1e-9)

    def test_constant_input_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            spearman_rho([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


class TestWilcoxon:
    def test_three_positive(self):
        r = wilcoxon_signed_rank([1.0, 2.0, 3.0])
        assert r.statistic == 0.0
        assert r.p_value == pytest.approx(0.25, abs=1e-15)
        assert r.method == "exact"

    def test_maximal_symmetry(self):
        r = wilcoxon_signed_rank([-1.0, 1.0])
        assert r.p_value == pytest.approx(1.0)

    def test_nineteen_positive(self):
        r = wilcoxon_signed_rank(np.arange(1.0, 20.0))
        assert r.p_value == pytest.approx(2.0 / 2**19, rel=1e-12)

    def test_zeros_dropped(self):
        with_zero = wilcoxon_signed_rank([0.0, 1.0, 2.0, 3.0])
        without = wilcoxon_signed_rank([1.0, 2.0, 3.0])
        assert with_zero.p_value == pytest.approx(without.p_value)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            wilcoxon_signed_rank([0.0, 0.0])

    def test_large_n_matches_scipy_approx(self):
        rng = substream(12, "wilcoxon-large")
        d = rng.normal(0.3, 1.0, size=60)
        r = wilcoxon_signed_rank(d)
        assert r.method == "normal-approx"
        ref = scipy.stats.wilcoxon(d, correction=False, method="approx")
        assert r.p_value == pytest.approx(ref.pvalue, abs=1e-10)

    def test_enumeration_continuous(self):
        rng = substream(13, "wilcoxon-enum")
        for _ in range(60):
            n = int(rng.integers(2, 9))
            d = rng.normal(0.4, 1.0, size=n)
            ours = wilcoxon_signed_rank(d)
            assert ours.method == "exact"
            assert ours.p_value == pytest.approx(enum_signed_rank_p(d),
                                                 abs=1e-12)

    def test_enumeration_with_ties(self):
        rng = substream(14, "wilcoxon-ties")
        for _ in range(40):
            n = int(rng.integers(3, 9))
            d = rng.integers(-3, 4, size=n).astype(float)
            d = d[d != 0.0]
            if d.size == 0:
                continue
            ours = wilcoxon_signed_rank(d)
            assert ours.p_value == pytest.approx(enum_signed_rank_p(d),
                                                 abs=1e-12)


class TestMannWhitney:
    def test_hand_fixture(self):
        r = mann_whitney_u([1.0, 2.0], [3.0, 4.0])
        assert r.statistic == 0.0
        assert r.p_value == pytest.approx(2.0 / 6.0, abs=1e-15)
        assert r.method == "exact"

    def test_enumeration_continuous(self):
        rng = substream(15, "mwu-enum")
        for _ in range(60):
            n1 = int(rng.integers(2, 8))
            n2 = int(rng.integers(2, 8))
            x = rng.normal(size=n1)
            y = rng.normal(0.7, 1.0, size=n2)
            ours = mann_whitney_u(x, y)
            assert ours.method == "exact"
            assert ours.p_value == pytest.approx(enum_mwu_p(x, y), abs=1e-12)

    def test_enumeration_with_ties(self):
        rng = substream(16, "mwu-ties")
        for _ in range(40):
            n1 = int(rng.integers(2, 7))
            n2 = int(rng.integers(2, 7))
            x = rng.integers(0, 4, size=n1).astype(float)
            y = rng.integers(0, 4, size=n2).astype(float)
            if np.all(np.concatenate([x, y]) == x[0]):
                continue
            ours = mann_whitney_u(x, y)
            assert ours.p_value == pytest.approx(enum_mwu_p(x, y), abs=1e-12)

    def test_pairwise_bonferroni(self):
        groups = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]
        results = mann_whitney_bonferroni(groups)
        assert [r.label for r in results] == ["0-1", "0-2", "1-2"]
        assert all(r.p_value <= 1.0 for r in results)
        single = mann_whitney_u(groups[0], groups[1])
        assert results[0].p_value == pytest.approx(
            min(1.0, single.p_value * 3.0))

    def test_identical_groups_capped(self):
        results = mann_whitney_bonferroni([[1.0, 2.0], [1.0, 2.0],
                                           [1.0, 2.0]])
        assert all(r.p_value == 1.0 for r in results)


class TestKruskalWallis:
    def test_hand_fixture(self):
        r = kruskal_wallis([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        assert r.statistic == pytest.approx(32.0 / 7.0, abs=1e-12)

    def test_permuted_identical_groups(self):
        r = kruskal_wallis([[1.0, 2.0, 3.0], [2.0, 1.0, 3.0]])
        assert r.statistic == pytest.approx(0.0, abs=1e-12)

    def test_monotone_invariance(self):
        groups = [[0.1, 0.7, 0.3], [2.0, 1.5], [0.9, 4.0, 2.5]]
        h1 = kruskal_wallis(groups).statistic
        h2 = kruskal_wallis([[math.exp(v) for v in g] for g in groups]).statistic
        assert h1 == pytest.approx(h2, abs=1e-12)

    def test_matches_scipy(self):
        rng = substream(17, "kw")
        for _ in range(20):
            groups = [rng.normal(m, 1.0, size=int(rng.integers(4, 12)))
                      for m in (0.0, 0.4, 1.0)]
            ours = kruskal_wallis(groups)
            ref = scipy.stats.kruskal(*groups)
            assert ours.statistic == pytest.approx(ref.statistic, abs=1e-10)
            assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-10)

    def test_identical_values_rejected(self):
        with pytest.raises(ValueError, match="identical"):
            kruskal_wallis([[1.0, 1.0], [1.0, 1.0]])


class TestBlandAltman:
    def test_perfect_agreement(self):
        r = bland_altman([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert r.bias == 0.0
        assert (r.loa_lower, r.loa_upper) == (0.0, 0.0)

    def test_hand_fixture(self):
        r = bland_altman([0.0, 1.0, 2.0], [1.0, 1.0, 1.0])
        assert r.bias == pytest.approx(0.0, abs=1e-15)
        assert r.sd_diff == pytest.approx(1.0, abs=1e-15)
        assert r.loa_lower == pytest.approx(-1.96)
        assert r.loa_upper == pytest.approx(1.96)

    def test_bias_sign_convention(self):
        # bias is mean(est - meas)
        r = bland_altman([2.0, 3.0], [1.0, 2.0])
        assert r.bias == pytest.approx(1.0)


class TestIcc:
    @staticmethod
    def icc_oracle(ratings: np.ndarray) -> float:
        """Two-way random effects, absolute agreement, single rater."""
        n, k = ratings.shape
        grand = ratings.mean()
        row_means = ratings.mean(axis=1)
        col_means = ratings.mean(axis=0)
        msr = k * np.sum((row_means - grand) ** 2) / (n - 1)
        msc = n * np.sum((col_means - grand) ** 2) / (k - 1)
        sse = np.sum((ratings - row_means[:, None] - col_means[None, :]
                      + grand) ** 2)
        mse = sse / ((n - 1) * (k - 1))
        return (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n)

    def test_identical_raters(self):
        x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [7.0, 7.0]])
        assert icc_2_1(x) == pytest.approx(1.0)

    def test_shuffled_rater_near_zero(self):
        rng = substream(18, "icc")
        a = rng.normal(size=10)
        b = a[rng.permutation(10)]
        assert abs(icc_2_1(np.column_stack([a, b]))) < 0.5

    def test_matches_anova_oracle(self):
        x = np.array([[9.0, 2.0], [4.5, 4.0], [7.0, 6.5], [10.0, 8.0]])
        assert icc_2_1(x) == pytest.approx(self.icc_oracle(x), abs=1e-12)

    def test_random_fixtures_match_oracle(self):
        rng = substream(19, "icc-rand")
        for _ in range(25):
            n = int(rng.integers(4, 12))
            truth = rng.normal(size=n)
            x = np.column_stack([truth + rng.normal(0, 0.3, size=n),
                                 truth + rng.normal(0.1, 0.3, size=n)])
            assert icc_2_1(x) == pytest.approx(self.icc_oracle(x), abs=1e-12)

    def test_requires_two_columns(self):
        with pytest.raises(ValueError):
            icc_2_1(np.ones((4, 1)))


class TestBootstrap:
    def test_constant_data(self):
        lo, hi = bootstrap_ci([3.0] * 10, np.mean, n_resamples=200,
                              rng=substream(20, "boot"))
        assert (lo, hi) == (3.0, 3.0)

    def test_contains_point_estimate_for_mean(self):
        rng = substream(21, "boot2")
        data = rng.normal(size=40)
        lo, hi = bootstrap_ci(data, np.mean, n_resamples=500,
                              rng=substream(22, "boot3"))
        assert lo <= data.mean() <= hi

    def test_coverage(self):
        hits = 0
        for trial in range(200):
            rng = substream(123, "boot-coverage", trial)
            data = rng.normal(0.0, 1.0, size=50)
            lo, hi = bootstrap_ci(data, np.mean, n_resamples=300, rng=rng)
            hits += lo <= 0.0 <= hi
        assert 180 <= hits <= 198  # 90-99% of 200

    def test_determinism(self):
        data = substream(23, "boot4").normal(size=30)
        a = bootstrap_ci(data, np.median, n_resamples=400,
                         rng=substream(24, "boot5"))
        b = bootstrap_ci(data, np.median, n_resamples=400,
                         rng=substream(24, "boot5"))
        assert a == b


class TestKappa:
    def test_identical_labelings(self):
        labels = ["a", "b", "c", "a", "b"]
        assert cohens_kappa(labels, labels) == pytest.approx(1.0)

    def test_chance_agreement(self):
        # confusion [[1,1],[1,1]]: observed 0.5 equals expected 0.5
        truth = ["x", "x", "y", "y"]
        pred = ["x", "y", "x", "y"]
        assert cohens_kappa(truth, pred) == pytest.approx(0.0, abs=1e-15)

    def test_three_class_fixture_vs_oracle(self):
        truth = ["N", "N", "N", "B", "B", "C", "C", "C", "C", "N"]
        pred = ["N", "B", "N", "B", "C", "C", "C", "N", "C", "N"]
        classes = sorted(set(truth) | set(pred))
        n = len(truth)
        p_o = sum(t == p for t, p in zip(truth, pred)) / n
        p_e = sum((truth.count(c) / n) * (pred.count(c) / n) for c in classes)
        expected = (p_o - p_e) / (1.0 - p_e)
        assert cohens_kappa(truth, pred) == pytest.approx(expected, abs=1e-12)

    def test_all_one_class_predictions(self):
        truth = ["a", "b", "a", "b"]
        pred = ["a", "a", "a", "a"]
        assert cohens_kappa(truth, pred) == pytest.approx(0.0, abs=1e-15)


class TestLinesFits:
    def test_ols_exact_line(self):
        x = np.array([0.0, 1.0, 2.0, 3.0])
        fit = ols_fit(x, 2.0 + 3.0 * x)
        assert fit.intercept == pytest.approx(2.0, abs=1e-12)
        assert fit.slope == pytest.approx(3.0, abs=1e-12)

    def test_ols_shift_invariance(self):
        rng = substream(25, "ols")
        x = rng.uniform(0.0, 10.0, size=50)
        y = 1.5 - 0.4 * x + rng.normal(0, 0.3, size=50)
        f1 = ols_fit(x, y)
        f2 = ols_fit(x, y + 5.0)
        assert f2.intercept == pytest.approx(f1.intercept + 5.0, abs=1e-10)
        assert f2.slope == pytest.approx(f1.slope, abs=1e-12)

    def test_deming_collinear_matches_ols(self):
        x = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
        y = 1.0 + 0.5 * x
        ols = ols_fit(x, y)
        intercept, slope = deming_fit(x, y, variance_ratio=1.0)
        assert slope == pytest.approx(ols.slope, abs=1e-10)
        assert intercept == pytest.approx(ols.intercept, abs=1e-10)

    def test_deming_swap_symmetry(self):
        rng = substream(26, "deming")
        x = rng.uniform(0.0, 5.0, size=60)
        y = 0.7 + 1.8 * x + rng.normal(0, 0.2, size=60)
        _, s_xy = deming_fit(x, y, variance_ratio=1.0)
        _, s_yx = deming_fit(y, x, variance_ratio=1.0)
        assert s_yx == pytest.approx(1.0 / s_xy, rel=1e-9)


class TestResultTypes:
    def test_test_result_fields(self):
        r = StatResult(statistic=1.0, p_value=0.5, method="exact")
        assert r.p_value == 0.5

    def test_invalid_p_rejected(self):
        with pytest.raises(ValueError):
            StatResult(statistic=1.0, p_value=1.5, method="exact")

    def test_bland_altman_type(self):
        r = bland_altman([1.0, 2.0], [1.0, 2.0])
        assert isinstance(r, BlandAltman)
