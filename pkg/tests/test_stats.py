import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import sparse
from scipy import stats as scipy_stats

import stats
from errors import DimensionMismatch, InsufficientGroups, UsageError
from feature_matrix import EventIndex, FeatureMatrix
from readcode import TermDictionary

# p(|t| = 1, df = 8) from the even-df closed form:
# 1 - (1/3) * (1 + 4/9 + (3/8)(8/9)^2 + (5/16)(8/9)^3) = 1 - 1429/2187
GOLDEN_T1_DF8 = Fraction(758, 2187)


# =============================================================================
# ORACLE
# =============================================================================

def _betacf(a: float, b: float, x: float) -> float:
    """Modified Lentz evaluation of the incomplete beta continued fraction"""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h


def oracle_betainc(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def oracle_two_sided(t: float, df: float) -> float:
    return oracle_betainc(df / 2.0, 0.5, df / (df + t * t))


class TestOracle:
    def test_matches_df1_closed_form(self):
        for t in (0.1, 0.5, 1.0, 2.0, 10.0):
            assert oracle_two_sided(t, 1.0) == pytest.approx(1.0 - 2.0 / math.pi * math.atan(t), abs=1e-13)

    def test_matches_df2_closed_form(self):
        for t in (0.1, 0.5, 1.0, 2.0, 10.0):
            assert oracle_two_sided(t, 2.0) == pytest.approx(1.0 - t / math.sqrt(2.0 + t * t), abs=1e-13)

    def test_golden_constant(self):
        assert oracle_two_sided(1.0, 8.0) == pytest.approx(float(GOLDEN_T1_DF8), abs=1e-13)


# =============================================================================
# T DISTRIBUTION
# =============================================================================

class TestTDistribution:
    def test_golden_constant(self):
        assert stats.t_cdf_two_sided(1.0, 8) == pytest.approx(float(GOLDEN_T1_DF8), abs=1e-12)

    def test_closed_forms(self):
        for t in (-3.0, -0.2, 0.7, 4.0):
            assert stats.t_cdf_two_sided(t, 1) == pytest.approx(1 - 2 / math.pi * math.atan(abs(t)), abs=1e-12)
            assert stats.t_cdf_two_sided(t, 2) == pytest.approx(1 - abs(t) / math.sqrt(2 + t * t), abs=1e-12)

    def test_random_pairs_against_oracle(self):
        rng = np.random.default_rng(1234)
        t = rng.uniform(-12.0, 12.0, size=1000)
        df = rng.uniform(1.0, 500.0, size=1000)
        p = stats.t_cdf_two_sided(t, df)
        worst = max(abs(p[i] - oracle_two_sided(float(t[i]), float(df[i]))) for i in range(1000))
        assert worst < 1e-9

    def test_edges(self):
        assert stats.t_cdf_two_sided(0.0, 10) == 1.0
        assert stats.t_cdf_two_sided(math.inf, 10) == 0.0
        assert stats.t_cdf_two_sided(-math.inf, 3) == 0.0
        assert stats.t_cdf_two_sided(1e6, 10) < 1e-30

    def test_rejects_non_positive_df(self):
        with pytest.raises(ValueError):
            stats.t_cdf_two_sided(1.0, 0)

    def test_monotone_in_abs_t(self):
        rng = np.random.default_rng(99)
        for df in rng.uniform(1, 300, size=50):
            ts = np.sort(rng.uniform(0, 15, size=40))
            p = stats.t_cdf_two_sided(ts, np.full_like(ts, df))
            assert (np.diff(p) <= 1e-15).all()
            assert ((p >= 0) & (p <= 1)).all()


# =============================================================================
# T-TEST
# =============================================================================

class TestTTest:
    def test_pooled_hand_example(self):
        result = stats.t_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6], "student_pooled")
        assert result.t == pytest.approx(-1.0, abs=1e-12)
        assert result.df == 8
        assert result.p == pytest.approx(float(GOLDEN_T1_DF8), abs=1e-12)

    @pytest.mark.parametrize("kind", list(stats.TestKind))
    def test_identical_samples(self, kind):
        result = stats.t_test([3, 1, 4, 1, 5], [3, 1, 4, 1, 5], kind)
        assert result.t == 0.0
        assert result.p == 1.0

    def test_agrees_with_scipy(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            g = int(rng.integers(2, 60))
            x = rng.poisson(5, size=g).astype(float)
            y = rng.poisson(6, size=g).astype(float)
            if x.var() == 0 or y.var() == 0 or np.var(x - y) == 0:
                continue
            pooled = stats.t_test(x, y, stats.TestKind.STUDENT_POOLED)
            ref = scipy_stats.ttest_ind(x, y, equal_var=True)
            assert pooled.t == pytest.approx(ref.statistic, rel=1e-9)
            assert pooled.p == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-12)

            welch = stats.t_test(x, y, stats.TestKind.WELCH)
            ref = scipy_stats.ttest_ind(x, y, equal_var=False)
            assert welch.t == pytest.approx(ref.statistic, rel=1e-9)
            assert welch.p == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-12)

            paired = stats.t_test(x, y, stats.TestKind.PAIRED)
            ref = scipy_stats.ttest_rel(x, y)
            assert paired.t == pytest.approx(ref.statistic, rel=1e-9)
            assert paired.df == g - 1
            assert paired.p == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-12)

    def test_zero_variance(self):
        same = stats.t_test([2, 2, 2], [2, 2, 2])
        assert (same.t, same.p) == (0.0, 1.0)
        apart = stats.t_test([1, 1, 1], [4, 4, 4])
        assert apart.t == -math.inf
        assert apart.p == 0.0

    def test_insufficient_groups(self):
        with pytest.raises(InsufficientGroups):
            stats.t_test([1.0], [2.0])

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            stats.t_test([1, 2, 3], [1, 2])

    def test_swap_and_shift(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            x = rng.normal(size=12)
            y = rng.normal(size=12)
            for kind in stats.TestKind:
                forward = stats.t_test(x, y, kind)
                backward = stats.t_test(y, x, kind)
                assert backward.t == pytest.approx(-forward.t, rel=1e-12)
                assert backward.p == pytest.approx(forward.p, rel=1e-12)
            for kind in (stats.TestKind.STUDENT_POOLED, stats.TestKind.PAIRED):
                shifted = stats.t_test(x + 7.5, y + 7.5, kind)
                assert shifted.p == pytest.approx(stats.t_test(x, y, kind).p, rel=1e-9)


class TestConfigValidation:
    def test_defaults(self):
        config = stats.TestConfig()
        assert config.kind is stats.TestKind.STUDENT_POOLED
        assert config.alpha == 0.05

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(UsageError):
            stats.TestConfig(alpha=alpha)

    def test_unknown_kind(self):
        with pytest.raises(UsageError):
            stats.TestConfig(kind="bayesian")


# =============================================================================
# RATIOS
# =============================================================================

SIMVASTATIN_FULL_LEVEL_SIGNALS = [
    (185, 1095, "5.92", "7.35"),
    (98, 503, "5.13", "3.37"),
    (113, 525, "4.65", "3.52"),
    (140, 609, "4.35", "4.09"),
    (284, 1201, "4.23", "8.06"),
    (83, 366, "4.41", "2.46"),
    (40, 312, "7.80", "2.09"),
    (198, 762, "3.85", "5.11"),
    (41, 262, "6.39", "1.76"),
    (107, 381, "3.56", "2.56"),
]


class TestRatios:
    @pytest.mark.parametrize("nb, na, r1, r2", SIMVASTATIN_FULL_LEVEL_SIGNALS)
    def test_known_signal_ratios(self, nb, na, r1, r2):
        got_r1, got_r2 = stats.ratios(nb, na, 14905)
        assert f"{got_r1:.2f}" == r1
        assert f"{got_r2 * 100:.2f}" == r2

    @pytest.mark.parametrize("na, r1, r2", [(40, "40.00", "0.27"), (27, "27.00", "0.18")])
    def test_zero_before_count(self, na, r1, r2):
        got_r1, got_r2 = stats.ratios(0, na, 14905)
        assert f"{got_r1:.2f}" == r1
        assert f"{got_r2 * 100:.2f}" == r2

    def test_linear_in_after_count(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            nb, na, k = (int(v) for v in rng.integers(1, 500, size=3))
            assert stats.ratios(nb, na * k, 10**6)[0] == pytest.approx(k * stats.ratios(nb, na, 10**6)[0])

    def test_invalid(self):
        with pytest.raises(ValueError):
            stats.ratios(1, 1, 0)
        with pytest.raises(ValueError):
            stats.ratios(-1, 1, 10)

    def test_bonferroni(self):
        assert stats.bonferroni_alpha(0.05, 13060) == pytest.approx(0.05 / 13060)
        assert stats.bonferroni_alpha(0.05, 0) == 0.05


# =============================================================================
# ALL EVENTS
# =============================================================================

def _matrix(dense, codes, group_size=10):
    dense = np.asarray(dense, dtype=np.int32)
    return FeatureMatrix(
        entries=sparse.csr_matrix(dense),
        group_sizes=(group_size,) * dense.shape[0],
        index=EventIndex.from_codes(codes),
    )


CODES = ["A00..00", "B33..00", "C34..00", "F46..00", "N24..00"]


class TestAllEvents:
    def test_identical_matrices(self):
        rng = np.random.default_rng(0)
        dense = rng.integers(0, 6, size=(10, 5))
        X = _matrix(dense, CODES)
        results = stats.test_all_events(X, _matrix(dense, CODES), 100)
        assert [r.code for r in results] == CODES
        for r, nb in zip(results, dense.sum(axis=0)):
            assert r.p == 1.0
            assert r.n_before == r.n_after == nb
            if nb > 0:
                assert r.r1 == 1.0

    def test_planted_shift_has_minimal_p(self):
        rng = np.random.default_rng(10)
        before = rng.integers(0, 5, size=(10, 5))
        after = before + rng.integers(-1, 2, size=(10, 5))
        after = np.clip(after, 0, 10)
        after[:, 2] = before[:, 2] + 3
        results = stats.test_all_events(_matrix(before, CODES), _matrix(after, CODES), 100)
        best = min(results, key=lambda r: r.p)
        assert best.code == "C34..00"
        assert best.t < 0

    def test_counts_and_terms(self):
        X = _matrix([[1, 0, 0, 0, 0], [2, 0, 0, 0, 1]], CODES)
        Y = _matrix([[3, 0, 1, 0, 0], [4, 0, 0, 0, 1]], CODES)
        terms = TermDictionary({"A00..00": "Planted"})
        results = stats.test_all_events(X, Y, 20, stats.TestConfig(), terms)
        first = results[0]
        assert (first.term, first.n_before, first.n_after) == ("Planted", 3, 7)
        assert first.r1 == pytest.approx(7 / 3)
        assert first.r2 == pytest.approx(7 / 20)
        assert first.r2_percent == pytest.approx(35.0)
        assert results[2].term == "<unknown>"
        assert results[2].r1 == 1.0  # N_B = 0, N_A = 1

    def test_matches_single_column_test(self):
        rng = np.random.default_rng(31)
        before = rng.integers(0, 8, size=(12, 5))
        after = rng.integers(0, 8, size=(12, 5))
        for kind in stats.TestKind:
            results = stats.test_all_events(
                _matrix(before, CODES), _matrix(after, CODES), 120, stats.TestConfig(kind=kind)
            )
            for e, r in enumerate(results):
                single = stats.t_test(before[:, e], after[:, e], kind)
                assert r.t == pytest.approx(single.t, rel=1e-12, abs=1e-12)
                assert r.df == pytest.approx(single.df, rel=1e-12)
                assert r.p == pytest.approx(single.p, rel=1e-9, abs=1e-15)

    def test_significant(self):
        X = _matrix([[0] * 5, [0] * 5, [0] * 5], CODES)
        Y = _matrix([[1] * 5, [1] * 5, [1] * 5], CODES)
        results = stats.test_all_events(X, Y, 30)
        assert all(r.significant() for r in results)
        assert all(r.significant(1e-300) for r in results)

    def test_dimension_mismatch(self):
        X = _matrix([[1, 0, 0, 0, 0]] * 3, CODES)
        with pytest.raises(DimensionMismatch):
            stats.test_all_events(X, _matrix([[1, 0, 0, 0, 0]] * 4, CODES), 40)
        other = ["A00..00", "B33..00", "C34..00", "F46..00", "N25..00"]
        with pytest.raises(DimensionMismatch):
            stats.test_all_events(X, _matrix([[1, 0, 0, 0, 0]] * 3, other), 30)
        with pytest.raises(DimensionMismatch):
            stats.test_all_events(X, _matrix([[1, 0, 0, 0, 0]] * 3, CODES, group_size=11), 30)

    def test_empty_index(self):
        X = FeatureMatrix(entries=sparse.csr_matrix((3, 0), dtype=np.int32), group_sizes=(10, 10, 10),
                          index=EventIndex(()))
        assert stats.test_all_events(X, X, 30) == []
