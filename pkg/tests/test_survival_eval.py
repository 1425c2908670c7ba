# tests/test_survival_eval.py

import math

import numpy as np
import pytest

from protosurv.core import CIndexUndefinedError, ConfigError, DataError
from protosurv.survival_eval import (CohortPrediction, c_index, chi2_sf_1dof, km_curve, logrank_test,
                                     median_risk_split, median_survival, risk_summary)


def cohort(risks, times, censored=None):
    n = len(risks)
    if censored is None:
        censored = [0] * n
    return CohortPrediction(tuple(f"s{i}" for i in range(n)), risks, times, censored)


def brute_force_c_index(risks, times, censored):
    concordant = tied = pairs = 0
    for i in range(len(risks)):
        for j in range(len(risks)):
            if times[i] < times[j] and not censored[i]:
                pairs += 1
                if risks[i] > risks[j]:
                    concordant += 1
                elif risks[i] == risks[j]:
                    tied += 1
    return (concordant + 0.5 * tied) / pairs


def test_c_index_worked_values():
    assert c_index(cohort([3, 2, 1], [1, 2, 3])) == 1.0
    assert c_index(cohort([1, 2, 3], [1, 2, 3])) == 0.0
    assert c_index(cohort([1, 1, 1], [1, 2, 3])) == 0.5


def test_c_index_matches_pairwise_oracle(rng):
    for _ in range(200):
        n = 50
        times = rng.exponential(10.0, size=n).round(1)
        censored = (rng.random(n) < 0.3).astype(int)
        risks = rng.integers(0, 20, size=n).astype(float)
        if not np.any((censored == 0) & (times < times.max())):
            continue
        assert c_index(cohort(risks, times, censored)) == brute_force_c_index(risks, times, censored)


def test_c_index_is_rank_invariant(rng):
    risks = rng.normal(size=60)
    times = rng.exponential(5.0, size=60)
    censored = (rng.random(60) < 0.3).astype(int)
    base = c_index(cohort(risks, times, censored))
    assert c_index(cohort(2 * risks + 7, times, censored)) == base
    assert base + c_index(cohort(-risks, times, censored)) == pytest.approx(1.0, abs=1e-12)


def test_c_index_literal_mode():
    c = cohort([1, 3, 2], [1, 2, 3], [0, 1, 0])
    assert c_index(c, "harrell") == 0.0
    assert c_index(c, "literal") == 0.5
    with pytest.raises(ConfigError):
        c_index(c, "uno")


def test_c_index_undefined_without_pairs():
    with pytest.raises(CIndexUndefinedError, match="C-index undefined"):
        c_index(cohort([1, 2, 3], [1, 2, 3], [1, 1, 1]))
    with pytest.raises(CIndexUndefinedError):
        c_index(cohort([1, 2], [4, 4]))


def test_c_index_agrees_with_lifelines(rng):
    lifelines_utils = pytest.importorskip("lifelines.utils")
    times = rng.exponential(8.0, size=80)
    censored = (rng.random(80) < 0.3).astype(int)
    risks = rng.normal(size=80)
    expected = lifelines_utils.concordance_index(times, -risks, 1 - censored)
    assert c_index(cohort(risks, times, censored)) == pytest.approx(expected, abs=1e-12)


def test_cohort_validation():
    with pytest.raises(DataError):
        CohortPrediction(("a", "b"), [1.0], [1.0, 2.0], [0, 0])
    with pytest.raises(DataError):
        cohort([1.0], [-1.0])
    with pytest.raises(DataError):
        cohort([1.0], [1.0], [3])


def test_median_split_odd_count():
    high, low = median_risk_split(cohort([-3.0, -2.0, -1.0], [1, 2, 3]))
    assert high.sample_ids == ("s2",)
    assert low.sample_ids == ("s0", "s1")


def test_median_split_all_ties():
    high, low = median_risk_split(cohort([0.5] * 4, [1, 2, 3, 4]))
    assert len(high) == 0
    assert len(low) == 4


def test_median_split_even_count(rng):
    risks = rng.normal(size=10)
    high, low = median_risk_split(cohort(risks, np.arange(1, 11)))
    median = np.sort(risks)[4:6].mean()
    assert set(high.risks) == {r for r in risks if r > median}
    assert len(high) == len(low) == 5


def test_km_single_event():
    curve = km_curve(cohort([0.0], [5.0]))
    np.testing.assert_array_equal(curve.times, [0.0, 5.0])
    np.testing.assert_array_equal(curve.survival, [1.0, 0.0])


def test_km_all_censored():
    curve = km_curve(cohort([0.0] * 3, [1.0, 2.0, 3.0], [1, 1, 1]))
    np.testing.assert_array_equal(curve.survival, np.ones(4))
    assert math.isnan(median_survival(curve))


def test_km_product_limit_table():
    group = cohort([0.0] * 6, [1, 2, 2, 3, 4, 5], [0, 0, 1, 0, 1, 0])
    curve = km_curve(group)
    np.testing.assert_array_equal(curve.times, [0, 1, 2, 3, 4, 5])
    np.testing.assert_array_equal(curve.at_risk, [6, 6, 5, 3, 2, 1])
    np.testing.assert_array_equal(curve.events, [0, 1, 1, 1, 0, 1])
    np.testing.assert_allclose(curve.survival, [1, 5 / 6, 2 / 3, 4 / 9, 4 / 9, 0], atol=1e-12)
    assert median_survival(curve) == 3.0
    frame = curve.to_frame("high")
    assert list(frame.columns) == ["group", "time", "survival", "at_risk", "events"]


def test_km_ignores_input_order(rng):
    times = rng.exponential(3.0, size=20).round(1)
    censored = (rng.random(20) < 0.4).astype(int)
    order = rng.permutation(20)
    a = km_curve(cohort(np.zeros(20), times, censored))
    b = km_curve(cohort(np.zeros(20), times[order], censored[order]))
    np.testing.assert_array_equal(a.survival, b.survival)
    assert np.all(np.diff(a.survival) <= 0)


def test_logrank_identical_groups():
    a = cohort([0.0] * 5, [1, 2, 3, 4, 5], [0, 1, 0, 0, 1])
    chi2, p = logrank_test(a, a)
    assert chi2 == 0.0
    assert p == 1.0


def test_logrank_symmetry_and_time_scale(rng):
    a = cohort(np.zeros(30), rng.exponential(2.0, size=30), (rng.random(30) < 0.2).astype(int))
    b = cohort(np.zeros(30), rng.exponential(4.0, size=30), (rng.random(30) < 0.2).astype(int))
    chi2, p = logrank_test(a, b)
    swapped = logrank_test(b, a)
    assert swapped[0] == pytest.approx(chi2, rel=1e-12)
    assert swapped[1] == pytest.approx(p, rel=1e-12)
    scaled = logrank_test(cohort(a.risks, a.times * 3.0, a.censored), cohort(b.risks, b.times * 3.0, b.censored))
    assert scaled[0] == pytest.approx(chi2, rel=1e-12)


def test_logrank_detects_hazard_ratio_four():
    rng = np.random.default_rng(99)
    fast = cohort(np.zeros(100), rng.exponential(1.0 / 4.0, size=100))
    slow = cohort(np.zeros(100), rng.exponential(1.0, size=100))
    _, p = logrank_test(fast, slow)
    assert p < 0.05


def test_logrank_requires_events():
    a = cohort([0.0, 0.0], [1.0, 2.0], [1, 1])
    with pytest.raises(DataError, match="no events"):
        logrank_test(a, a)
    with pytest.raises(DataError):
        logrank_test(a, a.subset(np.zeros(2, dtype=bool)))


def test_logrank_agrees_with_lifelines(rng):
    statistics = pytest.importorskip("lifelines.statistics")
    ta, tb = rng.exponential(2.0, size=40), rng.exponential(3.0, size=40)
    ea, eb = (rng.random(40) > 0.25).astype(int), (rng.random(40) > 0.25).astype(int)
    chi2, p = logrank_test(cohort(np.zeros(40), ta, 1 - ea), cohort(np.zeros(40), tb, 1 - eb))
    reference = statistics.logrank_test(ta, tb, event_observed_A=ea, event_observed_B=eb)
    assert chi2 == pytest.approx(reference.test_statistic, rel=1e-9)
    assert p == pytest.approx(reference.p_value, rel=1e-9)


def test_chi2_tail_reference_points():
    assert chi2_sf_1dof(0.0) == 1.0
    assert chi2_sf_1dof(3.841458820694124) == pytest.approx(0.05, rel=1e-9)


def test_risk_summary():
    summary = risk_summary(cohort([1.0, 2.0, 3.0, 4.0, 5.0], [1, 2, 3, 4, 5]))
    assert summary == {"n": 5, "min": 1.0, "q1": 2.0, "median": 3.0, "q3": 4.0, "max": 5.0, "mean": 3.0}
    assert risk_summary(cohort([], []))["n"] == 0
