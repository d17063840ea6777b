import math

import numpy as np
import pytest

from arrqp import (
    MetricError,
    confidence_interval,
    confidence_table,
    improvement,
    mae,
    metric_report,
    rmse,
)


class TestErrorMetrics:
    def test_perfect_predictions(self):
        a = np.array([1.0, 2.0, 3.0])
        assert mae(a, a) == 0.0
        assert rmse(a, a) == 0.0

    def test_single_pair(self):
        assert mae([1.0], [2.0]) == 1.0
        assert rmse([1.0], [2.0]) == 1.0

    def test_hand_case(self):
        actual = np.array([0.0, 0.0])
        predicted = np.array([1.0, 3.0])
        assert mae(actual, predicted) == pytest.approx(2.0, abs=1e-15)
        assert rmse(actual, predicted) == pytest.approx(math.sqrt(5), abs=1e-12)

    def test_masked_variant(self):
        actual = np.array([[1.0, 99.0], [2.0, 99.0]])
        predicted = np.array([[2.0, 0.0], [4.0, 0.0]])
        mask = np.array([[True, False], [True, False]])
        assert mae(actual, predicted, mask) == pytest.approx(1.5)

    def test_empty_mask_is_error(self):
        with pytest.raises(MetricError):
            mae(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), dtype=bool))

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            k = rng.integers(1, 40)
            a = rng.normal(size=k)
            p = rng.normal(size=k)
            expected_mae = sum(abs(x - y) for x, y in zip(a, p)) / k
            expected_rmse = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, p)) / k)
            assert abs(mae(a, p) - expected_mae) < 1e-12
            assert abs(rmse(a, p) - expected_rmse) < 1e-12

    def test_rmse_dominates_mae(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            k = rng.integers(1, 30)
            a, p = rng.normal(size=k), rng.normal(size=k)
            assert rmse(a, p) >= mae(a, p) - 1e-15

    def test_report_structure(self):
        rep = metric_report([1.0, 2.0], [2.0, 4.0])
        assert rep.n_pairs == 2
        assert rep.mae == pytest.approx(1.5)


class TestImprovement:
    def test_halving_is_fifty_percent(self):
        assert improvement(0.1, 0.2) == pytest.approx(50.0)

    def test_equal_is_zero(self):
        assert improvement(0.37, 0.37) == 0.0

    def test_degradation_is_negative(self):
        assert improvement(0.3, 0.2) == pytest.approx(-50.0)

    def test_zero_baseline_is_error(self):
        with pytest.raises(MetricError):
            improvement(0.1, 0.0)

    def test_exact_formula(self):
        rng = np.random.default_rng(77)
        for _ in range(1000):
            p1 = float(rng.uniform(0.01, 10))
            p2 = float(rng.uniform(0.01, 10))
            assert abs(improvement(p1, p2) - (p2 - p1) / p2 * 100) < 1e-12


class TestConfidenceIntervals:
    def test_identical_runs_zero_width(self):
        ci = confidence_interval([0.5, 0.5, 0.5], level=95)
        assert ci.lower == pytest.approx(0.5)
        assert ci.upper == pytest.approx(0.5)

    def test_two_run_hand_case(self):
        ci = confidence_interval([1.0, 3.0], level=95)
        assert ci.lower == pytest.approx(0.040, abs=1e-9)
        assert ci.upper == pytest.approx(3.960, abs=1e-9)

    def test_width_ordering(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            values = rng.normal(size=rng.integers(2, 12))
            table = confidence_table(values)
            assert table[90].width <= table[95].width <= table[99].width

    def test_single_run_is_error(self):
        with pytest.raises(MetricError):
            confidence_interval([1.0])

    def test_unknown_level_rejected(self):
        with pytest.raises(ValueError):
            confidence_interval([1.0, 2.0], level=42)
