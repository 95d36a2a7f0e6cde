"""AUC implementations against brute-force oracles and closed forms."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from admatch.metrics import MetricsReport, SweepResult, pr_auc, roc_auc

from helpers import pr_auc_bruteforce, roc_auc_bruteforce


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([0, 0, 1, 1])) == 1.0

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(0)
        scores = rng.random(20000)
        labels = rng.integers(0, 2, 20000)
        assert roc_auc(scores, labels) == pytest.approx(0.5, abs=0.02)

    def test_hand_counted_example(self):
        scores = np.array([0.1, 0.4, 0.35, 0.8])
        labels = np.array([0, 0, 1, 1])
        assert roc_auc(scores, labels) == pytest.approx(0.75)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            roc_auc(np.array([0.1, 0.2]), np.array([1, 1]))

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.random(500)
        labels = rng.integers(0, 2, 500)
        base = roc_auc(scores, labels)
        assert roc_auc(np.exp(3 * scores) + 7, labels) == pytest.approx(base, abs=1e-12)

    def test_negated_scores_complement(self):
        rng = np.random.default_rng(2)
        scores = rng.integers(0, 10, 400).astype(float)  # heavy ties
        labels = rng.integers(0, 2, 400)
        total = roc_auc(scores, labels) + roc_auc(-scores, labels)
        assert total == pytest.approx(1.0, abs=1e-12)


class TestPrAuc:
    def test_perfect_separation(self):
        assert pr_auc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([0, 0, 1, 1])) == 1.0

    def test_all_scores_equal_gives_prevalence(self):
        labels = np.array([1, 0, 0, 1, 0, 0, 0, 1, 0, 0])
        scores = np.full(10, 0.4)
        assert pr_auc(scores, labels) == pytest.approx(labels.mean())

    def test_three_point_hand_computation(self):
        # Thresholds descending: 0.9 (tp=1, p=1), 0.5 (tp=1, p=1/2), 0.2 (tp=2, p=2/3).
        scores = np.array([0.9, 0.5, 0.2])
        labels = np.array([1, 0, 1])
        expected = (1 / 2) * 1.0 + (1 / 2) * (2 / 3)
        assert pr_auc(scores, labels) == pytest.approx(expected)

    def test_no_positives_rejected(self):
        with pytest.raises(ValueError):
            pr_auc(np.array([0.5, 0.6]), np.array([0, 0]))


class TestAgainstBruteForce:
    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_both_aucs_match_oracles(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 300))
        # Quantized scores force heavy ties.
        scores = np.round(rng.random(n), int(rng.integers(1, 3)))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert roc_auc(scores, labels) == pytest.approx(
            roc_auc_bruteforce(scores, labels), abs=1e-9
        )
        assert pr_auc(scores, labels) == pytest.approx(
            pr_auc_bruteforce(scores, labels), abs=1e-9
        )


class TestReports:
    def _report(self, **overrides):
        base = dict(
            roc_auc=0.9,
            pr_auc=0.8,
            sizes={"test": 10},
            seed=3,
            config_hash="abc",
            wall_clock_sec=1.5,
            tags={"row": "x"},
        )
        base.update(overrides)
        return MetricsReport(**base)

    def test_canonical_hash_ignores_wall_clock(self):
        a = self._report(wall_clock_sec=1.0)
        b = self._report(wall_clock_sec=99.0)
        assert a.canonical_hash() == b.canonical_hash()
        assert a.canonical_hash() != self._report(roc_auc=0.91).canonical_hash()

    def test_round_trip(self):
        report = self._report()
        assert MetricsReport.from_dict(report.to_dict()) == report

    def test_sweep_result_sorts_and_rejects_duplicates(self):
        r = self._report()
        sweep = SweepResult(axis="theta", cells=[(0.5, r), (0.0, r), (1.0, r)])
        assert sweep.values == [0.0, 0.5, 1.0]
        with pytest.raises(ValueError):
            SweepResult(axis="theta", cells=[(0.5, r), (0.5, r)])
