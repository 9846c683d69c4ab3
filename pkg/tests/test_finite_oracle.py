"""Tests for exact averages over explicit finite measures."""

import math

import numpy as np
import pytest

from gglab.identities.functionals import FunctionFamily, StepFunction
from gglab.measures.cascade import sample_replicas
from gglab.measures.finite_oracle import (
    FiniteMeasure,
    KahanSum,
    exact_average,
    exact_inner_exp_average,
    exact_tuple_average,
    log_inner_exp_average,
    load_finite_measure,
)
from gglab.services.errors import BudgetExceededError
from gglab.services.mc_engine import batch_se, run_batches
from gglab.services.schemas import EstimatorConfig


class TestFiniteMeasure:
    def test_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            FiniteMeasure(weights=np.array([1.0, 0.0]), gram_matrix=np.eye(2))

    def test_rejects_weights_not_summing_to_one(self):
        with pytest.raises(ValueError):
            FiniteMeasure(weights=np.array([0.5, 0.4]), gram_matrix=np.eye(2))

    def test_rejects_asymmetric_gram(self):
        with pytest.raises(ValueError):
            FiniteMeasure(weights=np.array([0.5, 0.5]), gram_matrix=np.array([[1.0, 0.2], [0.3, 1.0]]))

    def test_levels_and_q_star(self, ultrametric_measure):
        assert ultrametric_measure.levels.tolist() == [0.0, 0.5, 1.0]
        assert ultrametric_measure.q_star == 1.0

    def test_pair_law_matches_enumeration(self, ultrametric_measure):
        law = ultrametric_measure.pair_law()
        for level, mass in zip(law.levels, law.masses):
            enumerated = exact_average(ultrametric_measure, 2, lambda R, q=level: float(R.pair(1, 2) == q))
            assert mass == pytest.approx(enumerated)


class TestExactAverages:
    def test_weights_sum_to_one_over_tuples(self, ultrametric_measure):
        assert exact_tuple_average(ultrametric_measure, 3, lambda indices: 1.0) == pytest.approx(1.0)

    def test_same_atom_probability(self):
        measure = FiniteMeasure.uniform(np.eye(2))
        assert exact_average(measure, 2, lambda R: float(R.pair(1, 2) == 1.0)) == pytest.approx(0.5)

    def test_budget_is_enforced(self, ultrametric_measure):
        with pytest.raises(BudgetExceededError):
            exact_tuple_average(ultrametric_measure, 4, lambda indices: 1.0, budget=100)

    def test_kahan_sum_is_no_worse_than_naive(self):
        total = KahanSum()
        naive = 0.0
        for _ in range(10):
            total.add(0.1)
            naive += 0.1
        assert abs(total.total - 1.0) <= abs(naive - 1.0)

    def test_linear_in_the_weights_for_one_replica(self, ultrametric_measure):
        gram = ultrametric_measure.gram_matrix
        first, second = np.array([0.4, 0.3, 0.2, 0.1]), np.array([0.1, 0.1, 0.3, 0.5])
        values = np.array([0.3, -1.2, 2.0, 0.7])

        def average(weights):
            measure = FiniteMeasure(weights=weights, gram_matrix=gram)
            return exact_tuple_average(measure, 1, lambda indices: values[indices[0]])

        mixed = average(0.3 * first + 0.7 * second)
        assert mixed == pytest.approx(0.3 * average(first) + 0.7 * average(second), abs=1e-12)

    def test_pair_average_is_quadratic_along_a_mixture(self, ultrametric_measure):
        gram = ultrametric_measure.gram_matrix
        first, second = np.array([0.4, 0.3, 0.2, 0.1]), np.array([0.1, 0.1, 0.3, 0.5])

        def average(lam):
            measure = FiniteMeasure(weights=(1 - lam) * first + lam * second, gram_matrix=gram)
            return exact_average(measure, 2, lambda R: R.pair(1, 2) ** 2 + 0.5 * float(R.pair(1, 2) == 1.0))

        interpolated = 0.375 * average(0.0) + 0.75 * average(0.5) - 0.125 * average(1.0)
        assert average(0.25) == pytest.approx(interpolated, abs=1e-12)

    def test_monte_carlo_agrees_with_enumeration(self, ultrametric_measure):
        def functional(R):
            return float(R.pair(1, 2) >= 0.5) - 0.5 * R.pair(1, 2)

        def sampler(rng):
            return functional(ultrametric_measure.gram(sample_replicas(ultrametric_measure, 2, rng)))

        config = EstimatorConfig(n_outer=3200, n_batches=32, seed=21)
        batches = run_batches(sampler, config)
        estimate = batches.mean(axis=0)[0]
        se = batch_se(batches)[0]
        exact = exact_average(ultrametric_measure, 2, functional)
        assert se > 0.0
        assert abs(estimate - exact) <= 4 * se

    def test_inner_exp_average_of_two_orthogonal_atoms(self):
        measure = FiniteMeasure.uniform(np.eye(2))
        family = FunctionFamily((StepFunction.point(1.0, math.log(2.0)),), (0.0,))
        assert exact_inner_exp_average(measure, [0], family) == pytest.approx(1.5)

    def test_inner_exp_average_at_zero_tilt(self, ultrametric_measure):
        assert exact_inner_exp_average(ultrametric_measure, [1, 3], FunctionFamily.zero(2)) == pytest.approx(1.0)

    def test_inner_exp_average_over_a_subset(self):
        measure = FiniteMeasure.uniform(np.eye(2))
        family = FunctionFamily((StepFunction.point(1.0, math.log(2.0)),), (0.0,))
        assert exact_inner_exp_average(measure, [0], family, np.array([True, False])) == pytest.approx(1.0)

    def test_inner_average_of_zero_family_is_one(self, ultrametric_measure):
        assert log_inner_exp_average(ultrametric_measure, [0, 2], FunctionFamily.zero(2)) == pytest.approx(0.0)

    def test_empty_mask_gives_minus_infinity(self, ultrametric_measure):
        family = FunctionFamily.from_law([StepFunction.point(1.0)], ultrametric_measure.pair_law())
        mask = np.zeros(4, dtype=bool)
        assert log_inner_exp_average(ultrametric_measure, [0], family, mask) == -np.inf


class TestLoadFiniteMeasure:
    def test_reads_commas_and_comments(self, tmp_path):
        path = tmp_path / "measure.txt"
        path.write_text("# two atoms\n0.25, 0.75\n1, 0.5\n0.5 1\n", encoding="utf-8")
        measure = load_finite_measure(path)
        assert measure.weights.tolist() == [0.25, 0.75]
        assert measure.gram_matrix[0, 1] == 0.5

    def test_renormalizes_rounded_weights(self, tmp_path):
        path = tmp_path / "measure.txt"
        path.write_text("0.3333333 0.3333333 0.3333334\n1 0 0\n0 1 0\n0 0 1\n", encoding="utf-8")
        assert load_finite_measure(path).weights.sum() == pytest.approx(1.0, abs=1e-14)

    def test_rejects_bad_weights(self, tmp_path):
        path = tmp_path / "measure.txt"
        path.write_text("0.5 0.3\n1 0\n0 1\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_finite_measure(path)
