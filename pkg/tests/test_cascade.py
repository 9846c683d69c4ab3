"""Tests for Ruelle cascades."""

import itertools

import numpy as np
import pytest

from gglab.measures.cascade import (
    build_cascade,
    cascade_overlap_law,
    leaf_node_ids,
    overlap_law,
    sample_replicas,
)
from gglab.measures.finite_oracle import FiniteMeasure
from gglab.services.errors import BudgetExceededError
from gglab.services.mc_engine import derive_stream
from gglab.services.schemas import CascadeSpec


class TestCascadeSpec:
    def test_one_level_defaults(self):
        spec = CascadeSpec.one_level(0.4, n_atoms=512)
        assert spec.depth == 1
        assert spec.qs == [0.0, 1.0]
        assert spec.n_leaves == 512

    def test_zetas_must_increase(self):
        with pytest.raises(ValueError):
            CascadeSpec(depth=2, zetas=[0.5, 0.3], qs=[0.0, 0.5, 1.0], branching=[4, 4])

    def test_qs_length_must_match_depth(self):
        with pytest.raises(ValueError):
            CascadeSpec(depth=2, zetas=[0.3, 0.5], qs=[0.0, 1.0], branching=[4, 4])

    def test_branching_needs_two_children(self):
        with pytest.raises(ValueError):
            CascadeSpec(depth=1, zetas=[0.5], qs=[0.0, 1.0], branching=[1])


class TestBuildCascade:
    def test_node_ids_row_major(self):
        ids = leaf_node_ids([2, 3])
        assert ids.tolist() == [[0, 0, 0, 1, 1, 1], [0, 1, 2, 3, 4, 5]]

    def test_weights_form_a_probability_vector(self, two_level):
        measure = build_cascade(two_level, derive_stream(1, 0, 0))
        assert measure.size == 16 * 64
        assert np.all(measure.weights > 0)
        assert measure.weights.sum() == pytest.approx(1.0)
        assert measure.node_weights(1).sum() == pytest.approx(1.0)

    def test_leaf_budget_is_enforced(self):
        spec = CascadeSpec(depth=2, zetas=[0.3, 0.5], qs=[0.0, 0.5, 1.0], branching=[64, 128], leaf_budget=4096)
        with pytest.raises(BudgetExceededError):
            build_cascade(spec, derive_stream(0, 0, 0))

    def test_reproducible_from_stream(self, two_level):
        first = build_cascade(two_level, derive_stream(8, 0, 3))
        second = build_cascade(two_level, derive_stream(8, 0, 3))
        assert np.array_equal(first.weights, second.weights)

    def test_leaf_paths_match_node_ids(self, two_level):
        measure = build_cascade(two_level, derive_stream(1, 0, 0))
        paths = measure.leaf_paths
        assert paths.shape == (measure.size, 2)
        assert np.array_equal(paths[:, 0], measure.node_ids[0])


class TestOverlaps:
    def test_gram_entries_are_levels(self, two_level):
        measure = build_cascade(two_level, derive_stream(2, 0, 0))
        indices = sample_replicas(measure, 6, derive_stream(2, 0, 1))
        R = measure.gram(indices)
        assert np.all(np.diag(R.entries) == 1.0)
        assert set(np.unique(R.entries)) <= {0.0, 0.5, 1.0}
        assert np.array_equal(R.entries, R.entries.T)

    def test_every_triple_is_ultrametric(self, two_level):
        measure = build_cascade(two_level, derive_stream(2, 0, 0))
        indices = sample_replicas(measure, 8, derive_stream(2, 0, 2))
        R = measure.gram(indices).entries
        for a, b, c in itertools.combinations(range(8), 3):
            smallest = sorted([R[a, b], R[a, c], R[b, c]])
            assert smallest[0] == smallest[1]

    def test_pair_law_is_a_probability(self, two_level):
        law = build_cascade(two_level, derive_stream(3, 0, 0)).pair_law()
        assert law.levels.tolist() == [0.0, 0.5, 1.0]
        assert np.all(law.masses >= 0)
        assert law.masses.sum() == pytest.approx(1.0)

    def test_pair_law_top_level_is_sum_of_squares(self, one_level):
        measure = build_cascade(one_level, derive_stream(3, 0, 0))
        assert measure.pair_law().masses[-1] == pytest.approx(np.dot(measure.weights, measure.weights))


class TestOverlapLaw:
    def test_closed_form_masses(self, two_level):
        law = cascade_overlap_law(two_level)
        assert law.masses == pytest.approx([0.3, 0.2, 0.5])

    def test_estimate_matches_closed_form(self, one_level):
        law = overlap_law(one_level, 1000, derive_stream(6, 1, 0), exact_inner=True)
        assert abs(law.masses[-1] - 0.5) <= max(5 * law.ses[-1], 0.03)
        assert law.masses.sum() == pytest.approx(1.0)

    def test_needs_enough_samples(self, one_level):
        with pytest.raises(ValueError):
            overlap_law(one_level, 10, derive_stream(0, 0, 0))

    def test_sampled_pair_estimate(self, one_level):
        law = overlap_law(one_level, 2000, derive_stream(6, 1, 0))
        assert law.masses.sum() == pytest.approx(1.0)
        assert np.all(law.ses > 0)
        assert abs(law.masses[-1] - 0.5) <= max(4 * law.ses[-1], 0.05)


class TestReplicaSampling:
    def test_single_leaf_measure_repeats_it(self):
        measure = FiniteMeasure(weights=np.array([1.0]), gram_matrix=np.eye(1))
        assert sample_replicas(measure, 5, derive_stream(0, 0, 0)).tolist() == [0] * 5

    def test_leaf_frequencies_match_weights(self, one_level):
        measure = build_cascade(one_level, derive_stream(12, 0, 0))
        draws = 1_000_000
        counts = np.bincount(sample_replicas(measure, draws, derive_stream(12, 0, 1)), minlength=measure.size)
        top = np.argsort(measure.weights)[::-1][:10]
        weights = measure.weights[top]
        se = np.sqrt(weights * (1 - weights) / draws)
        assert np.all(np.abs(counts[top] / draws - weights) <= 4 * se)
