"""Tests for the paired identity checks.

Positive checks run small Monte Carlo batches on fixed seeds; the identities
hold for the untruncated measures, so every report must sit within z_max.
"""

import numpy as np
import pytest

from gglab.identities import identity_checks
from gglab.identities.functionals import (
    FunctionFamily,
    OverlapProduct,
    PartitionSpec,
    StepFunction,
    WeightFunctional,
)
from gglab.measures.finite_oracle import FiniteMeasure
from gglab.measures.targets import CascadeTarget, FixedTarget, target_law


def pair(l, lp, step):
    return OverlapProduct.of({(l, lp): step})


class TestSecondMoment:
    def test_zeta_check_passes(self, config):
        report = identity_checks.check_zeta(0.5, config.model_copy(update={"truncation": 1024}))
        assert report.passed
        assert report.rhs == 0.5
        assert report.wall_time_s is None

    def test_zeta_check_uses_the_absolute_tolerance(self, config):
        strict = config.model_copy(update={"truncation": 1024, "z_max": 1e-9})
        report = identity_checks.check_zeta(0.5, strict)
        assert report.passed
        assert abs(report.lhs - report.rhs) <= max(3 * report.se_diff, 0.01)

    def test_moment_tolerance(self):
        assert identity_checks.moment_within_tolerance(0.505, 0.5, 0.001)
        assert identity_checks.moment_within_tolerance(0.52, 0.5, 0.01)
        assert not identity_checks.moment_within_tolerance(0.52, 0.5, 0.005)

    def test_timing_is_recorded_on_request(self, config):
        report = identity_checks.check_zeta(0.3, config, timing=True)
        assert report.wall_time_s is not None


class TestGhirlandaGuerra:
    def test_one_level_cascade(self, config, one_level):
        report = identity_checks.check_gg(
            CascadeTarget(one_level), 2, pair(1, 2, StepFunction.point(1.0)), StepFunction.point(1.0), config
        )
        assert report.passed, report

    def test_two_level_cascade(self, config, two_level):
        f = OverlapProduct.of({(1, 2): StepFunction.point(0.5), (2, 3): StepFunction.indicator_ge(0.5)})
        report = identity_checks.check_gg(CascadeTarget(two_level), 3, f, StepFunction.indicator_ge(0.5), config)
        assert report.passed, report

    def test_fixed_nonuniform_measure_fails_exactly(self, config):
        measure = FiniteMeasure(weights=np.array([0.7, 0.3]), gram_matrix=np.eye(2))
        small = config.model_copy(update={"n_outer": 32})
        report = identity_checks.check_gg(
            FixedTarget(measure), 2, pair(1, 2, StepFunction.point(1.0)), StepFunction.point(1.0), small, inner="exact"
        )
        assert report.se_diff == 0.0
        assert not report.passed

    def test_exact_inner_matches_sampled_integrands(self, ultrametric_measure):
        f = pair(1, 2, StepFunction.indicator_ge(0.5))
        psi = StepFunction.point(1.0)
        exact = identity_checks.gg_exact_components(ultrametric_measure, 2, f, psi, 10**6)
        assert exact[1] == pytest.approx(ultrametric_measure.pair_law().mass(lower=0.5))

    def test_needs_two_replicas(self, config, one_level):
        with pytest.raises(ValueError):
            identity_checks.check_gg(CascadeTarget(one_level), 1, OverlapProduct.constant(), StepFunction.point(1.0), config)

    def test_f_must_fit_the_replicas(self, config, one_level):
        with pytest.raises(ValueError):
            identity_checks.check_gg(
                CascadeTarget(one_level), 2, pair(1, 3, StepFunction.point(1.0)), StepFunction.point(1.0), config
            )


class TestMainIdentity:
    def test_two_level_mixed_family(self, config, two_level):
        target = CascadeTarget(two_level)
        family = identity_checks.family_for(
            target, [StepFunction.indicator_ge(0.5), StepFunction.point(1.0, -0.5)], config
        )
        report = identity_checks.check_main(target, 2, family, pair(1, 2, StepFunction.indicator_ge(0.5)), config)
        assert report.passed, report

    def test_zero_family_is_exact(self, config, two_level):
        report = identity_checks.check_main(
            CascadeTarget(two_level), 2, FunctionFamily.zero(2), pair(1, 2, StepFunction.point(1.0)), config
        )
        assert report.z == 0.0
        assert report.lhs == report.rhs

    def test_derivative_vanishes(self, config, two_level):
        target = CascadeTarget(two_level)
        family = identity_checks.family_for(target, [StepFunction.indicator_ge(0.5), StepFunction.constant(0.0)], config)
        report = identity_checks.check_main_derivative(target, 2, family, pair(1, 2, StepFunction.point(0.5)), config)
        assert report.passed, report
        assert report.rhs == 0.0

    def test_family_size_must_match(self, config, two_level):
        with pytest.raises(ValueError):
            identity_checks.check_main(CascadeTarget(two_level), 3, FunctionFamily.zero(2), OverlapProduct.constant(), config)

    def test_oracle_agreement(self, config, ultrametric_measure):
        family = FunctionFamily.from_law(
            [StepFunction.indicator_ge(0.3), StepFunction.point(0.0, -0.5)], ultrametric_measure.pair_law()
        )
        report = identity_checks.check_oracle_agreement(
            ultrametric_measure, family, pair(1, 2, StepFunction.indicator_ge(0.3)), config
        )
        assert report.passed
        assert report.n_outer == 16


class TestIteratedIdentity:
    def test_poisson_dirichlet_example(self, config, one_level):
        target = CascadeTarget(one_level)
        family = identity_checks.family_for(target, [StepFunction.indicator_lt(1.0, 0.5)] * 2, config)
        report = identity_checks.check_iterated(target, (1, 2), family, OverlapProduct.constant(), config)
        assert report.passed, report

    def test_two_level_last_group(self, config, two_level):
        target = CascadeTarget(two_level)
        family = identity_checks.family_for(
            target,
            [StepFunction.indicator_ge(0.5), StepFunction.point(1.0, -0.5), StepFunction.indicator_lt(0.5, 0.3)],
            config,
        )
        report = identity_checks.check_iterated(
            target, (1, 3), family, pair(2, 3, StepFunction.indicator_ge(0.5)), config
        )
        assert report.passed, report

    def test_phi_must_depend_on_the_last_group(self, config, two_level):
        with pytest.raises(ValueError):
            identity_checks.check_iterated(
                CascadeTarget(two_level), (1, 3), FunctionFamily.zero(3), pair(1, 2, StepFunction.point(1.0)), config
            )


class TestWeightInvariance:
    @pytest.fixture
    def specialization(self, config, two_level):
        target = CascadeTarget(two_level)
        return target, identity_checks.n2_specialization(0.5, 1.0, target_law(target, config))

    def test_general_path(self, config, specialization):
        target, (partition, t, family, event, weight_fn) = specialization
        phi = WeightFunctional(weight_fn=weight_fn, overlap=event)
        report = identity_checks.check_weight_invariance(target, 2, family, partition, phi, config)
        assert report.passed, report

    def test_closed_form_path(self, config, specialization):
        target, (partition, t, family, event, weight_fn) = specialization
        report = identity_checks.check_th2a(target, 2, partition, event, t, weight_fn, config)
        assert report.passed, report

    def test_paths_agree_sample_by_sample(self, config, specialization):
        target, (partition, t, family, event, weight_fn) = specialization
        small = config.model_copy(update={"n_outer": 320})
        report = identity_checks.compare_th2a_paths(target, 2, partition, event, t, weight_fn, small)
        assert report.passed, report

    def test_event_must_force_the_sets(self):
        partition = PartitionSpec.upper_sets((0.5, 0.5))
        event = pair(1, 2, StepFunction.indicator_ge(0.2))
        with pytest.raises(ValueError):
            identity_checks.validate_event(event, partition, 2)


class TestPoissonDirichlet:
    def test_two_distinct_indices(self, config):
        report = identity_checks.check_pd_identity(0.5, [1, 1], [0.5, -0.5], config)
        assert report.passed, report
        assert report.lhs == pytest.approx(0.5, abs=0.1)

    def test_single_group(self, config):
        report = identity_checks.check_pd_identity(0.5, [2], [0.25, 0.25], config)
        assert report.passed, report

    def test_two_group_sum(self, config):
        report = identity_checks.check_pd_two_group(0.5, 0.5, config)
        assert report.passed, report
        assert report.lhs == 1.0

    def test_distinct_tuples_respect_threshold(self):
        v = np.array([0.5, 0.3, 0.15, 0.05])
        tuples = identity_checks.distinct_tuples(v, 2, 0.01, 1000)
        assert all(a != b for a, b in tuples)
        assert all(v[a] * v[b] >= 0.01 for a, b in tuples)
        assert len(tuples) == 10

    def test_many_groups_not_supported(self, config):
        with pytest.raises(NotImplementedError):
            identity_checks.check_pd_identity(0.5, [1, 1, 1, 1], [0.1] * 4, config)

    def test_t_length_must_match(self, config):
        with pytest.raises(ValueError):
            identity_checks.check_pd_identity(0.5, [1, 1], [0.1], config)


class TestIntegralIdentity:
    def test_base_identity_and_sweep(self, config, two_level):
        report = identity_checks.check_prop1_integral(CascadeTarget(two_level), 0.5, [0.5, 1.0, 2.0], config)
        assert report.passed, report
        assert [point.s for point in report.sweep] == [0.5, 1.0, 2.0]
        assert report.monotone
