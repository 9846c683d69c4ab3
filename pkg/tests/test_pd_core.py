"""Tests for the Poisson-Dirichlet sampler."""

import numpy as np
import pytest

from gglab.measures.pd_core import (
    from_arrivals,
    log_points,
    sample_log_points,
    sample_pd,
    sample_pd_many,
    second_moment,
    sum_of_squares,
)
from gglab.services.mc_engine import derive_stream
from gglab.services.schemas import ZetaParam


class TestArrivals:
    """Points computed from explicit arrival times."""

    def test_first_point_from_unit_arrival(self):
        vector = from_arrivals(0.5, [1.0, 2.0, 3.0, 4.0])
        assert np.exp(vector.log_points[0]) == pytest.approx(4.0)

    def test_weights_normalized_and_decreasing(self):
        vector = from_arrivals(0.3, np.arange(1.0, 51.0))
        assert vector.weights.sum() == pytest.approx(1.0)
        assert np.all(np.diff(vector.weights) <= 0)
        assert vector.truncation == 50

    def test_tail_mass_estimate_is_small_and_positive(self):
        vector = from_arrivals(0.5, np.arange(1.0, 1001.0))
        assert 0.0 < vector.tail_mass_estimate < 0.1

    def test_log_points_vectorized(self):
        arrivals = np.array([[1.0, 2.0], [3.0, 4.0]])
        logs = log_points(0.5, arrivals)
        assert logs.shape == (2, 2)
        assert logs[0, 0] > logs[0, 1]

    def test_rejects_decreasing_arrivals(self):
        with pytest.raises(ValueError):
            from_arrivals(0.5, [2.0, 1.0])

    def test_accepts_zeta_param(self):
        vector = from_arrivals(ZetaParam(zeta=0.5), [1.0, 2.0])
        assert vector.zeta == 0.5


class TestSampling:
    """Random PD(zeta) draws."""

    def test_same_stream_same_weights(self):
        first = sample_pd(0.5, 128, derive_stream(3, 0, 9))
        second = sample_pd(0.5, 128, derive_stream(3, 0, 9))
        assert np.array_equal(first.weights, second.weights)

    def test_different_streams_differ(self):
        first = sample_pd(0.5, 128, derive_stream(3, 0, 9))
        second = sample_pd(0.5, 128, derive_stream(3, 0, 10))
        assert not np.array_equal(first.weights, second.weights)

    @pytest.mark.parametrize("zeta", [0.0, 1.0, -0.2, 1.5])
    def test_rejects_zeta_outside_unit_interval(self, zeta):
        with pytest.raises(ValueError):
            sample_pd(zeta, 16, derive_stream(0, 0, 0))

    def test_rejects_short_truncation(self):
        with pytest.raises(ValueError):
            sample_pd(0.5, 1, derive_stream(0, 0, 0))

    def test_mean_tail_mass_decreases_with_truncation(self):
        means = []
        for K in (8, 64, 512):
            _, tails = sample_pd_many(0.5, K, 1000, derive_stream(6, 0, K))
            means.append(tails.mean())
        assert means[0] > means[1] > means[2] > 0.0

    def test_many_rows_are_normalized(self):
        weights, tails = sample_pd_many(0.4, 64, 10, derive_stream(1, 0, 0))
        assert weights.shape == (10, 64)
        assert tails.shape == (10,)
        assert np.allclose(weights.sum(axis=1), 1.0)


class TestSecondMoment:
    """E sum v_l^2 = 1 - zeta."""

    def test_estimate_matches_one_minus_zeta(self):
        estimate = second_moment(0.5, 1024, 3200, derive_stream(5, 0, 0))
        assert abs(estimate.estimate - 0.5) <= max(5 * estimate.se, 0.02)
        assert estimate.n_samples == 3200
        assert estimate.truncation == 1024

    def test_tail_correction_lowers_the_sum_of_squares(self):
        logs = sample_log_points(0.8, 4, 256, derive_stream(2, 0, 0))
        plain = sum_of_squares(0.8, logs)
        corrected = sum_of_squares(0.8, logs, tail_correction=True)
        assert np.all(corrected < plain)

    def test_sum_of_squares_matches_weights(self):
        vector = sample_pd(0.5, 64, derive_stream(4, 0, 0))
        assert sum_of_squares(0.5, vector.log_points)[0] == pytest.approx(vector.second_moment)

    def test_needs_enough_samples(self):
        with pytest.raises(ValueError):
            second_moment(0.5, 64, 50, derive_stream(0, 0, 0))

    def test_short_truncation_is_biased_high(self):
        short = second_moment(0.2, 2, 2000, derive_stream(7, 0, 0))
        long = second_moment(0.2, 4096, 2000, derive_stream(7, 0, 1))
        assert short.estimate - long.estimate > 3 * np.hypot(short.se, long.se)
        assert short.estimate > 0.8
        assert short.tail_mass_mean > long.tail_mass_mean
