"""Shared fixtures: small cascades, a hand-built ultrametric measure and a fast estimator config."""

import numpy as np
import pytest

from gglab.measures.finite_oracle import FiniteMeasure
from gglab.services.schemas import CascadeSpec, EstimatorConfig


@pytest.fixture
def config():
    return EstimatorConfig(
        n_outer=640,
        n_batches=32,
        seed=11,
        truncation=256,
        n_mu=640,
        mu_source="closed_form",
        pd_threshold=1e-8,
    )


@pytest.fixture
def one_level():
    return CascadeSpec.one_level(0.5, n_atoms=256)


@pytest.fixture
def two_level():
    return CascadeSpec(depth=2, zetas=[0.3, 0.5], qs=[0.0, 0.5, 1.0], branching=[16, 64])


@pytest.fixture
def two_level_wide():
    return CascadeSpec(depth=2, zetas=[0.3, 0.7], qs=[0.0, 0.4, 1.0], branching=[16, 64])


@pytest.fixture
def ultrametric_measure():
    """Two clusters of two atoms; overlap 1/2 inside a cluster, 0 across."""
    gram = np.array(
        [
            [1.0, 0.5, 0.0, 0.0],
            [0.5, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.5],
            [0.0, 0.0, 0.5, 1.0],
        ]
    )
    return FiniteMeasure(weights=np.array([0.4, 0.3, 0.2, 0.1]), gram_matrix=gram)


@pytest.fixture
def non_ultrametric_gram():
    return np.array([[1.0, 0.8, 0.8], [0.8, 1.0, 0.2], [0.8, 0.2, 1.0]])
