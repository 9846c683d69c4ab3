"""Random-measure targets: what an outer sample draws.

A target produces one realization of G per outer sample from its stream and
knows the overlap levels its realizations live on, so per-sample pair laws can
be averaged into an estimate of mu.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from gglab.measures.base import OverlapLaw
from gglab.measures.cascade import CascadeMeasure, build_cascade, cascade_overlap_law
from gglab.measures.finite_oracle import FiniteMeasure
from gglab.services.mc_engine import MU_STREAM, batch_se, resized, run_batches
from gglab.services.schemas import CascadeSpec, EstimatorConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CascadeTarget:
    spec: CascadeSpec
    name: str = "cascade"

    @property
    def levels(self) -> np.ndarray:
        return np.asarray(self.spec.qs, dtype=float)

    def draw(self, rng: np.random.Generator) -> CascadeMeasure:
        return build_cascade(self.spec, rng)

    def closed_form_law(self) -> Optional[OverlapLaw]:
        return cascade_overlap_law(self.spec)


@dataclass(frozen=True)
class FixedTarget:
    """A deterministic measure; the outer expectation is degenerate."""

    measure: FiniteMeasure
    name: str = "finite"

    @property
    def levels(self) -> np.ndarray:
        return self.measure.levels

    def draw(self, rng: np.random.Generator) -> FiniteMeasure:
        return self.measure

    def closed_form_law(self) -> Optional[OverlapLaw]:
        return self.measure.pair_law()


@dataclass(frozen=True)
class UniformWeightsTarget:
    """Fixed Gram matrix with i.i.d. uniform weights, renormalized.

    Such measures do not satisfy the Ghirlanda-Guerra identities; the target
    serves as a negative control.
    """

    gram_matrix: np.ndarray
    name: str = "uniform-weights"

    @classmethod
    def orthonormal(cls, m: int = 8) -> "UniformWeightsTarget":
        return cls(gram_matrix=np.eye(m))

    @property
    def levels(self) -> np.ndarray:
        return np.unique(self.gram_matrix)

    def draw(self, rng: np.random.Generator) -> FiniteMeasure:
        m = self.gram_matrix.shape[0]
        raw = 1.0 - rng.random(m)
        return FiniteMeasure(weights=raw / raw.sum(), gram_matrix=self.gram_matrix)

    def closed_form_law(self) -> Optional[OverlapLaw]:
        return None


@dataclass(frozen=True)
class CoupledBranchTarget:
    """Cascade whose Gram pattern of the top atoms is tied to the top weight.

    After the usual build, weights are swapped between leaves so that the two
    heaviest leaves share their depth-1 branch exactly when the heaviest
    weight is at least `split`, and sit in different branches otherwise. The
    weight law is unchanged but the pattern now depends on the weights.
    """

    spec: CascadeSpec
    split: float = 0.4
    name: str = "coupled-branch"

    def __post_init__(self):
        if self.spec.depth < 2:
            raise ValueError("a coupled-branch target needs a cascade of depth >= 2")

    @property
    def levels(self) -> np.ndarray:
        return np.asarray(self.spec.qs, dtype=float)

    def draw(self, rng: np.random.Generator) -> CascadeMeasure:
        measure = build_cascade(self.spec, rng)
        weights = measure.weights.copy()
        order = np.lexsort((np.arange(weights.shape[0]), -weights))
        top, second = order[0], order[1]
        branch = measure.node_ids[0]
        share = weights[top] >= self.split
        if (branch[second] == branch[top]) == share:
            return measure

        if share:
            candidates = branch == branch[top]
        else:
            candidates = branch != branch[top]
        candidates[top] = False
        pool = np.flatnonzero(candidates)
        partner = pool[np.argmax(weights[pool])]
        weights[[second, partner]] = weights[[partner, second]]
        return measure.with_weights(weights)

    def closed_form_law(self) -> Optional[OverlapLaw]:
        return None


def _aligned_masses(law: OverlapLaw, levels: np.ndarray) -> np.ndarray:
    masses = np.zeros(levels.shape[0])
    positions = np.searchsorted(levels, law.levels)
    np.add.at(masses, positions, law.masses)
    return masses


def estimate_target_law(target, config: EstimatorConfig) -> OverlapLaw:
    """Average the exact per-realization pair laws over n_mu fresh draws (MU stream)."""
    levels = target.levels

    def sampler(rng):
        return _aligned_masses(target.draw(rng).pair_law(), levels)

    mu_config = resized(config, config.n_mu)
    batches = run_batches(sampler, mu_config, stream=MU_STREAM, desc="Estimating mu")
    return OverlapLaw(levels=levels, masses=batches.mean(axis=0), ses=batch_se(batches))


def target_law(target, config: EstimatorConfig) -> OverlapLaw:
    """mu for a target: exact for fixed measures, else closed form or estimate per `mu_source`."""
    if isinstance(target, FixedTarget):
        return target.closed_form_law()
    if config.mu_source == "closed_form":
        law = target.closed_form_law()
        if law is not None:
            return law
        logger.warning("target %s has no closed-form overlap law; estimating it", target.name)
    return estimate_target_law(target, config)
