"""Finite-depth Ruelle probability cascades.

Leaves are addressed by their flat index in the row-major grid of
`spec.branching`; their tree coordinates are never needed to evaluate
overlaps because the node id at every depth already encodes the prefix.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from gglab.measures.base import OverlapLaw, OverlapMatrix, cumulative_table, sample_indices
from gglab.measures.pd_core import sample_log_points
from gglab.services.errors import BudgetExceededError
from gglab.services.schemas import CascadeSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CascadeMeasure:
    spec: CascadeSpec
    weights: np.ndarray
    node_ids: np.ndarray  # (depth, n_leaves): id of each leaf's ancestor at depths 1..r
    qs: np.ndarray
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "cdf", cumulative_table(self.weights))

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def q_star(self) -> float:
        return float(self.qs[-1])

    @property
    def leaf_paths(self) -> np.ndarray:
        """(n_leaves, depth) tree coordinates of every leaf."""
        return np.stack(np.unravel_index(np.arange(self.size), self.spec.branching), axis=1)

    def prefix_lengths(self, indices: Sequence[int]) -> np.ndarray:
        """(len(indices), n_leaves) common-prefix length with every leaf."""
        indices = np.asarray(indices, dtype=int)
        same = self.node_ids[:, None, :] == self.node_ids[:, indices][:, :, None]
        return same.sum(axis=0)

    def overlap_columns(self, indices: Sequence[int]) -> np.ndarray:
        return self.qs[self.prefix_lengths(indices)]

    def overlap_column(self, index: int) -> np.ndarray:
        return self.overlap_columns([index])[0]

    def gram(self, indices: Sequence[int]) -> OverlapMatrix:
        indices = np.asarray(indices, dtype=int)
        return OverlapMatrix(self.overlap_columns(indices)[:, indices])

    def node_weights(self, depth: int) -> np.ndarray:
        """Total leaf weight under every node at `depth` (1-based)."""
        return np.bincount(self.node_ids[depth - 1], weights=self.weights)

    def pair_law(self) -> OverlapLaw:
        """Exact law of R_{1,2} under G x G for this realization."""
        r = self.spec.depth
        squares = np.ones(r + 2)
        for depth in range(1, r + 1):
            nodes = self.node_weights(depth)
            squares[depth] = np.dot(nodes, nodes)
        squares[r + 1] = 0.0
        masses = squares[:-1] - squares[1:]
        return OverlapLaw(levels=self.qs.copy(), masses=np.clip(masses, 0.0, None))

    def with_weights(self, weights: np.ndarray) -> "CascadeMeasure":
        return replace(self, weights=np.asarray(weights, dtype=float))


def leaf_node_ids(branching: Sequence[int]) -> np.ndarray:
    """(depth, n_leaves) ancestor ids in row-major order."""
    n_leaves = int(np.prod(branching))
    leaves = np.arange(n_leaves)
    ids = []
    for depth in range(1, len(branching) + 1):
        below = int(np.prod(branching[depth:]))
        ids.append(leaves // below)
    return np.array(ids)


def build_cascade(spec: CascadeSpec, rng: np.random.Generator) -> CascadeMeasure:
    """Draw one truncated Ruelle cascade.

    Every node of depth p-1 gets its own K_p decreasing PD(zeta_p) Poisson
    points. A leaf's weight is the product of the unnormalized points along
    its path, renormalized over all leaves.
    """
    if spec.n_leaves > spec.leaf_budget:
        raise BudgetExceededError(f"cascade has {spec.n_leaves} leaves, budget is {spec.leaf_budget}")

    node_ids = leaf_node_ids(spec.branching)
    log_weights = np.zeros(spec.n_leaves)
    parents = 1
    for depth, (zeta, K) in enumerate(zip(spec.zetas, spec.branching), start=1):
        logs = sample_log_points(zeta, parents, K, rng).ravel()
        log_weights += logs[node_ids[depth - 1]]
        parents *= K

    weights = np.exp(log_weights - logsumexp(log_weights))
    return CascadeMeasure(spec=spec, weights=weights, node_ids=node_ids, qs=np.asarray(spec.qs, dtype=float))


def sample_replicas(measure, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. atom indices drawn from the measure's weights."""
    return sample_indices(measure.cdf, n, rng)


def cascade_overlap_law(spec: CascadeSpec) -> OverlapLaw:
    """Closed-form mu for the untruncated cascade: masses zeta_1, zeta_{p+1} - zeta_p, 1 - zeta_r."""
    zetas = np.asarray(spec.zetas, dtype=float)
    masses = np.diff(np.concatenate([[0.0], zetas, [1.0]]))
    return OverlapLaw(levels=np.asarray(spec.qs, dtype=float), masses=masses)


def overlap_law(
    spec: CascadeSpec,
    n_samples: int,
    rng: np.random.Generator,
    exact_inner: bool = False,
    n_batches: int = 32,
) -> OverlapLaw:
    """Monte Carlo estimate of mu over fresh cascades.

    By default one replica pair is drawn per cascade and the level it hits is
    counted. With `exact_inner` the exact pair law of each cascade is averaged
    instead, which removes the inner sampling noise.
    """
    if n_samples < 1000:
        raise ValueError("overlap_law needs at least 1000 samples")
    levels = np.asarray(spec.qs, dtype=float)
    per_sample = np.zeros((n_samples, levels.shape[0]))
    for i in range(n_samples):
        measure = build_cascade(spec, rng)
        if exact_inner:
            per_sample[i] = measure.pair_law().masses
        else:
            first, second = sample_replicas(measure, 2, rng)
            per_sample[i, measure.prefix_lengths([first])[0, second]] = 1.0

    batch_means = np.array([chunk.mean(axis=0) for chunk in np.array_split(per_sample, n_batches)])
    ses = batch_means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return OverlapLaw(levels=levels, masses=per_sample.mean(axis=0), ses=ses)
