from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class OverlapMatrix:
    """Symmetric array R of overlaps between sampled replicas (0-based storage)."""

    entries: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def pair(self, l: int, lp: int) -> float:
        """R_{l,l'} with 1-based replica labels."""
        return float(self.entries[l - 1, lp - 1])

    def off_diagonal(self) -> np.ndarray:
        rows, cols = np.triu_indices(self.n, k=1)
        return self.entries[rows, cols]


@dataclass(frozen=True)
class OverlapLaw:
    """Discrete law of R_{1,2} on a finite set of levels."""

    levels: np.ndarray
    masses: np.ndarray
    ses: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.ses is None:
            object.__setattr__(self, "ses", np.zeros_like(self.masses))

    def integral(self, step) -> float:
        """∫ step dμ for a StepFunction (or any vectorized callable)."""
        return float(np.dot(self.masses, step(self.levels)))

    def mass(self, lower=-np.inf, upper=np.inf) -> float:
        """μ([lower, upper]) for closed bounds."""
        inside = (self.levels >= lower) & (self.levels <= upper)
        return float(self.masses[inside].sum())


def cumulative_table(weights: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return cdf


def sample_indices(cdf: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws by binary search on a cumulative table."""
    if n < 1:
        raise ValueError("need at least one replica")
    picks = np.searchsorted(cdf, rng.random(n), side="right")
    return np.minimum(picks, cdf.shape[0] - 1)
