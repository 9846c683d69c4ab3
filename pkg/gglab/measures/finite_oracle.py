"""Exact Gibbs averages over small explicit measures."""

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from gglab.measures.base import OverlapLaw, OverlapMatrix, cumulative_table
from gglab.services.errors import BudgetExceededError

logger = logging.getLogger(__name__)

DEFAULT_ENUMERATION_BUDGET = 10**7
WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class FiniteMeasure:
    """A fixed measure: m atoms with weights and their Gram matrix."""

    weights: np.ndarray
    gram_matrix: np.ndarray
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        gram_matrix = np.asarray(self.gram_matrix, dtype=float)
        m = weights.shape[0]
        if weights.ndim != 1 or m < 1:
            raise ValueError("weights must be a non-empty vector")
        if np.any(weights <= 0):
            raise ValueError("weights must be strictly positive")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
        if gram_matrix.shape != (m, m):
            raise ValueError(f"gram matrix must be {m}x{m}, got {gram_matrix.shape}")
        if not np.array_equal(gram_matrix, gram_matrix.T):
            raise ValueError("gram matrix must be symmetric")
        if np.any(np.abs(gram_matrix) > 1.0) or np.any(np.diag(gram_matrix) > 1.0):
            raise ValueError("gram entries must lie in [-1, 1]")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "gram_matrix", gram_matrix)
        object.__setattr__(self, "cdf", cumulative_table(weights))

    @classmethod
    def uniform(cls, gram_matrix) -> "FiniteMeasure":
        gram_matrix = np.asarray(gram_matrix, dtype=float)
        m = gram_matrix.shape[0]
        return cls(weights=np.full(m, 1.0 / m), gram_matrix=gram_matrix)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def q_star(self) -> float:
        return float(np.max(np.diag(self.gram_matrix)))

    @property
    def levels(self) -> np.ndarray:
        return np.unique(self.gram_matrix)

    def overlap_columns(self, indices: Sequence[int]) -> np.ndarray:
        return self.gram_matrix[np.asarray(indices, dtype=int)]

    def overlap_column(self, index: int) -> np.ndarray:
        return self.gram_matrix[index]

    def gram(self, indices: Sequence[int]) -> OverlapMatrix:
        indices = np.asarray(indices, dtype=int)
        return OverlapMatrix(self.gram_matrix[np.ix_(indices, indices)])

    def pair_law(self) -> OverlapLaw:
        levels, inverse = np.unique(self.gram_matrix, return_inverse=True)
        pair_weights = np.outer(self.weights, self.weights)
        masses = np.bincount(inverse.ravel(), weights=pair_weights.ravel(), minlength=levels.shape[0])
        return OverlapLaw(levels=levels, masses=masses)


class KahanSum:
    """Compensated running sum."""

    def __init__(self):
        self.total = 0.0
        self._carry = 0.0

    def add(self, value: float) -> None:
        y = value - self._carry
        t = self.total + y
        self._carry = (t - self.total) - y
        self.total = t


def _check_budget(m: int, n: int, budget: int) -> None:
    if n < 0:
        raise ValueError("tuple length must be non-negative")
    if m**n > budget:
        raise BudgetExceededError(f"{m}^{n} tuples exceed the enumeration budget of {budget}")


def exact_tuple_average(
    measure: FiniteMeasure,
    n: int,
    integrand: Callable[[tuple], float],
    budget: int = DEFAULT_ENUMERATION_BUDGET,
) -> float:
    """Sum over all n-tuples of atoms, in lexicographic order, of weight product times integrand(tuple)."""
    _check_budget(measure.size, n, budget)
    total = KahanSum()
    for indices in itertools.product(range(measure.size), repeat=n):
        total.add(float(np.prod(measure.weights[list(indices)])) * integrand(indices))
    return total.total


def exact_average(
    measure: FiniteMeasure,
    n: int,
    functional: Callable[[OverlapMatrix], float],
    budget: int = DEFAULT_ENUMERATION_BUDGET,
) -> float:
    """<functional(R^n)> under G^{(x)n}, enumerated exactly."""
    return exact_tuple_average(measure, n, lambda indices: functional(measure.gram(indices)), budget)


def log_inner_exp_average(measure, indices: Sequence[int], family, mask: Optional[np.ndarray] = None) -> float:
    """log of sum_a w_a exp F(xi_a, sigma^1..sigma^n), optionally over a subset of atoms.

    `family` provides `atom_scores(columns)`; `columns` holds the overlaps of
    every atom with each replica in `indices`. An empty subset gives -inf.
    """
    columns = measure.overlap_columns(indices) if len(indices) else np.empty((0, measure.size))
    scores = family.atom_scores(columns)
    log_terms = np.log(measure.weights) + scores
    if mask is not None:
        log_terms = log_terms[np.asarray(mask, dtype=bool)]
        if log_terms.size == 0:
            return -np.inf
    return float(logsumexp(log_terms))


def exact_inner_exp_average(measure, indices: Sequence[int], family, mask: Optional[np.ndarray] = None) -> float:
    """<exp F(sigma, sigma^1..sigma^n)>_ over sigma only (exact over atoms)."""
    return float(np.exp(log_inner_exp_average(measure, indices, family, mask)))


def load_finite_measure(path) -> FiniteMeasure:
    """Read a measure file: first line the m weights, then m rows of the Gram matrix.

    Values may be separated by whitespace or commas. Weights that sum to 1 up
    to 1e-6 (rounded decimals) are renormalized.
    """
    text = Path(path).read_text(encoding="utf-8")
    rows = [line.replace(",", " ").split() for line in text.splitlines()]
    rows = [row for row in rows if row and not row[0].startswith("#")]
    if len(rows) < 2:
        raise ValueError(f"{path}: expected a weight line followed by gram rows")
    weights = np.array([float(x) for x in rows[0]])
    gram_matrix = np.array([[float(x) for x in row] for row in rows[1:]])
    if abs(weights.sum() - 1.0) > 1e-6:
        raise ValueError(f"{path}: weights sum to {weights.sum()}, not 1")
    logger.debug("loaded finite measure with %d atoms from %s", weights.shape[0], path)
    return FiniteMeasure(weights=weights / weights.sum(), gram_matrix=gram_matrix)
