"""Poisson-Dirichlet PD(zeta) weight sequences.

Points are generated by inverting the arrival times of a unit-rate Poisson
process, u_k = (zeta * Gamma_k) ** (-1 / zeta), which yields them already in
decreasing order. Everything is kept in log space until the final
normalization.
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import logsumexp

from gglab.services.mc_engine import batch_se
from gglab.services.schemas import MomentEstimate, ZetaParam

logger = logging.getLogger(__name__)

# rows of (rows, K) exponentials generated at once by the vectorized samplers
CHUNK_ELEMENTS = 1 << 20


def _zeta_value(zeta: Union[float, ZetaParam]) -> float:
    if isinstance(zeta, ZetaParam):
        return zeta.zeta
    return ZetaParam(zeta=zeta).zeta


def _check_truncation(K: int) -> int:
    if int(K) != K or K < 2:
        raise ValueError(f"truncation K must be an integer >= 2, got {K}")
    return int(K)


def log_points(zeta: float, arrivals: np.ndarray) -> np.ndarray:
    """log u_k for given arrival times Gamma_k (any shape)."""
    return -(np.log(zeta) + np.log(arrivals)) / zeta


def log_tail_mass(zeta: float, log_last: np.ndarray) -> np.ndarray:
    """log of the expected mass u_K**(1-zeta) / (1-zeta) of the points below u_K."""
    return (1.0 - zeta) * log_last - np.log1p(-zeta)


def log_tail_square(zeta: float, log_last: np.ndarray) -> np.ndarray:
    """log of the expected sum of squares u_K**(2-zeta) / (2-zeta) below u_K."""
    return (2.0 - zeta) * log_last - np.log(2.0 - zeta)


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    log_points: np.ndarray
    tail_mass_estimate: float
    zeta: float
    truncation: int

    @property
    def second_moment(self) -> float:
        return float(np.dot(self.weights, self.weights))


def from_arrivals(zeta: Union[float, ZetaParam], arrivals) -> WeightVector:
    """Build the normalized weight vector for explicit arrival times."""
    zeta = _zeta_value(zeta)
    arrivals = np.asarray(arrivals, dtype=float)
    K = _check_truncation(arrivals.shape[0])
    if np.any(arrivals <= 0) or np.any(np.diff(arrivals) < 0):
        raise ValueError("arrival times must be positive and nondecreasing")
    logs = log_points(zeta, arrivals)
    log_total = logsumexp(logs)
    return WeightVector(
        weights=np.exp(logs - log_total),
        log_points=logs,
        tail_mass_estimate=float(np.exp(log_tail_mass(zeta, logs[-1]) - log_total)),
        zeta=zeta,
        truncation=K,
    )


def sample_pd(zeta: Union[float, ZetaParam], K: int, rng: np.random.Generator) -> WeightVector:
    """Draw one truncated PD(zeta) sequence of K weights."""
    zeta = _zeta_value(zeta)
    K = _check_truncation(K)
    return from_arrivals(zeta, np.cumsum(rng.standard_exponential(K)))


def sample_log_points(zeta: float, rows: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """(rows, K) unnormalized log points, one independent sequence per row."""
    arrivals = np.cumsum(rng.standard_exponential((rows, K)), axis=1)
    return log_points(zeta, arrivals)


def sample_pd_many(zeta: Union[float, ZetaParam], K: int, n: int, rng: np.random.Generator):
    """Draw n sequences at once.

    Returns:
        tuple: (weights of shape (n, K), tail mass estimates of shape (n,))
    """
    zeta = _zeta_value(zeta)
    K = _check_truncation(K)
    logs = sample_log_points(zeta, n, K, rng)
    log_totals = logsumexp(logs, axis=1)
    weights = np.exp(logs - log_totals[:, None])
    tails = np.exp(log_tail_mass(zeta, logs[:, -1]) - log_totals)
    return weights, tails


def sum_of_squares(zeta: float, logs: np.ndarray, tail_correction: bool = False) -> np.ndarray:
    """Sum of squared normalized weights for each row of log points.

    With `tail_correction`, the expected contribution of the points beyond the
    truncation is added to both the sum and the normalizer; the returned
    weights themselves are never modified.
    """
    logs = np.atleast_2d(logs)
    log_total = logsumexp(logs, axis=1)
    log_square = logsumexp(2.0 * logs, axis=1)
    if tail_correction:
        log_total = np.logaddexp(log_total, log_tail_mass(zeta, logs[:, -1]))
        log_square = np.logaddexp(log_square, log_tail_square(zeta, logs[:, -1]))
    return np.exp(log_square - 2.0 * log_total)


def second_moment(
    zeta: Union[float, ZetaParam],
    K: int,
    n_samples: int,
    rng: np.random.Generator,
    n_batches: int = 32,
    tail_correction: bool = False,
) -> MomentEstimate:
    """Monte Carlo mean of sum(v_l**2) with a batch-means standard error."""
    zeta = _zeta_value(zeta)
    K = _check_truncation(K)
    if n_samples < 100:
        raise ValueError("second_moment needs at least 100 samples")

    rows = max(1, CHUNK_ELEMENTS // K)
    moments = []
    tails = []
    done = 0
    while done < n_samples:
        size = min(rows, n_samples - done)
        logs = sample_log_points(zeta, size, K, rng)
        moments.append(sum_of_squares(zeta, logs, tail_correction))
        tails.append(np.exp(log_tail_mass(zeta, logs[:, -1]) - logsumexp(logs, axis=1)))
        done += size
    moments = np.concatenate(moments)
    tails = np.concatenate(tails)

    batch_means = np.array([chunk.mean() for chunk in np.array_split(moments, min(n_batches, n_samples))])
    logger.debug("second moment zeta=%s K=%d: mean tail mass %.3e", zeta, K, tails.mean())
    return MomentEstimate(
        estimate=float(moments.mean()),
        se=float(batch_se(batch_means)),
        n_samples=n_samples,
        truncation=K,
        tail_mass_mean=float(tails.mean()),
    )
