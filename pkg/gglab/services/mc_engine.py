"""Reproducible outer-expectation estimation with batch-means errors.

Every outer sample gets its own counter-based stream keyed by the global
sample index, so the set of streams (and therefore every batch mean) does not
depend on how batches are scheduled across workers.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional

import numpy as np
from tqdm import tqdm

from gglab.services.schemas import EstimatorConfig, IdentityReport

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1

# stream families (the `worker_index` coordinate of derive_stream)
OUTER_STREAM = 0
MU_STREAM = 1
RESAMPLE_STREAM = 2

EXACT_TOL = 1e-12


def derive_stream(seed: int, worker_index: int, sample_index: int) -> np.random.Generator:
    """Return the Philox stream for one (seed, worker_index, sample_index) triple.

    Algorithm: Philox4x64-10 with the 128-bit key
    ``seed | worker_index << 64`` and the counter ``(0, 0, 0, sample_index)``.
    Each stream owns 2**192 counter blocks before it could reach the next
    sample's starting point.
    """
    if sample_index < 0 or worker_index < 0:
        raise ValueError("stream coordinates must be non-negative")
    key = (int(seed) & MASK64) | ((int(worker_index) & MASK64) << 64)
    counter = np.array([0, 0, 0, sample_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def resized(config: EstimatorConfig, n_outer: int) -> EstimatorConfig:
    """Copy of `config` with n_outer rounded down to a multiple of n_batches."""
    n_outer = max(config.n_batches, (n_outer // config.n_batches) * config.n_batches)
    return config.model_copy(update={"n_outer": n_outer})


def batch_se(batch_means: np.ndarray) -> np.ndarray:
    batch_means = np.asarray(batch_means, dtype=float)
    if batch_means.shape[0] < 2:
        return np.zeros(batch_means.shape[1:])
    return batch_means.std(axis=0, ddof=1) / np.sqrt(batch_means.shape[0])


def _batch_mean(values: np.ndarray) -> np.ndarray:
    return values.mean(axis=0)


def _run_batch(sampler, config: EstimatorConfig, stream: int, reduce, batch_index: int) -> np.ndarray:
    size = config.n_outer // config.n_batches
    start = batch_index * size
    values = np.array(
        [
            np.atleast_1d(np.asarray(sampler(derive_stream(config.seed, stream, i)), dtype=float))
            for i in range(start, start + size)
        ]
    )
    return reduce(values)


def _map_batches(sampler, config: EstimatorConfig, stream: int, desc: str, reduce) -> list:
    if config.n_outer < config.n_batches:
        raise ValueError("n_outer must be at least n_batches")
    job = partial(_run_batch, sampler, config, stream, reduce)
    batches = range(config.n_batches)
    if config.workers == 1:
        results = list(tqdm(map(job, batches), total=config.n_batches, desc=desc, ncols=70, disable=not config.progress))
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            results = list(
                tqdm(
                    executor.map(job, batches),
                    total=config.n_batches,
                    desc=desc,
                    ncols=70,
                    disable=not config.progress,
                )
            )
    logger.debug("ran %d samples in %d batches (%d workers)", config.n_outer, config.n_batches, config.workers)
    return results


def run_batches(
    sampler: Callable[[np.random.Generator], object],
    config: EstimatorConfig,
    stream: int = OUTER_STREAM,
    desc: str = "Outer samples",
) -> np.ndarray:
    """Run `sampler` over n_outer per-sample streams; return (n_batches, k) batch means.

    The sampler returns a scalar or a fixed-length vector per sample. Batches
    are contiguous blocks of sample indices reduced in batch order.
    """
    return np.vstack(_map_batches(sampler, config, stream, desc, _batch_mean))


def collect_samples(
    sampler: Callable[[np.random.Generator], object],
    config: EstimatorConfig,
    stream: int = OUTER_STREAM,
    desc: str = "Samples",
) -> np.ndarray:
    """Like run_batches but keep every per-sample vector, in sample order: (n_outer, k)."""
    return np.vstack(_map_batches(sampler, config, stream, desc, np.asarray))


@dataclass(frozen=True)
class PairedEstimate:
    lhs: float
    rhs: float
    se_lhs: float
    se_rhs: float
    se_diff: float
    n_outer: int


def paired_from_batches(lhs_batches, rhs_batches, n_outer: int) -> PairedEstimate:
    lhs_batches = np.asarray(lhs_batches, dtype=float)
    rhs_batches = np.asarray(rhs_batches, dtype=float)
    return PairedEstimate(
        lhs=float(lhs_batches.mean()),
        rhs=float(rhs_batches.mean()),
        se_lhs=float(batch_se(lhs_batches)),
        se_rhs=float(batch_se(rhs_batches)),
        se_diff=float(batch_se(lhs_batches - rhs_batches)),
        n_outer=n_outer,
    )


def run_paired(sampler, config: EstimatorConfig, desc: str = "Paired samples") -> PairedEstimate:
    """Estimate both sides of an identity from a sampler yielding (lhs, rhs)."""
    batches = run_batches(sampler, config, desc=desc)
    if batches.shape[1] != 2:
        raise ValueError("a paired sampler must yield exactly two values")
    return paired_from_batches(batches[:, 0], batches[:, 1], config.n_outer)


def z_score(lhs: float, rhs: float, se_diff: float) -> Optional[float]:
    """(lhs - rhs) / se_diff, with an exact-equality path for deterministic sides."""
    diff = lhs - rhs
    if se_diff <= EXACT_TOL:
        if abs(diff) <= EXACT_TOL * max(1.0, abs(lhs), abs(rhs)):
            return 0.0
        return float(np.copysign(np.inf, diff))
    return diff / se_diff


def identity_report(
    name: str, estimate: PairedEstimate, config: EstimatorConfig, wall_time_s: Optional[float] = None
) -> IdentityReport:
    z = z_score(estimate.lhs, estimate.rhs, estimate.se_diff)
    return IdentityReport(
        name=name,
        lhs=estimate.lhs,
        rhs=estimate.rhs,
        se_lhs=estimate.se_lhs,
        se_rhs=estimate.se_rhs,
        se_diff=estimate.se_diff,
        z=z,
        n_outer=estimate.n_outer,
        seed=config.seed,
        passed=bool(abs(z) <= config.z_max),
        wall_time_s=wall_time_s,
    )
