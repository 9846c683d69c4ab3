"""Structural consequences: ultrametricity, positivity, the zero/positive
dichotomy, constrained replica sequences, and exchangeability of the Gram
pattern of the heaviest atoms.
"""

import itertools
import logging
from typing import List, Optional

import numpy as np
from scipy.stats import chi2_contingency
from tqdm import tqdm

from gglab.identities.functionals import FunctionFamily, StepFunction, fbar_scores
from gglab.measures.cascade import sample_replicas
from gglab.measures.targets import target_law
from gglab.services.mc_engine import OUTER_STREAM, RESAMPLE_STREAM, batch_se, collect_samples, derive_stream
from gglab.services.schemas import (
    EstimatorConfig,
    ExchangeabilityReport,
    PositivityReport,
    Prop2Report,
    SequenceReport,
    UltrametricReport,
)

logger = logging.getLogger(__name__)

ZERO_MASS = 1e-10
TRIANGLE_TOL = 1e-12
SIGNIFICANCE = 0.01
N_RESAMPLES = 1000


def ultrametric_flags(entries: np.ndarray, q: Optional[float]) -> np.ndarray:
    """[event R12>=q, R13>=q, R23<q ; two smallest of the three overlaps differ]."""
    r12, r13, r23 = entries[0, 1], entries[0, 2], entries[1, 2]
    event = q is not None and r12 >= q and r13 >= q and r23 < q
    smallest = np.sort([r12, r13, r23])
    return np.array([float(event), float(smallest[1] - smallest[0] > TRIANGLE_TOL)])


def check_ultrametric(target, q: Optional[float], config: EstimatorConfig, name: str = "ultra") -> UltrametricReport:
    """Count violations of the ultrametric event over n_outer sampled triples."""

    def sampler(rng):
        measure = target.draw(rng)
        return ultrametric_flags(measure.gram(sample_replicas(measure, 3, rng)).entries, q)

    flags = collect_samples(sampler, config, desc=f"Checking {name}")
    violations, triangles = (int(x) for x in flags.sum(axis=0))
    if violations or triangles:
        logger.warning("%s: %d event violations, %d non-ultrametric triangles", name, violations, triangles)
    return UltrametricReport(
        name=name,
        n_outer=config.n_outer,
        seed=config.seed,
        passed=violations == 0 and triangles == 0,
        q=q,
        violations=violations,
        rate=violations / config.n_outer,
        triangle_violations=triangles,
    )


def check_positivity(
    target, eps: float, config: EstimatorConfig, n: int = 4, name: str = "positivity"
) -> PositivityReport:
    """Estimate mu([-1, -eps]) and the smallest Gram sum over sampled n-tuples.

    The mass below -eps is the exact pair law of each realization, so
    measures without negative overlaps give exactly zero.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def sampler(rng):
        measure = target.draw(rng)
        negative = measure.pair_law().mass(upper=-eps)
        gram_sum = measure.gram(sample_replicas(measure, n, rng)).entries.sum()
        return np.array([negative, gram_sum])

    values = collect_samples(sampler, config, desc=f"Checking {name}")
    batch_means = np.array([chunk.mean() for chunk in np.array_split(values[:, 0], config.n_batches)])
    estimate = float(values[:, 0].mean())
    min_gram_sum = float(values[:, 1].min())
    flagged = estimate > 0.0
    return PositivityReport(
        name=name,
        n_outer=config.n_outer,
        seed=config.seed,
        passed=not flagged and min_gram_sum >= -TRIANGLE_TOL,
        eps=eps,
        estimate=estimate,
        se=float(batch_se(batch_means)),
        flagged=flagged,
        min_gram_sum=min_gram_sum,
    )


def dichotomy_violation(measure, indices, family: FunctionFamily, tau: float = ZERO_MASS) -> bool:
    """True if exactly one of G{Fbar > tau}, G{Fbar < -tau} is zero (below tau)."""
    scores = fbar_scores(family, measure, indices)
    positive = float(measure.weights[scores > tau].sum())
    negative = float(measure.weights[scores < -tau].sum())
    return (positive > tau) != (negative > tau)


def check_prop2(target, n: int, family: FunctionFamily, config: EstimatorConfig, name: str = "prop2") -> Prop2Report:
    """Rate of tuples whose positive and negative Fbar sets are not both positive or both null."""
    if family.n != n:
        raise ValueError(f"family has {family.n} functions, expected {n}")

    def sampler(rng):
        measure = target.draw(rng)
        return float(dichotomy_violation(measure, sample_replicas(measure, n, rng), family))

    violations = int(collect_samples(sampler, config, desc=f"Checking {name}").sum())
    return Prop2Report(
        name=name,
        n_outer=config.n_outer,
        seed=config.seed,
        passed=violations == 0,
        n=n,
        tau=ZERO_MASS,
        violations=violations,
        rate=violations / config.n_outer,
    )


def packing_bound(B: StepFunction) -> Optional[float]:
    """1 + 1/eps when B lies in [-1, -eps] for some eps > 0, else None."""
    sup = B.support_sup()
    if sup is None or sup >= 0:
        return None
    return 1.0 + 1.0 / -sup


def greedy_sequence(measure, start: int, B: StepFunction, n_target: int) -> List[int]:
    """Extend [start] by the heaviest atom whose overlaps with all members lie in B."""
    members = [start]
    admissible = B(measure.overlap_column(start)) != 0
    while len(members) < n_target and admissible.any():
        candidates = np.flatnonzero(admissible)
        chosen = int(candidates[np.argmax(measure.weights[candidates])])
        members.append(chosen)
        admissible &= B(measure.overlap_column(chosen)) != 0
    return members


def find_constrained_sequence(
    target,
    B: StepFunction,
    n_target: int,
    config: EstimatorConfig,
    n_trials: int = 100,
    name: str = "sequence",
) -> SequenceReport:
    """Greedily build replica sequences with all pairwise overlaps in B, one per trial."""
    if n_target < 1:
        raise ValueError("n_target must be positive")
    law = target_law(target, config)
    if law.integral(B) <= 0:
        logger.warning("mu(B) is zero; sequences are not expected to extend")

    lengths = []
    for trial in tqdm(range(n_trials), desc=f"Checking {name}", ncols=70, disable=not config.progress):
        rng = derive_stream(config.seed, OUTER_STREAM, trial)
        measure = target.draw(rng)
        start = int(sample_replicas(measure, 1, rng)[0])
        lengths.append(len(greedy_sequence(measure, start, B, n_target)))

    bound = packing_bound(B)
    return SequenceReport(
        name=name,
        n_outer=n_trials,
        seed=config.seed,
        passed=bound is None or max(lengths) <= bound,
        n_target=n_target,
        lengths=lengths,
        max_length=max(lengths),
        min_length=min(lengths),
        packing_bound=bound,
    )


def top_atoms(weights: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m heaviest atoms, ties broken by index."""
    return np.lexsort((np.arange(weights.shape[0]), -weights))[:m]


def pattern_code(level_index: np.ndarray, m: int, n_levels: int) -> int:
    """Encode the upper triangle of an m x m level-index matrix as one integer."""
    rows, cols = np.triu_indices(m, k=1)
    code = 0
    for value in level_index[rows, cols]:
        code = code * n_levels + int(value)
    return code


def association_statistic(weights: np.ndarray, codes: np.ndarray) -> float:
    """Between-group sum of squares of the weight vectors grouped by pattern."""
    overall = weights.mean(axis=0)
    total = 0.0
    for code in np.unique(codes):
        group = weights[codes == code]
        total += group.shape[0] * float(np.sum((group.mean(axis=0) - overall) ** 2))
    return total


def check_exchangeability(
    target,
    m: int,
    config: EstimatorConfig,
    alpha: float = SIGNIFICANCE,
    n_resamples: int = N_RESAMPLES,
    name: str = "exchange",
) -> ExchangeabilityReport:
    """Test the top-m Gram pattern for weak exchangeability and independence of the weights.

    Sample i is viewed through permutation i mod m!, so the rows of the
    contingency table (permutation x observed pattern) are independent.
    Independence uses a permutation test of the between-pattern spread of
    (v_1..v_m), shuffling patterns across samples.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    levels = target.levels
    permutations = list(itertools.permutations(range(m)))

    def sampler(rng):
        measure = target.draw(rng)
        if measure.size < m:
            return np.full(1 + m + m * m, np.nan)
        top = top_atoms(measure.weights, m)
        level_index = np.searchsorted(levels, measure.gram(top).entries)
        return np.concatenate([[0.0], measure.weights[top], level_index.ravel()])

    records = collect_samples(sampler, config, desc=f"Checking {name}")
    used = ~np.isnan(records[:, 0])
    n_skipped = int((~used).sum())
    if n_skipped:
        logger.warning("%s: %d samples had fewer than %d atoms", name, n_skipped, m)
    records = records[used]
    weights = records[:, 1 : 1 + m]
    patterns = records[:, 1 + m :].reshape(-1, m, m).astype(int)

    rows = np.arange(records.shape[0]) % len(permutations)
    permuted = [pattern_code(p[np.ix_(permutations[r], permutations[r])], m, len(levels)) for p, r in zip(patterns, rows)]
    columns, column_index = np.unique(permuted, return_inverse=True)
    table = np.zeros((len(permutations), columns.shape[0]))
    np.add.at(table, (rows, column_index), 1)
    table = table[table.sum(axis=1) > 0]
    if table.shape[0] < 2 or table.shape[1] < 2:
        chi2, chi2_p = 0.0, 1.0
    else:
        result = chi2_contingency(table)
        chi2, chi2_p = float(result[0]), float(result[1])

    codes = np.array([pattern_code(p, m, len(levels)) for p in patterns])
    observed = association_statistic(weights, codes)
    rng = derive_stream(config.seed, RESAMPLE_STREAM, 0)
    exceed = sum(association_statistic(weights, rng.permutation(codes)) >= observed for _ in range(n_resamples))
    association_p = (1 + exceed) / (1 + n_resamples)

    return ExchangeabilityReport(
        name=name,
        n_outer=config.n_outer,
        seed=config.seed,
        passed=chi2_p > alpha and association_p > alpha,
        m=m,
        n_used=int(used.sum()),
        n_skipped=n_skipped,
        chi2=chi2,
        chi2_p=chi2_p,
        association=observed,
        association_p=float(association_p),
        alpha=alpha,
    )
