"""Paired Monte Carlo checks of the invariance identities.

Every check draws one realization of G per outer sample, samples a replica
tuple from it, and evaluates both sides on that same tuple. Inner averages
over sigma are exact sums over atoms.
"""

import logging
import math
import time
from typing import Optional, Sequence

import numpy as np

from gglab.identities.functionals import (
    FunctionFamily,
    OverlapProduct,
    PartitionSpec,
    StepFunction,
    WeightFunctional,
    apply_T,
    eval_F_l,
    eval_Z_p,
    four_set_inverse_square,
    four_set_weights,
    gamma_t,
    log_delta_t,
    log_density,
    partition_weights,
    transform_t,
)
from gglab.measures.cascade import sample_replicas
from gglab.measures.finite_oracle import FiniteMeasure, exact_average, exact_tuple_average
from gglab.measures.pd_core import sample_log_points, sample_pd, sum_of_squares
from gglab.measures.targets import target_law
from gglab.services.errors import BudgetExceededError
from gglab.services.mc_engine import (
    batch_se,
    collect_samples,
    identity_report,
    paired_from_batches,
    run_batches,
    run_paired,
)
from gglab.services.schemas import AgreementReport, EstimatorConfig, IdentityReport, Prop1Report, SweepPoint

logger = logging.getLogger(__name__)

DERIVATIVE_STEP = 0.05
AGREEMENT_TOL = 1e-10
MOMENT_SE_FACTOR = 3.0
MOMENT_ABS_TOL = 0.01


def family_for(target, f: Sequence[StepFunction], config: EstimatorConfig) -> FunctionFamily:
    """Attach the target's mu-integrals to f_1..f_n."""
    return FunctionFamily.from_law(f, target_law(target, config))


def _timed(started: float, timing: bool) -> Optional[float]:
    return round(time.perf_counter() - started, 3) if timing else None


# --- Ghirlanda-Guerra -------------------------------------------------------


def gg_integrands(measure, indices: Sequence[int], f: OverlapProduct, psi: StepFunction) -> np.ndarray:
    """(f psi(R_{1,n+1}), f, psi(R_{1,2}), sum_{l>=2} f psi(R_{1,l})) for one tuple.

    The new replica sigma^{n+1} (and sigma^2 in the middle term) is averaged
    exactly over atoms given sigma^1.
    """
    R = measure.gram(indices)
    f_value = f(R)
    inner = float(np.dot(measure.weights, psi(measure.overlap_column(indices[0]))))
    tail = sum(psi(R.entries[0, l]) for l in range(1, R.n))
    return np.array([f_value * inner, f_value, inner, f_value * tail])


def gg_exact_components(measure: FiniteMeasure, n: int, f: OverlapProduct, psi: StepFunction, budget: int) -> np.ndarray:
    """The same four quantities as gg_integrands, enumerated exactly over n+1 replicas."""
    a = exact_average(measure, n + 1, lambda R: f(R.entries[:n, :n]) * psi(R.entries[0, n]), budget)
    b = exact_average(measure, n, lambda R: f(R), budget)
    c = exact_average(measure, 2, lambda R: psi(R.entries[0, 1]), budget)
    d = exact_average(measure, n, lambda R: f(R) * sum(psi(R.entries[0, l]) for l in range(1, n)), budget)
    return np.array([a, b, c, d])


def check_gg(
    target,
    n: int,
    f: OverlapProduct,
    psi: StepFunction,
    config: EstimatorConfig,
    inner: str = "sampled",
    name: str = "gg",
    timing: bool = False,
) -> IdentityReport:
    """E<f psi(R_{1,n+1})> against (1/n) E<f> E<psi(R_{1,2})> + (1/n) sum_{l=2}^n E<f psi(R_{1,l})>.

    Args:
        target: measure source; one realization is drawn per outer sample.
        n: number of replicas in f, at least 2.
        f: bounded functional of the overlaps among sigma^1..sigma^n.
        psi: step function applied to the overlap with the new replica.
        inner: "sampled" draws the tuple sigma^1..sigma^n; "exact" enumerates
            every tuple of a finite realization.

    Returns:
        IdentityReport: both sides with batch-means standard errors.
    """
    if n < 2:
        raise ValueError("the Ghirlanda-Guerra check needs n >= 2")
    if f.max_replica > n:
        raise ValueError(f"f references replica {f.max_replica} but n = {n}")
    if inner not in ("sampled", "exact"):
        raise ValueError(f"unknown inner mode {inner!r}")
    started = time.perf_counter()

    def sampler(rng):
        measure = target.draw(rng)
        if inner == "exact":
            return gg_exact_components(measure, n, f, psi, config.enumeration_budget)
        return gg_integrands(measure, sample_replicas(measure, n, rng), f, psi)

    batches = run_batches(sampler, config, desc=f"Checking {name}")
    a, b, c, d = batches.T
    b_bar, c_bar = b.mean(), c.mean()
    # delta-method linearization of the product of means, batch by batch
    rhs_batches = (b_bar * c + c_bar * b - b_bar * c_bar) / n + d / n
    estimate = paired_from_batches(a, rhs_batches, config.n_outer)
    return identity_report(name, estimate, config, _timed(started, timing))


# --- main identity and its iteration ---------------------------------------


def main_integrands(measure, indices: Sequence[int], family: FunctionFamily, phi: OverlapProduct) -> np.ndarray:
    phi_value = phi(measure.gram(indices))
    if phi_value == 0.0:
        return np.zeros(2)
    return np.array([phi_value, phi_value * math.exp(log_density(family, measure, indices))])


def check_main(
    target,
    n: int,
    family: FunctionFamily,
    phi: OverlapProduct,
    config: EstimatorConfig,
    name: str = "main",
    timing: bool = False,
) -> IdentityReport:
    """E<Phi> against E<Phi exp(sum_l F_l(sigma^l)) / <exp F>_^n>."""
    if family.n != n:
        raise ValueError(f"family has {family.n} functions, expected {n}")
    if phi.max_replica > n:
        raise ValueError(f"Phi references replica {phi.max_replica} but n = {n}")
    started = time.perf_counter()

    def sampler(rng):
        measure = target.draw(rng)
        return main_integrands(measure, sample_replicas(measure, n, rng), family, phi)

    estimate = run_paired(sampler, config, desc=f"Checking {name}")
    return identity_report(name, estimate, config, _timed(started, timing))


def check_main_derivative(
    target,
    n: int,
    family: FunctionFamily,
    phi: OverlapProduct,
    config: EstimatorConfig,
    t: float = DERIVATIVE_STEP,
    name: str = "main-derivative",
    timing: bool = False,
) -> IdentityReport:
    """Central difference in t of the right side with f scaled by t; it must vanish.

    The derivative at t = 0 is E<Phi (sum_l F_l(sigma^l) - n <F>_)>, which is
    zero exactly when the Ghirlanda-Guerra identities hold for this f and Phi.
    """
    if family.n != n:
        raise ValueError(f"family has {family.n} functions, expected {n}")
    if t <= 0:
        raise ValueError("the difference step must be positive")
    started = time.perf_counter()
    up, down = family.scaled(t), family.scaled(-t)

    def sampler(rng):
        measure = target.draw(rng)
        indices = sample_replicas(measure, n, rng)
        phi_value = phi(measure.gram(indices))
        if phi_value == 0.0:
            return np.zeros(2)
        slope = (math.exp(log_density(up, measure, indices)) - math.exp(log_density(down, measure, indices))) / (2 * t)
        return np.array([phi_value * slope, 0.0])

    estimate = run_paired(sampler, config, desc=f"Checking {name}")
    return identity_report(name, estimate, config, _timed(started, timing))


def _last_group(group_ends: Sequence[int]) -> range:
    start = group_ends[-2] if len(group_ends) > 1 else 0
    return range(start + 1, group_ends[-1] + 1)


def check_iterated(
    target,
    group_ends: Sequence[int],
    family: FunctionFamily,
    phi: OverlapProduct,
    config: EstimatorConfig,
    name: str = "iterated",
    timing: bool = False,
) -> IdentityReport:
    """E<Phi> against E<Z^1...Z^r Phi> for Phi depending on the last group only."""
    group_ends = tuple(int(e) for e in group_ends)
    last = _last_group(group_ends)
    for l, lp in phi.pairs:
        if l not in last or lp not in last:
            raise ValueError(f"Phi uses R_{{{l},{lp}}} outside the last group {list(last)}")
    n = group_ends[-1]
    if family.n != n:
        raise ValueError(f"family has {family.n} functions, expected {n}")
    started = time.perf_counter()

    def sampler(rng):
        measure = target.draw(rng)
        indices = sample_replicas(measure, n, rng)
        phi_value = phi(measure.gram(indices))
        if phi_value == 0.0:
            return np.zeros(2)
        z_product = math.prod(eval_Z_p(group_ends, family, measure, indices, p) for p in range(1, len(group_ends) + 1))
        return np.array([phi_value, phi_value * z_product])

    estimate = run_paired(sampler, config, desc=f"Checking {name}")
    return identity_report(name, estimate, config, _timed(started, timing))


# --- weight invariance ------------------------------------------------------


def weights_integrands(
    measure,
    indices: Sequence[int],
    family: FunctionFamily,
    partition: PartitionSpec,
    phi: WeightFunctional,
) -> np.ndarray:
    """(phi(R, W), phi(R, T(W)) exp(sum F_l) / <exp F>^n) on the general path."""
    R = measure.gram(indices)
    W = partition_weights(partition, measure, indices)
    lhs = phi(R, W)
    if phi.overlap(R) == 0.0:
        return np.array([lhs, 0.0])
    transformed = apply_T(W, family, measure, indices, partition)
    return np.array([lhs, phi(R, transformed) * math.exp(log_density(family, measure, indices))])


def check_weight_invariance(
    target,
    n: int,
    family: FunctionFamily,
    partition: PartitionSpec,
    phi: WeightFunctional,
    config: EstimatorConfig,
    name: str = "weights",
    timing: bool = False,
) -> IdentityReport:
    """E<phi(R^n, W)> against E<phi(R^n, T(W)) exp(sum F_l) / <exp F>^n>."""
    if family.n != n or partition.n > n:
        raise ValueError("family and partition must refer to the n replicas")
    started = time.perf_counter()

    def sampler(rng):
        measure = target.draw(rng)
        return weights_integrands(measure, sample_replicas(measure, n, rng), family, partition, phi)

    estimate = run_paired(sampler, config, desc=f"Checking {name}")
    return identity_report(name, estimate, config, _timed(started, timing))


def validate_event(event: OverlapProduct, partition: PartitionSpec, n: int) -> None:
    """The event on R^n must force R_{l,l'} into B_l and B_{l'} for every l < l' <= n."""
    if event.max_replica > n:
        raise ValueError(f"the event references replica {event.max_replica} but n = {n}")
    unconstrained = StepFunction.constant(1.0)
    for l in range(1, n + 1):
        for lp in range(l + 1, n + 1):
            factor = event.factor(l, lp) or unconstrained
            if not (factor.implies(partition.sets[l - 1]) and factor.implies(partition.sets[lp - 1])):
                raise ValueError(f"the event does not force R_{{{l},{lp}}} into B_{l} and B_{lp}")


def th2a_integrands(
    measure,
    indices: Sequence[int],
    event: OverlapProduct,
    partition: PartitionSpec,
    t: Sequence[float],
    gamma: float,
    weight_fn,
) -> np.ndarray:
    """(I(R in B) phi(W), I(R in B) phi(T_t(W)) e^{gamma_t} / Delta_t^n) on the closed-form path."""
    indicator = event(measure.gram(indices))
    if indicator == 0.0:
        return np.zeros(2)
    W = partition_weights(partition, measure, indices)
    factor = math.exp(gamma - partition.n * log_delta_t(W, t))
    return np.array([indicator * weight_fn(W), indicator * weight_fn(transform_t(W, t)) * factor])


def check_th2a(
    target,
    n: int,
    partition: PartitionSpec,
    event: OverlapProduct,
    t: Sequence[float],
    weight_fn,
    config: EstimatorConfig,
    name: str = "th2a",
    timing: bool = False,
) -> IdentityReport:
    """E<I(R in B) phi(W)> against E<I(R in B) phi(T_t(W)) e^{gamma_t} / Delta_t^n>.

    Args:
        partition: one set B_l per replica; W is the weight of the cells it cuts.
        event: overlap event I(R in B) on the n replicas.
        t: one tilt per replica.
        weight_fn: bounded function of the weight vector W.

    Returns:
        IdentityReport: the untilted side as lhs, the tilted side as rhs.
    """
    if partition.n != n or len(t) != n:
        raise ValueError("need one set B_l and one t_l per replica")
    validate_event(event, partition, n)
    started = time.perf_counter()
    gamma = gamma_t(t, partition.sets, target_law(target, config))

    def sampler(rng):
        measure = target.draw(rng)
        return th2a_integrands(measure, sample_replicas(measure, n, rng), event, partition, t, gamma, weight_fn)

    estimate = run_paired(sampler, config, desc=f"Checking {name}")
    return identity_report(name, estimate, config, _timed(started, timing))


def compare_th2a_paths(
    target,
    n: int,
    partition: PartitionSpec,
    event: OverlapProduct,
    t: Sequence[float],
    weight_fn,
    config: EstimatorConfig,
    name: str = "th2a-paths",
) -> AgreementReport:
    """Per-sample agreement of the closed-form and general weight-transform paths."""
    validate_event(event, partition, n)
    law = target_law(target, config)
    family = partition.family(t, law)
    gamma = gamma_t(t, partition.sets, law)
    phi = WeightFunctional(weight_fn=weight_fn, overlap=event)

    def sampler(rng):
        measure = target.draw(rng)
        indices = sample_replicas(measure, n, rng)
        closed = th2a_integrands(measure, indices, event, partition, t, gamma, weight_fn)
        general = weights_integrands(measure, indices, family, partition, phi)
        return np.abs(closed - general) / (1.0 + np.abs(general))

    diffs = collect_samples(sampler, config, desc=f"Comparing {name}")
    worst = float(diffs.max())
    return AgreementReport(
        name=name,
        n_outer=config.n_outer,
        seed=config.seed,
        passed=worst <= AGREEMENT_TOL,
        max_abs_diff=worst,
        tolerance=AGREEMENT_TOL,
    )


def n2_specialization(q: float, s: float, law) -> tuple:
    """Four-set inputs with B_1 = B_2 = [q, 1], t = (s, -s) and the inverse-square phi."""
    partition = PartitionSpec.upper_sets((q, q))
    t = (s, -s)
    family = partition.family(t, law)
    event = OverlapProduct.of({(1, 2): StepFunction.indicator_ge(q)})
    return partition, t, family, event, four_set_inverse_square(s)


# --- Poisson-Dirichlet identities ------------------------------------------


def distinct_tuples(v: np.ndarray, r: int, threshold: float, budget: int) -> np.ndarray:
    """Ordered tuples of distinct indices whose weight product is at least `threshold`.

    `v` must be nonincreasing, so every extension is a prefix of the indices.
    """
    v = np.asarray(v, dtype=float)
    tuples = np.flatnonzero(v >= threshold)[:, None]
    products = v[tuples[:, 0]]
    for _ in range(1, r):
        counts = np.searchsorted(-v, -(threshold / products), side="right")
        total = int(counts.sum())
        if total > budget:
            raise BudgetExceededError(f"{total} candidate tuples exceed the enumeration budget of {budget}")
        owner = np.repeat(np.arange(products.shape[0]), counts)
        offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        tuples = np.column_stack([tuples[owner], offsets])
        products = products[owner] * v[offsets]
    distinct = np.ones(tuples.shape[0], dtype=bool)
    for i in range(r):
        for j in range(i + 1, r):
            distinct &= tuples[:, i] != tuples[:, j]
    return tuples[distinct]


def pd_identity_terms(v: np.ndarray, zeta: float, sizes: Sequence[int], s: Sequence[float], threshold: float, budget: int):
    """Both sides of the Poisson-Dirichlet identity for one weight sequence."""
    sizes = np.asarray(sizes)
    s = np.asarray(s, dtype=float)
    n = int(sizes.sum())
    tuples = distinct_tuples(v, sizes.shape[0], threshold, budget)
    picked = v[tuples]
    summand = np.prod(picked**sizes, axis=1)
    base = np.dot(picked, np.exp(s)) + 1.0 - picked.sum(axis=1)
    log_factor = np.dot(sizes - zeta, s) - n * np.log(base)
    return float(summand.sum()), float(np.dot(summand, np.exp(log_factor)))


def check_pd_identity(
    zeta: float,
    sizes: Sequence[int],
    t: Sequence[float],
    config: EstimatorConfig,
    name: str = "pd-identity",
    timing: bool = False,
) -> IdentityReport:
    """E sum v_{l_1}^{n_1}..v_{l_r}^{n_r} against the reweighted sum with s_p = sum_{j in I_p} t_j."""
    sizes = [int(k) for k in sizes]
    if not sizes or min(sizes) < 1:
        raise ValueError("group sizes must be positive")
    if len(sizes) > 3:
        raise NotImplementedError("distinct-index sums are enumerated for r <= 3 only")
    if len(t) != sum(sizes):
        raise ValueError(f"need {sum(sizes)} values of t, got {len(t)}")
    ends = np.cumsum([0] + sizes)
    s = [float(sum(t[ends[p] : ends[p + 1]])) for p in range(len(sizes))]
    started = time.perf_counter()

    def sampler(rng):
        v = sample_pd(zeta, config.truncation, rng).weights
        return pd_identity_terms(v, zeta, sizes, s, config.pd_threshold, config.enumeration_budget)

    estimate = run_paired(sampler, config, desc=f"Checking {name}")
    return identity_report(name, estimate, config, _timed(started, timing))


def pd_two_group_sum(v: np.ndarray, zeta: float, t: float, threshold: float, budget: int) -> float:
    """<Z^1 Z^2> for the two singleton groups with f_1 = f_2 = t I(x < 1)."""
    pairs = distinct_tuples(v, 2, threshold, budget)
    va, vb = v[pairs[:, 0]], v[pairs[:, 1]]
    growth = math.exp(t)
    scale = math.exp(2 * zeta * t)
    off = va * vb * scale / ((va + growth * (1 - va)) * (va + vb + growth * (1 - va - vb)))
    diag = v**2 * scale / ((v + growth * (1 - v)) * (v + growth**2 * (1 - v)))
    return float(off.sum() + diag.sum())


def check_pd_two_group(
    zeta: float, t: float, config: EstimatorConfig, name: str = "pd-two-group", timing: bool = False
) -> IdentityReport:
    """1 against E sum_{l != l'} ... + E sum_l ... for PD(zeta) weights."""
    started = time.perf_counter()

    def sampler(rng):
        v = sample_pd(zeta, config.truncation, rng).weights
        return 1.0, pd_two_group_sum(v, zeta, t, config.pd_threshold, config.enumeration_budget)

    estimate = run_paired(sampler, config, desc=f"Checking {name}")
    return identity_report(name, estimate, config, _timed(started, timing))


def moment_within_tolerance(estimate: float, target: float, se: float) -> bool:
    """|estimate - target| <= max(3 SE, 0.01)."""
    return abs(estimate - target) <= max(MOMENT_SE_FACTOR * se, MOMENT_ABS_TOL)


def check_zeta(zeta: float, config: EstimatorConfig, name: str = "zeta", timing: bool = False) -> IdentityReport:
    """E sum_l v_l^2 against 1 - zeta.

    The report keeps the z-score; `pass` follows moment_within_tolerance,
    not z_max.
    """
    started = time.perf_counter()

    def sampler(rng):
        logs = sample_log_points(zeta, 1, config.truncation, rng)
        return float(sum_of_squares(zeta, logs, config.tail_correction)[0]), 1.0 - zeta

    estimate = run_paired(sampler, config, desc=f"Checking {name}")
    report = identity_report(name, estimate, config, _timed(started, timing))
    passed = moment_within_tolerance(estimate.lhs, estimate.rhs, estimate.se_diff)
    return report.model_copy(update={"passed": passed})


# --- the integral identity behind the dichotomy ---------------------------


def prop1_integrands(measure, indices: Sequence[int], q: float, s_values: Sequence[float]) -> np.ndarray:
    """[I/(W_3+W_4)^2, G x G(R_{1,2} >= q), I/(W_1 e^-s + W_2 e^-s + W_3 + W_4)^2 for each s]."""
    values = np.zeros(2 + len(s_values))
    values[1] = measure.pair_law().mass(lower=q)
    if measure.gram(indices).entries[0, 1] < q:
        return values
    W = partition_weights(PartitionSpec.upper_sets((q, q)), measure, indices)
    W1, W2, W3, W4 = four_set_weights(W)
    with np.errstate(divide="ignore"):
        values[0] = 1.0 / (W3 + W4) ** 2
        damp = np.exp(-np.asarray(s_values, dtype=float))
        values[2:] = 1.0 / ((W1 + W2) * damp + W3 + W4) ** 2
    return values


def check_prop1_integral(
    target,
    q: float,
    s_values: Sequence[float],
    config: EstimatorConfig,
    name: str = "prop1",
    timing: bool = False,
) -> Prop1Report:
    """E<I(R_{1,2} >= q) / (W_3 + W_4)^2> against mu([q, 1]), plus the pre-limit s-sweep.

    The sweep integrand increases with s towards the limit, so its estimates
    must be nondecreasing within noise.
    """
    s_values = [float(s) for s in s_values]
    started = time.perf_counter()

    def sampler(rng):
        measure = target.draw(rng)
        return prop1_integrands(measure, sample_replicas(measure, 2, rng), q, s_values)

    batches = run_batches(sampler, config, desc=f"Checking {name}")
    estimate = paired_from_batches(batches[:, 0], batches[:, 1], config.n_outer)
    means = batches[:, 2:].mean(axis=0)
    ses = batch_se(batches[:, 2:]) if s_values else np.zeros(0)
    sweep = [SweepPoint(s=s, value=float(m), se=float(e)) for s, m, e in zip(s_values, means, ses)]
    monotone = all(
        b.value - a.value >= -config.z_max * math.hypot(a.se, b.se) for a, b in zip(sweep, sweep[1:])
    )
    base = identity_report(name, estimate, config, _timed(started, timing))
    return Prop1Report(
        **base.model_dump(exclude={"passed"}),
        passed=base.passed and monotone,
        q=q,
        sweep=sweep,
        monotone=monotone,
    )


# --- oracle agreement -------------------------------------------------------


def scalar_main_rhs(measure: FiniteMeasure, indices: Sequence[int], family: FunctionFamily, phi: OverlapProduct) -> float:
    """The main-identity weighted integrand recomputed atom by atom through exact enumeration."""
    n = family.n
    numerator = sum(eval_F_l(family, measure, l, indices[l - 1], indices) for l in range(1, n + 1))

    def exp_F(atom):
        R = measure.gram(tuple(atom) + tuple(indices))
        return math.exp(sum(step(R.pair(1, l + 1)) for l, step in enumerate(family.f, start=1)))

    denominator = exact_tuple_average(measure, 1, exp_F)
    return phi(measure.gram(indices)) * math.exp(numerator) / denominator**n


def check_oracle_agreement(
    measure: FiniteMeasure,
    family: FunctionFamily,
    phi: OverlapProduct,
    config: EstimatorConfig,
    name: str = "oracle",
) -> AgreementReport:
    """Compare the vectorized per-tuple integrand with its enumerated recomputation on every tuple."""
    n = family.n
    worst = 0.0

    def record(indices):
        nonlocal worst
        fast = main_integrands(measure, np.asarray(indices), family, phi)[1]
        slow = scalar_main_rhs(measure, indices, family, phi)
        worst = max(worst, abs(fast - slow) / (1.0 + abs(slow)))
        return 0.0

    exact_tuple_average(measure, n, record, config.enumeration_budget)
    return AgreementReport(
        name=name,
        n_outer=measure.size**n,
        seed=config.seed,
        passed=worst <= AGREEMENT_TOL,
        max_abs_diff=worst,
        tolerance=AGREEMENT_TOL,
    )
