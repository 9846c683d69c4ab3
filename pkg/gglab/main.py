"""Orchestration: turn resolved settings into targets and run checks."""

import logging
import re
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from gglab.identities import identity_checks, structural_checks
from gglab.identities.functionals import (
    FunctionFamily,
    OverlapProduct,
    PartitionSpec,
    StepFunction,
    WeightFunctional,
    four_set_inverse_square,
)
from gglab.measures.cascade import build_cascade, cascade_overlap_law
from gglab.measures.finite_oracle import load_finite_measure
from gglab.measures.pd_core import sample_pd
from gglab.measures.targets import CascadeTarget, CoupledBranchTarget, FixedTarget, UniformWeightsTarget, target_law
from gglab.services.config import (
    cascade_spec,
    estimator_config,
    family_steps,
    group_ends,
    parse_floats,
    parse_intervals,
    parse_ints,
    phi_from,
    resolve,
    sets_from,
    step_from,
)
from gglab.services.mc_engine import OUTER_STREAM, derive_stream
from gglab.services.schemas import EstimatorConfig

logger = logging.getLogger(__name__)

IDENTITY_CHECKS = ("gg", "main", "iterated", "weights", "th2a", "pd-identity", "prop1", "zeta")
STRUCTURAL_CHECKS = ("ultra", "positivity", "prop2", "sequence", "exchange")

FUNCTION_KEY = re.compile(r"^f\d+\.")


@dataclass
class RunContext:
    flags: Dict[str, object]
    file_values: Dict[str, str]
    env: Dict[str, object]
    config: EstimatorConfig

    def get(self, key, default=None, cast=None):
        return resolve(key, self.flags, self.file_values, self.env, default=default, cast=cast)

    @property
    def timing(self) -> bool:
        return bool(self.flags.get("timing"))


def make_context(flags: Dict[str, object], file_values: Dict[str, str], env: Dict[str, object]) -> RunContext:
    return RunContext(flags, file_values, env, estimator_config(flags, file_values, env))


def build_target(ctx: RunContext):
    """Cascade by default; `measure` loads a fixed finite measure, `target` selects a control."""
    measure_path = ctx.get("measure")
    if measure_path:
        return FixedTarget(load_finite_measure(measure_path))
    kind = ctx.get("target", default="cascade")
    if kind == "uniform":
        return UniformWeightsTarget.orthonormal(ctx.get("atoms", default=8, cast=int))
    spec = cascade_spec(ctx.flags, ctx.file_values, ctx.env, ctx.config.truncation)
    if kind == "cascade":
        return CascadeTarget(spec)
    if kind == "coupled":
        return CoupledBranchTarget(spec, split=ctx.get("split", default=0.4, cast=float))
    raise ValueError(f"unknown target {kind!r} (expected cascade, coupled or uniform)")


def _levels(target) -> np.ndarray:
    return np.asarray(target.levels, dtype=float)


def _default_q(target) -> float:
    levels = _levels(target)
    return float(levels[1] if levels.shape[0] > 2 else levels[-1])


def _t_values(ctx: RunContext, n: int, s_default: float = 0.5) -> List[float]:
    t = ctx.get("t", cast=parse_floats)
    if t is not None:
        t = parse_floats(t)
        if len(t) == 1 and n > 1:
            return t * n
        return t
    s = ctx.get("s", default=s_default, cast=float)
    return [s, -s] if n == 2 else [s] * n


def _family(ctx: RunContext, target, n: int, default: StepFunction) -> FunctionFamily:
    steps = family_steps(ctx.file_values, n)
    if not any(FUNCTION_KEY.match(key) for key in ctx.file_values):
        steps = [default] * n
    return FunctionFamily.from_law(steps, target_law(target, ctx.config))


def run_identity_check(kind: str, ctx: RunContext) -> List:
    """Run one identity check and return its reports."""
    config = ctx.config
    timing = ctx.timing

    if kind == "zeta":
        zeta = ctx.get("zeta", default=0.5, cast=float)
        return [identity_checks.check_zeta(zeta, config, timing=timing)]

    if kind == "pd-identity":
        zeta = ctx.get("zeta", default=0.5, cast=float)
        sizes = parse_ints(ctx.get("groups", default="1,1"))
        t = _t_values(ctx, sum(sizes))
        if ctx.get("form") == "two-group":
            return [identity_checks.check_pd_two_group(zeta, t[0], config, timing=timing)]
        return [identity_checks.check_pd_identity(zeta, sizes, t, config, timing=timing)]

    target = build_target(ctx)
    q_star = float(_levels(target)[-1])

    if kind == "gg":
        n = ctx.get("n", default=2, cast=int)
        psi = step_from(ctx.file_values, "psi") or StepFunction.point(q_star)
        f = phi_from(ctx.file_values)
        inner = ctx.get("inner", default="exact" if isinstance(target, UniformWeightsTarget) else "sampled")
        return [identity_checks.check_gg(target, n, f, psi, config, inner=inner, timing=timing)]

    if kind == "main":
        n = ctx.get("n", default=2, cast=int)
        family = _family(ctx, target, n, StepFunction.point(q_star))
        phi = phi_from(ctx.file_values)
        if not phi.pairs and "phi.scale" not in ctx.file_values and n >= 2:
            phi = OverlapProduct.of({(1, 2): StepFunction.point(q_star)})
        reports = [identity_checks.check_main(target, n, family, phi, config, timing=timing)]
        if ctx.flags.get("derivative"):
            reports.append(identity_checks.check_main_derivative(target, n, family, phi, config, timing=timing))
        return reports

    if kind == "iterated":
        ends = group_ends(parse_ints(ctx.get("groups", default="1,1")))
        t = ctx.get("s", default=0.5, cast=float)
        family = _family(ctx, target, ends[-1], StepFunction.indicator_lt(q_star, scale=t))
        return [identity_checks.check_iterated(target, ends, family, phi_from(ctx.file_values), config, timing=timing)]

    if kind in ("weights", "th2a"):
        n = ctx.get("n", default=2, cast=int)
        q = ctx.get("q", default=_default_q(target), cast=float)
        partition = PartitionSpec(tuple(sets_from(ctx.file_values, n, default=StepFunction.indicator_ge(q))))
        t = _t_values(ctx, n)
        s = ctx.get("s", default=0.5, cast=float)
        event = phi_from(ctx.file_values)
        if not event.pairs and n == 2:
            event = OverlapProduct.of({(1, 2): StepFunction.indicator_ge(q)})
        weight_fn = four_set_inverse_square(s) if n == 2 else (lambda W: float(W[0]))
        if kind == "th2a":
            reports = [identity_checks.check_th2a(target, n, partition, event, t, weight_fn, config, timing=timing)]
            reports.append(identity_checks.compare_th2a_paths(target, n, partition, event, t, weight_fn, config))
            return reports
        family = partition.family(t, target_law(target, config))
        phi = WeightFunctional(weight_fn=weight_fn, overlap=event)
        return [identity_checks.check_weight_invariance(target, n, family, partition, phi, config, timing=timing)]

    if kind == "prop1":
        q = ctx.get("q", default=_default_q(target), cast=float)
        s_values = parse_floats(ctx.get("s_values", default="0.5,1,2,4"))
        return [identity_checks.check_prop1_integral(target, q, s_values, config, timing=timing)]

    raise ValueError(f"unknown identity check {kind!r}")


def run_structural_check(kind: str, ctx: RunContext) -> List:
    config = ctx.config
    target = build_target(ctx)

    if kind == "ultra":
        q = ctx.get("q", default=_default_q(target), cast=float)
        return [structural_checks.check_ultrametric(target, q, config)]

    if kind == "positivity":
        eps = ctx.get("eps", default=0.1, cast=float)
        return [structural_checks.check_positivity(target, eps, config)]

    if kind == "prop2":
        n = ctx.get("n", default=2, cast=int)
        steps = family_steps(ctx.file_values, n)
        if all(step.is_zero for step in steps):
            member = StepFunction.indicator_ge(_default_q(target))
            steps = [member, member.scaled(-1.0)] + [StepFunction.constant(0.0)] * (n - 2)
        family = FunctionFamily.from_law(steps, target_law(target, config))
        return [structural_checks.check_prop2(target, n, family, config)]

    if kind == "sequence":
        intervals = ctx.get("b_intervals")
        if intervals:
            B = StepFunction.from_intervals(parse_intervals(intervals))
        else:
            B = step_from(ctx.file_values, "b") or StepFunction.from_intervals([(-1.0, float(_levels(target)[0]))])
        n_target = ctx.get("n_target", default=10, cast=int)
        trials = ctx.get("trials", default=100, cast=int)
        return [structural_checks.find_constrained_sequence(target, B, n_target, config, n_trials=trials)]

    if kind == "exchange":
        m = ctx.get("m", default=3, cast=int)
        return [structural_checks.check_exchangeability(target, m, config)]

    raise ValueError(f"unknown structural check {kind!r}")


def describe_pd(ctx: RunContext) -> Dict[str, object]:
    """One PD draw: leading weights and the tail diagnostic."""
    zeta = ctx.get("zeta", default=0.5, cast=float)
    sample = sample_pd(zeta, ctx.config.truncation, derive_stream(ctx.config.seed, OUTER_STREAM, 0))
    return {
        "name": "pd-sample",
        "zeta": zeta,
        "truncation": sample.truncation,
        "seed": ctx.config.seed,
        "leading_weights": [float(w) for w in sample.weights[:10]],
        "sum_of_squares": sample.second_moment,
        "tail_mass_estimate": sample.tail_mass_estimate,
    }


def describe_cascade(ctx: RunContext) -> Dict[str, object]:
    """Cascade parameters, the closed-form mu, and the pair law of one realization."""
    spec = cascade_spec(ctx.flags, ctx.file_values, ctx.env, ctx.config.truncation)
    measure = build_cascade(spec, derive_stream(ctx.config.seed, OUTER_STREAM, 0))
    realized = measure.pair_law()
    return {
        "name": "cascade-info",
        "depth": spec.depth,
        "zetas": spec.zetas,
        "qs": spec.qs,
        "branching": spec.branching,
        "n_leaves": spec.n_leaves,
        "seed": ctx.config.seed,
        "mu_closed_form": [float(m) for m in cascade_overlap_law(spec).masses],
        "sample_pair_law": [float(m) for m in realized.masses],
        "sample_max_weight": float(measure.weights.max()),
    }
