"""Functions of overlaps and the perturbation functionals built from them.

Replica labels are 1-based everywhere in this module (f_1..f_n, sigma^1..),
array storage is 0-based.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from gglab.measures.base import OverlapLaw, OverlapMatrix
from gglab.measures.finite_oracle import (
    DEFAULT_ENUMERATION_BUDGET,
    exact_tuple_average,
    log_inner_exp_average,
)


@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant function on [-1, 1].

    `values[i]` holds on the cell [breaks[i-1], breaks[i]) with the first
    cell starting at -1 and the last one closed at 1, so evaluation is
    right-continuous and I(x >= q), I(x < q) are exact complements.
    """

    breaks: Tuple[float, ...] = ()
    values: Tuple[float, ...] = (0.0,)
    _breaks: np.ndarray = field(init=False, repr=False, compare=False)
    _values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        breaks = tuple(float(b) for b in self.breaks)
        values = tuple(float(v) for v in self.values)
        if len(values) != len(breaks) + 1:
            raise ValueError(f"{len(breaks)} breakpoints need {len(breaks) + 1} values, got {len(values)}")
        if any(b < -1.0 or b > 1.0 for b in breaks):
            raise ValueError("breakpoints must lie in [-1, 1]")
        if any(b <= a for a, b in zip(breaks, breaks[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if not all(math.isfinite(v) for v in values):
            raise ValueError("step values must be finite")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_breaks", np.array(breaks))
        object.__setattr__(self, "_values", np.array(values))

    def __call__(self, x):
        result = self._values[np.searchsorted(self._breaks, x, side="right")]
        if np.ndim(result) == 0:
            return float(result)
        return result

    @property
    def bound(self) -> float:
        return float(np.max(np.abs(self._values)))

    @property
    def is_zero(self) -> bool:
        return not np.any(self._values)

    @classmethod
    def constant(cls, value: float = 0.0) -> "StepFunction":
        return cls((), (value,))

    @classmethod
    def indicator_ge(cls, q: float, scale: float = 1.0) -> "StepFunction":
        """scale * I(x >= q)."""
        if q <= -1.0:
            return cls.constant(scale)
        if q > 1.0:
            return cls.constant(0.0)
        return cls((q,), (0.0, scale))

    @classmethod
    def indicator_lt(cls, q: float, scale: float = 1.0) -> "StepFunction":
        """scale * I(x < q)."""
        return cls.indicator_ge(q).complement().scaled(scale)

    @classmethod
    def point(cls, q: float, scale: float = 1.0) -> "StepFunction":
        """scale * I(x = q)."""
        return cls.from_intervals([(q, q)], inside=scale)

    @classmethod
    def from_intervals(cls, intervals: Iterable[Tuple[float, float]], inside: float = 1.0, outside: float = 0.0):
        """inside on the union of closed intervals [a, b], outside elsewhere."""
        intervals = [(float(a), float(b)) for a, b in intervals]
        if any(b < a for a, b in intervals):
            raise ValueError("interval bounds must satisfy a <= b")
        cuts = set()
        for a, b in intervals:
            if -1.0 < a <= 1.0:
                cuts.add(a)
            upper = np.nextafter(b, np.inf)
            if -1.0 < upper <= 1.0:
                cuts.add(float(upper))
        breaks = sorted(cuts)
        starts = [-1.0] + breaks
        values = [inside if any(a <= s <= b for a, b in intervals) else outside for s in starts]
        return cls(tuple(breaks), tuple(values)).simplified()

    def simplified(self) -> "StepFunction":
        """Drop breakpoints between cells with equal values."""
        keep = [i for i in range(len(self.breaks)) if self.values[i] != self.values[i + 1]]
        values = [self.values[0]] + [self.values[i + 1] for i in keep]
        return StepFunction(tuple(self.breaks[i] for i in keep), tuple(values))

    def scaled(self, factor: float) -> "StepFunction":
        return StepFunction(self.breaks, tuple(factor * v for v in self.values))

    def complement(self) -> "StepFunction":
        """1 - f; the complement set for indicators."""
        return StepFunction(self.breaks, tuple(1.0 - v for v in self.values))

    def _cell_starts(self, other: "StepFunction") -> np.ndarray:
        return np.array([-1.0] + sorted(set(self.breaks) | set(other.breaks)))

    def implies(self, other: "StepFunction") -> bool:
        """True if other is nonzero wherever self is nonzero."""
        starts = self._cell_starts(other)
        return bool(np.all((self(starts) == 0) | (other(starts) != 0)))

    def support_sup(self) -> Optional[float]:
        """Supremum of {x : f(x) != 0}, or None for the zero function."""
        nonzero = np.flatnonzero(self._values)
        if nonzero.size == 0:
            return None
        last = nonzero[-1]
        return 1.0 if last == len(self.breaks) else self.breaks[last]


def _pair_key(l: int, lp: int) -> Tuple[int, int]:
    if l == lp or min(l, lp) < 1:
        raise ValueError(f"invalid replica pair ({l}, {lp})")
    return (min(l, lp), max(l, lp))


@dataclass(frozen=True)
class OverlapProduct:
    """scale * prod over pairs (l, l') of f_{l,l'}(R_{l,l'}); pairs are 1-based."""

    factors: Tuple[Tuple[Tuple[int, int], StepFunction], ...] = ()
    scale: float = 1.0

    @classmethod
    def of(cls, factors: Dict[Tuple[int, int], StepFunction], scale: float = 1.0) -> "OverlapProduct":
        merged = {}
        for (l, lp), step in factors.items():
            key = _pair_key(l, lp)
            if key in merged:
                raise ValueError(f"pair {key} given twice")
            merged[key] = step
        return cls(tuple(sorted(merged.items())), float(scale))

    @classmethod
    def constant(cls, value: float = 1.0) -> "OverlapProduct":
        return cls((), float(value))

    @property
    def pairs(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(pair for pair, _ in self.factors)

    @property
    def max_replica(self) -> int:
        return max((lp for _, lp in self.pairs), default=0)

    def factor(self, l: int, lp: int) -> Optional[StepFunction]:
        key = _pair_key(l, lp)
        for pair, step in self.factors:
            if pair == key:
                return step
        return None

    def __call__(self, R) -> float:
        entries = R.entries if isinstance(R, OverlapMatrix) else np.asarray(R)
        value = self.scale
        for (l, lp), step in self.factors:
            value *= step(entries[l - 1, lp - 1])
        return float(value)


@dataclass(frozen=True)
class FunctionFamily:
    """f_1..f_n together with their mu-integrals."""

    f: Tuple[StepFunction, ...]
    mu_integrals: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "mu_integrals", tuple(float(m) for m in self.mu_integrals))
        if len(self.f) != len(self.mu_integrals):
            raise ValueError("one mu-integral per function is required")

    @classmethod
    def from_law(cls, f: Sequence[StepFunction], law: OverlapLaw) -> "FunctionFamily":
        return cls(tuple(f), tuple(law.integral(step) for step in f))

    @classmethod
    def zero(cls, n: int) -> "FunctionFamily":
        return cls(tuple(StepFunction.constant(0.0) for _ in range(n)), (0.0,) * n)

    @property
    def n(self) -> int:
        return len(self.f)

    @property
    def is_zero(self) -> bool:
        return all(step.is_zero for step in self.f)

    def head(self, k: int) -> "FunctionFamily":
        return FunctionFamily(self.f[:k], self.mu_integrals[:k])

    def scaled(self, factor: float) -> "FunctionFamily":
        return FunctionFamily(tuple(step.scaled(factor) for step in self.f), tuple(factor * m for m in self.mu_integrals))

    def atom_scores(self, columns: np.ndarray) -> np.ndarray:
        """F(xi_a, sigma^1..sigma^n) for every atom; columns[l-1] holds xi_a . sigma^l."""
        columns = np.atleast_2d(columns)
        scores = np.zeros(columns.shape[1])
        for step, column in zip(self.f, columns):
            scores += step(column)
        return scores

    def replica_scores(self, entries: np.ndarray) -> np.ndarray:
        """F_l(sigma^l, sigma^1..sigma^n) for l = 1..n from the replicas' Gram entries."""
        table = np.array([[step(entries[l, k]) for k, step in enumerate(self.f)] for l in range(self.n)])
        return table.sum(axis=1) - np.diag(table) + np.array(self.mu_integrals)


def _columns(measure, indices) -> np.ndarray:
    return measure.overlap_columns(np.asarray(indices, dtype=int))


def eval_F(family: FunctionFamily, measure, atom: int, indices: Sequence[int]) -> float:
    if len(indices) != family.n:
        raise ValueError("tuple length must equal the number of functions")
    columns = _columns(measure, indices)
    return float(sum(step(columns[l, atom]) for l, step in enumerate(family.f)))


def eval_F_l(family: FunctionFamily, measure, l: int, atom: int, indices: Sequence[int]) -> float:
    if l < 1:
        raise ValueError("replica label l is 1-based")
    value = eval_F(family, measure, atom, indices)
    if l > family.n:
        return value
    overlap = measure.overlap_column(indices[l - 1])[atom]
    return value - family.f[l - 1](overlap) + family.mu_integrals[l - 1]


def eval_Fbar(family: FunctionFamily, measure, atom: int, indices: Sequence[int]) -> float:
    mean_replica = np.mean([eval_F_l(family, measure, l, indices[l - 1], indices) for l in range(1, family.n + 1)])
    return eval_F(family, measure, atom, indices) - float(mean_replica)


def fbar_scores(family: FunctionFamily, measure, indices: Sequence[int]) -> np.ndarray:
    """F-bar at every atom for a fixed tuple."""
    columns = _columns(measure, indices)
    entries = columns[:, np.asarray(indices, dtype=int)]
    return family.atom_scores(columns) - family.replica_scores(entries).mean()


@dataclass(frozen=True)
class PartitionSpec:
    """Partition of the atoms by the pattern of memberships sigma . sigma^l in B_l.

    Cell alpha is a bitmask over replicas: bit l-1 is set iff sigma . sigma^l
    is outside B_l. With no sets the partition is trivial.
    """

    sets: Tuple[StepFunction, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(self.sets))

    @classmethod
    def trivial(cls) -> "PartitionSpec":
        return cls(())

    @classmethod
    def upper_sets(cls, thresholds: Sequence[float]) -> "PartitionSpec":
        """B_l = [q_l, 1]; two thresholds give the four-set partition A_1..A_4."""
        return cls(tuple(StepFunction.indicator_ge(q) for q in thresholds))

    @property
    def n(self) -> int:
        return len(self.sets)

    @property
    def n_cells(self) -> int:
        return 1 << self.n

    def classify(self, columns: np.ndarray) -> np.ndarray:
        codes = np.zeros(columns.shape[1], dtype=int)
        for l, member in enumerate(self.sets):
            codes |= (member(columns[l]) == 0).astype(int) << l
        return codes

    def family(self, t: Sequence[float], law: OverlapLaw) -> FunctionFamily:
        """f_l = t_l * I(x not in B_l)."""
        if len(t) != self.n:
            raise ValueError("one t per set is required")
        return FunctionFamily.from_law([member.complement().scaled(tl) for member, tl in zip(self.sets, t)], law)


# cell masks of A_1..A_4 for the two-set partition with B_l = [q_l, 1]
FOUR_SET_MASKS = (2, 1, 0, 3)


def four_set_weights(W: np.ndarray) -> np.ndarray:
    """Reorder mask-indexed weights as (W_1, W_2, W_3, W_4)."""
    return np.asarray(W)[list(FOUR_SET_MASKS)]


def masks_from_four_sets(weights) -> np.ndarray:
    W = np.zeros(4)
    W[list(FOUR_SET_MASKS)] = weights
    return W


def partition_weights(partition: PartitionSpec, measure, indices: Sequence[int]) -> np.ndarray:
    """W_alpha = G(B_alpha) for every cell, indexed by mask."""
    if len(indices) < partition.n:
        raise ValueError("tuple shorter than the partition's replica count")
    if partition.n == 0:
        return np.array([float(np.sum(measure.weights))])
    codes = partition.classify(_columns(measure, indices[: partition.n]))
    return np.bincount(codes, weights=measure.weights, minlength=partition.n_cells)


def apply_T(
    W: np.ndarray, family: FunctionFamily, measure, indices: Sequence[int], partition: PartitionSpec
) -> np.ndarray:
    """Apply the weight map T to the cell weights of a fixed replica tuple.

    Args:
        W: cell weights G(B_alpha), indexed by mask.
        family: f_1..f_n defining F.
        measure: the realization G.
        indices: replica tuple; the first n entries feed F and the first
            partition.n entries define the cells.
        partition: the sets B_1..B_k.

    Returns:
        np.ndarray: <I_{B_alpha} exp F>_ / <exp F>_ for every cell, each an
        exact inner average over the atoms taken in log space.
    """
    W = np.asarray(W, dtype=float)
    if W.shape[0] != partition.n_cells:
        raise ValueError("weight vector does not match the partition")
    if family.is_zero:
        return W.copy()
    if partition.n == 0:
        return np.ones(1)
    own = indices[: family.n]
    log_total = log_inner_exp_average(measure, own, family)
    codes = partition.classify(_columns(measure, indices[: partition.n]))
    out = np.zeros(partition.n_cells)
    for alpha in range(partition.n_cells):
        out[alpha] = np.exp(log_inner_exp_average(measure, own, family, codes == alpha) - log_total)
    return out


def subset_sums(t: Sequence[float]) -> np.ndarray:
    """t_alpha = sum of t_l over the bits of alpha, for every mask alpha."""
    t = np.asarray(t, dtype=float)
    masks = np.arange(1 << t.shape[0])
    bits = (masks[:, None] >> np.arange(t.shape[0])) & 1
    return bits @ t


def log_delta_t(W: np.ndarray, t: Sequence[float]) -> float:
    return float(logsumexp(subset_sums(t), b=np.asarray(W, dtype=float)))


def delta_t(W: np.ndarray, t: Sequence[float]) -> float:
    """Delta_t = sum_alpha W_alpha e^{t_alpha} (mask-indexed W)."""
    return float(np.exp(log_delta_t(W, t)))


def transform_t(W: np.ndarray, t: Sequence[float]) -> np.ndarray:
    """T_t(W)_alpha = W_alpha e^{t_alpha} / Delta_t."""
    W = np.asarray(W, dtype=float)
    with np.errstate(divide="ignore"):
        logs = np.log(W) + subset_sums(t) - log_delta_t(W, t)
    return np.exp(logs)


def gamma_t(t: Sequence[float], sets: Sequence[StepFunction], law: OverlapLaw) -> float:
    """gamma_t = sum_l t_l mu(B_l^c)."""
    return float(sum(tl * law.integral(member.complement()) for tl, member in zip(t, sets)))


def delta_a(w: Sequence[float], a: Sequence[float]) -> float:
    """Delta_a(w) = sum_j w_j e^{a_j} + 1 - sum_j w_j for a sub-probability vector w."""
    w = np.asarray(w, dtype=float)
    return float(np.dot(w, np.exp(a)) + 1.0 - w.sum())


def transform_a(w: Sequence[float], a: Sequence[float]) -> np.ndarray:
    """T_a(w)_j = w_j e^{a_j} / Delta_a(w)."""
    w = np.asarray(w, dtype=float)
    return w * np.exp(a) / delta_a(w, a)


def _check_groups(group_ends: Sequence[int], family: FunctionFamily) -> Tuple[int, ...]:
    ends = tuple(int(e) for e in group_ends)
    if not ends or ends[0] < 1 or any(b <= a for a, b in zip(ends, ends[1:])):
        raise ValueError("group ends must be strictly increasing positive integers")
    if family.n != ends[-1]:
        raise ValueError(f"need {ends[-1]} functions for the groups, got {family.n}")
    return ends


def log_z_p(group_ends: Sequence[int], family: FunctionFamily, measure, indices: Sequence[int], p: int) -> float:
    """log Z^p: group p covers replicas n_{p-1}+1..n_p and uses f_1..f_{n_p}."""
    ends = _check_groups(group_ends, family)
    n_p = ends[p - 1]
    start = ends[p - 2] if p > 1 else 0
    sub = family.head(n_p)
    if sub.is_zero:
        return 0.0
    own = np.asarray(indices[:n_p], dtype=int)
    columns = _columns(measure, own)
    scores = sub.replica_scores(columns[:, own])
    return float(scores[start:].sum() - (n_p - start) * log_inner_exp_average(measure, own, sub))


def eval_Z_p(group_ends: Sequence[int], family: FunctionFamily, measure, indices: Sequence[int], p: int) -> float:
    """Z^p for one replica tuple; the product over p = 1..r is the density in the iterated identity."""
    return float(np.exp(log_z_p(group_ends, family, measure, indices, p)))


def log_density(family: FunctionFamily, measure, indices: Sequence[int]) -> float:
    """log of exp(sum_l F_l(sigma^l)) / <exp F>_^n, the one-group case of Z^p."""
    return log_z_p((family.n,), family, measure, indices, 1)


def eval_Z_product(
    group_ends: Sequence[int],
    family: FunctionFamily,
    measure,
    indices: Sequence[int],
    budget: int = DEFAULT_ENUMERATION_BUDGET,
) -> float:
    """Z^1...Z^r in replica form, with the denominator averaged over fresh rho^1..rho^{n_r}.

    The denominator is enumerated over all rho tuples, so this is only
    practical on small measures.
    """
    ends = _check_groups(group_ends, family)
    starts = (0,) + ends[:-1]
    numerator = 0.0
    group_scores = []
    for start, n_p in zip(starts, ends):
        sub = family.head(n_p)
        own = np.asarray(indices[:n_p], dtype=int)
        columns = _columns(measure, own)
        numerator += sub.replica_scores(columns[:, own])[start:].sum()
        group_scores.append(sub.atom_scores(columns))
    owner = np.concatenate([np.full(n_p - start, p) for p, (start, n_p) in enumerate(zip(starts, ends))])

    def integrand(rho):
        return math.exp(sum(group_scores[owner[l]][atom] for l, atom in enumerate(rho)))

    denominator = exact_tuple_average(measure, ends[-1], integrand, budget)
    return math.exp(numerator) / denominator


@dataclass(frozen=True)
class WeightFunctional:
    """phi(R^n, W) = overlap(R^n) * weight_fn(W)."""

    weight_fn: Callable[[np.ndarray], float]
    overlap: OverlapProduct = OverlapProduct()
    name: str = "phi"

    def __call__(self, R, W: np.ndarray) -> float:
        factor = self.overlap(R)
        if factor == 0.0:
            return 0.0
        return factor * float(self.weight_fn(W))


def weight_monomial(exponents: Dict[int, int]) -> Callable[[np.ndarray], float]:
    """prod_alpha W_alpha^{n_alpha} over mask-indexed cells."""
    items = tuple(sorted(exponents.items()))

    def monomial(W):
        return float(np.prod([W[alpha] ** power for alpha, power in items]))

    return monomial


def four_set_inverse_square(s: float) -> Callable[[np.ndarray], float]:
    """(W_1 e^{-s} + W_2 e^{-s} + W_3 + W_4)^{-2} on mask-indexed weights."""
    damp = math.exp(-s)

    def value(W):
        W1, W2, W3, W4 = four_set_weights(W)
        return (W1 * damp + W2 * damp + W3 + W4) ** -2

    return value
