import math
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ZetaParam(BaseModel):
    zeta: float = Field(gt=0.0, lt=1.0)


class CascadeSpec(BaseModel):
    """Parameters of a finite-depth Ruelle probability cascade.

    Level p (1-based) hangs `branching[p-1]` children under every node of
    depth p-1 and uses PD(zetas[p-1]) points for them. Two leaves whose paths
    share exactly p leading coordinates have overlap `qs[p]`.
    """

    depth: int = Field(ge=1)
    zetas: List[float]
    qs: List[float]
    branching: List[int]
    leaf_budget: int = Field(default=4096, ge=1)

    @field_validator("zetas")
    @classmethod
    def _check_zetas(cls, zetas):
        if any(not 0.0 < z < 1.0 for z in zetas):
            raise ValueError("every zeta must lie in the open interval (0, 1)")
        if any(b <= a for a, b in zip(zetas, zetas[1:])):
            raise ValueError("zetas must be strictly increasing")
        return zetas

    @field_validator("qs")
    @classmethod
    def _check_qs(cls, qs):
        if qs and (qs[0] < 0.0 or qs[-1] > 1.0):
            raise ValueError("overlap levels must satisfy q_0 >= 0 and q_r <= 1")
        if any(b <= a for a, b in zip(qs, qs[1:])):
            raise ValueError("overlap levels must be strictly increasing")
        return qs

    @field_validator("branching")
    @classmethod
    def _check_branching(cls, branching):
        if any(k < 2 for k in branching):
            raise ValueError("every level needs at least 2 children per node")
        return branching

    @model_validator(mode="after")
    def _check_lengths(self):
        if len(self.zetas) != self.depth or len(self.branching) != self.depth:
            raise ValueError("zetas and branching need exactly `depth` entries")
        if len(self.qs) != self.depth + 1:
            raise ValueError("qs needs exactly depth + 1 entries")
        return self

    @property
    def n_leaves(self) -> int:
        return math.prod(self.branching)

    @property
    def q_star(self) -> float:
        return self.qs[-1]

    @classmethod
    def one_level(cls, zeta, n_atoms=4096, q0=0.0, q1=1.0, leaf_budget=None):
        return cls(
            depth=1,
            zetas=[zeta],
            qs=[q0, q1],
            branching=[n_atoms],
            leaf_budget=leaf_budget or max(n_atoms, 4096),
        )


class EstimatorConfig(BaseModel):
    n_outer: int = Field(default=100_000, ge=1)
    n_batches: int = Field(default=32, ge=2)
    seed: int = Field(default=0, ge=0, lt=2**64)
    workers: int = Field(default=1, ge=1)
    z_max: float = Field(default=4.0, gt=0.0)
    truncation: int = Field(default=4096, ge=2)
    leaf_budget: int = Field(default=4096, ge=1)
    n_mu: int = Field(default=20_000, ge=1)
    mu_source: Literal["estimate", "closed_form"] = "estimate"
    enumeration_budget: int = Field(default=10**7, ge=1)
    pd_threshold: float = Field(default=1e-12, gt=0.0)
    tail_correction: bool = False
    progress: bool = False

    @model_validator(mode="after")
    def _check_batches(self):
        if self.n_outer < self.n_batches:
            raise ValueError("n_outer must be at least n_batches")
        if self.n_outer % self.n_batches:
            raise ValueError("n_outer must be divisible by n_batches")
        return self


class CheckReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    name: str
    n_outer: int
    seed: int
    passed: bool = Field(alias="pass")
    wall_time_s: Optional[float] = None


class IdentityReport(CheckReport):
    lhs: float
    rhs: float
    se_lhs: float
    se_rhs: float
    se_diff: float
    z: Optional[float]


class SweepPoint(BaseModel):
    s: float
    value: float
    se: float


class Prop1Report(IdentityReport):
    q: float
    sweep: List[SweepPoint] = []
    monotone: bool = True


class MomentEstimate(BaseModel):
    estimate: float
    se: float
    n_samples: int
    truncation: int
    tail_mass_mean: float


class UltrametricReport(CheckReport):
    q: Optional[float]
    violations: int
    rate: float
    triangle_violations: int


class PositivityReport(CheckReport):
    eps: float
    estimate: float
    se: float
    flagged: bool
    min_gram_sum: float


class Prop2Report(CheckReport):
    n: int
    tau: float
    violations: int
    rate: float


class SequenceReport(CheckReport):
    n_target: int
    lengths: List[int]
    max_length: int
    min_length: int
    packing_bound: Optional[float] = None


class ExchangeabilityReport(CheckReport):
    m: int
    n_used: int
    n_skipped: int
    chi2: float
    chi2_p: float
    association: float
    association_p: float
    alpha: float


class AgreementReport(CheckReport):
    max_abs_diff: float
    tolerance: float
