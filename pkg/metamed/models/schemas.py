"""Pydantic models for summaries, meta-analysis inputs/results and run configuration."""
from __future__ import annotations

import math
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# --- Enums ---

class Scenario(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"


class DistFamily(str, Enum):
    NORMAL = "normal"
    LOGNORMAL = "lognormal"
    GAMMA = "gamma"
    BETA = "beta"
    WEIBULL = "weibull"
    HALFNORMAL = "halfnormal"
    BOXCOX_NORMAL = "boxcox_normal"


class Method(str, Enum):
    QE = "qe"
    BC = "bc"
    MLN = "mln"
    LUO_WAN = "luo_wan"


class SeVariant(str, Enum):
    NAIVE = "naive"
    BOOTSTRAP = "bootstrap"


class EffectModel(str, Enum):
    RANDOM = "random"
    COMMON = "common"


class OutputFormat(str, Enum):
    TABLE = "table"
    CSV = "csv"
    JSON = "json"
    MARKDOWN = "markdown"


# Present quantile fields per scenario, in ascending order.
SCENARIO_FIELDS: Dict[Scenario, Tuple[str, ...]] = {
    Scenario.S1: ("q_min", "q2", "q_max"),
    Scenario.S2: ("q1", "q2", "q3"),
    Scenario.S3: ("q_min", "q1", "q2", "q3", "q_max"),
}
QUANTILE_FIELDS = ("q_min", "q1", "q2", "q3", "q_max")


# --- Distributions ---

class DistSpec(BaseModel):
    """Family tag plus parameters, as written in simulation configs."""
    model_config = ConfigDict(extra="forbid")

    family: DistFamily
    params: List[float]

    @field_validator("params")
    @classmethod
    def _finite(cls, v: List[float]) -> List[float]:
        if not all(math.isfinite(p) for p in v):
            raise ValueError("distribution parameters must be finite")
        return v

    def label(self) -> str:
        args = ", ".join(f"{p:g}" for p in self.params)
        return f"{self.family.value}({args})"


# --- Summaries ---

class QuantileSummary(BaseModel):
    scenario: Scenario
    n: int = Field(..., ge=1)
    q_min: Optional[float] = None
    q1: Optional[float] = None
    q2: Optional[float] = None
    q3: Optional[float] = None
    q_max: Optional[float] = None

    @model_validator(mode="after")
    def _check_layout(self) -> "QuantileSummary":
        wanted = SCENARIO_FIELDS[self.scenario]
        for name in QUANTILE_FIELDS:
            value = getattr(self, name)
            if name in wanted and value is None:
                raise ValueError(f"{self.scenario.value} requires {name}")
            if name not in wanted and value is not None:
                raise ValueError(f"{self.scenario.value} does not carry {name}")
            if value is not None and not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
        values = self.values()
        if any(b < a for a, b in zip(values, values[1:])):
            raise ValueError(f"quantiles out of order: {values}")
        return self

    def fields(self) -> Tuple[str, ...]:
        return SCENARIO_FIELDS[self.scenario]

    def values(self) -> List[float]:
        return [getattr(self, name) for name in self.fields()]

    def replace_values(self, values) -> "QuantileSummary":
        """New summary of the same scenario and n with the given ordered values."""
        data = dict(zip(self.fields(), (float(v) for v in values)))
        return QuantileSummary(scenario=self.scenario, n=self.n, **data)


class MeanSdSummary(BaseModel):
    mean: float
    sd: float = Field(..., ge=0)
    n: int = Field(..., ge=1)


GroupSummary = Union[QuantileSummary, MeanSdSummary]


class TwoGroupSummary(BaseModel):
    study_id: str
    outcome: str = ""
    group1: GroupSummary
    group2: GroupSummary


class ScreeningDecision(BaseModel):
    keep: bool
    reason: Optional[str] = None  # "small-sample", "skewness" or "degenerate-iqr"
    group: Optional[int] = None
    value: Optional[float] = None


# --- Bootstrap ---

class BootstrapConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    B: int = Field(1000, ge=2)
    seed: int = Field(0, ge=0, lt=2**64)
    min_success_fraction: float = Field(0.95, gt=0, le=1)


# --- Meta-analysis ---

class StudyInput(BaseModel):
    y: float
    se: float = Field(..., gt=0)
    label: str = ""

    @field_validator("y", "se")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("study estimate and SE must be finite")
        return v


class EstimateWithSE(BaseModel):
    mean: float
    se: float = Field(..., ge=0)
    variant: SeVariant
    method: Optional[Method] = None  # None when the group reported mean/sd
    sd: Optional[float] = None
    n: Optional[int] = None


class MetaResult(BaseModel):
    model: EffectModel = EffectModel.RANDOM
    k: int
    level: float = 0.95
    mu_pool: float
    se_pool: float
    mu_ci: Tuple[float, float]
    tau2: float = Field(..., ge=0)
    tau2_ci: Tuple[float, float]
    tau2_ci_degenerate: bool = False
    i2: float = Field(..., ge=0, le=1)
    typical_var: float
    q_stat: float
    q_df: int
    q_pvalue: float
    weights: List[float]
    labels: List[str] = []
    iterations: int = 0


# --- CLI application ---

class RunConfig(BaseModel):
    method: Method = Method.MLN
    se_variants: List[SeVariant] = [SeVariant.NAIVE, SeVariant.BOOTSTRAP]
    B: int = Field(1000, ge=2)
    seed: int = Field(0, ge=0, lt=2**64)
    min_n: int = Field(10, ge=1)
    skew_cap: float = 0.75
    min_studies: int = Field(6, ge=2)
    model: EffectModel = EffectModel.RANDOM
    level: float = Field(0.95, gt=0, lt=1)
    output_format: OutputFormat = OutputFormat.TABLE


class ScreeningLogEntry(BaseModel):
    study_id: str
    outcome: str
    reason: str
    group: Optional[int] = None
    value: Optional[float] = None


class StudyRow(BaseModel):
    study_id: str
    outcome: str
    variant: SeVariant
    y: float
    se: float
    weight: float
    mean1: float
    se1: float
    mean2: float
    se2: float


class OutcomeReport(BaseModel):
    outcome: str
    variant: SeVariant
    n_studies: int
    meta: Optional[MetaResult] = None
    studies: List[StudyRow] = []
    notice: Optional[str] = None


class ApplicationReport(BaseModel):
    run_config: RunConfig
    outcomes: List[OutcomeReport] = []
    screening: List[ScreeningLogEntry] = []


# --- Simulation ---

class StudySimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cell_id: Optional[str] = None
    dist: DistSpec
    n: int = Field(..., ge=5)
    scenario: Scenario
    reps: int = Field(200, ge=10)
    oracle_reps: int = Field(10_000, ge=100)
    methods: List[Method] = [Method.QE, Method.BC, Method.MLN]
    bootstrap: BootstrapConfig = BootstrapConfig(B=200)
    with_bootstrap: bool = True
    include_control: bool = False
    keep_records: bool = False
    seed: int = Field(0, ge=0, lt=2**64)


class MetaSimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cell_id: Optional[str] = None
    k: int = Field(30, ge=2)
    p: float = Field(1.0, ge=0, le=1)
    scenario: Scenario = Scenario.S1
    tau2_true: float = Field(6.0, ge=0)
    base_dist: DistSpec = DistSpec(family=DistFamily.LOGNORMAL, params=[5.0, 0.25])
    n_range: Tuple[int, int] = (100, 500)
    reps: int = Field(300, ge=10)
    methods: List[Method] = [Method.QE, Method.BC, Method.MLN]
    se_variants: List[SeVariant] = [SeVariant.NAIVE, SeVariant.BOOTSTRAP]
    bootstrap: BootstrapConfig = BootstrapConfig(B=200)
    oracle_reps: int = Field(2_000, ge=100)
    oracle_n_points: int = Field(5, ge=2)
    level: float = Field(0.95, gt=0, lt=1)
    seed: int = Field(0, ge=0, lt=2**64)

    @field_validator("n_range")
    @classmethod
    def _ordered_range(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        lo, hi = v
        if lo < 5 or hi < lo:
            raise ValueError("n_range must satisfy 5 <= lo <= hi")
        return v


class SimulationPlan(BaseModel):
    model_config = ConfigDict(extra="forbid")

    study_cells: List[StudySimConfig] = []
    meta_cells: List[MetaSimConfig] = []


class StudyMetricRow(BaseModel):
    method: str  # Method value or "sample_mean" for the control row
    se_variant: SeVariant
    true_se: float
    median_pct_err: Optional[float] = None
    mean_pct_err: Optional[float] = None
    rmse: Optional[float] = None
    mean_se_hat: Optional[float] = None
    n_ok: int = 0
    n_failed: int = 0


class MetaMetricRow(BaseModel):
    method: str
    se_variant: SeVariant
    true_mu: float
    true_tau2: float
    true_i2: Optional[float] = None
    bias_mu: Optional[float] = None
    var_mu: Optional[float] = None
    cov_mu: Optional[float] = Field(None, ge=0, le=1)
    bias_tau2: Optional[float] = None
    var_tau2: Optional[float] = None
    cov_tau2: Optional[float] = Field(None, ge=0, le=1)
    bias_i2: Optional[float] = None
    median_bias_i2: Optional[float] = None
    n_ok: int = 0
    n_failed: int = 0


class SimCellResult(BaseModel):
    cell_id: str
    kind: str  # "study" or "meta"
    config: Dict[str, Any]
    study_rows: List[StudyMetricRow] = []
    meta_rows: List[MetaMetricRow] = []
    diagnostics: Dict[str, Any] = {}
    flagged: bool = False
    records: List[Dict[str, Any]] = []
