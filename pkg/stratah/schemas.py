"""
Machine-readable report DTOs.

All rates are stored in base units (events per person-month); ``unit_scale``
is the display factor the human table applies. Field names are part of the
versioned schema.
"""

from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from stratah import __version__

SCHEMA_VERSION = "1.0"


class CellEstimateDTO(BaseModel):
    arm: int = Field(..., description="0 = control, 1 = treatment")
    arm_label: str = Field(...)
    stratum: str = Field(...)
    n: int = Field(...)
    events: int = Field(..., description="Events at or before tau")
    risk_set_at_tau: int = Field(...)
    eta_hat: float = Field(...)
    f_hat: float = Field(..., description="1 - S(tau)")
    r_hat: float = Field(..., description="RMST at tau")
    var_natural: float = Field(...)
    var_log: Optional[float] = Field(None, description="Undefined without events by tau")


class GroupSummaryDTO(BaseModel):
    arm: int = Field(...)
    arm_label: str = Field(...)
    estimate: float = Field(...)
    std_error: float = Field(...)
    ci_low: float = Field(...)
    ci_high: float = Field(...)
    ci_scale: str = Field(..., description="natural or log")


class ContrastDTO(BaseModel):
    scale: str = Field(..., description="difference (DAH) or ratio (RAH)")
    estimate: float = Field(...)
    std_error: float = Field(..., description="Natural scale for DAH, log scale for RAH")
    z_statistic: float = Field(...)
    ci_low: float = Field(...)
    ci_high: float = Field(...)
    p_value: float = Field(...)


class StratumRowDTO(BaseModel):
    stratum: str = Field(...)
    n_control: int = Field(...)
    n_treatment: int = Field(...)
    groups: List[GroupSummaryDTO] = Field(...)
    difference: Optional[ContrastDTO] = None
    ratio: Optional[ContrastDTO] = None


class MethodBlockDTO(BaseModel):
    method: str = Field(...)
    weights: Optional[Dict[str, float]] = Field(None, description="Stratum weights, normalized to sum to 1")
    ratio_weights: Optional[Dict[str, float]] = Field(None, description="CMH weights of the stratum RAHs")
    groups: Optional[List[GroupSummaryDTO]] = None
    difference: Optional[ContrastDTO] = Field(None, description="Null when undefined for the data")
    ratio: Optional[ContrastDTO] = Field(None, description="Null when undefined for the data")


class AnalysisReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    software_version: str = __version__
    tau: float = Field(...)
    alpha: float = Field(...)
    unit_scale: int = Field(..., description="Display rates per this many person-months")
    variance_form: str = Field(...)
    control_label: str = Field(...)
    treatment_label: str = Field(...)
    n_total: int = Field(...)
    cells: List[CellEstimateDTO] = Field(...)
    strata: List[StratumRowDTO] = Field(...)
    methods: List[MethodBlockDTO] = Field(...)


class MetricDTO(BaseModel):
    truth: float = Field(...)
    mean_estimate: float = Field(...)
    bias: float = Field(...)
    empirical_sd: Optional[float] = None
    mean_se: float = Field(...)
    coverage: float = Field(...)


class SimulationTauDTO(BaseModel):
    tau: float = Field(...)
    metrics: Dict[str, MetricDTO] = Field(..., description="AH1, AH0, DAH, logRAH")
    avg_risk_set: Dict[str, Dict[str, float]] = Field(..., description="Arm label -> stratum -> mean count at risk")
    min_avg_risk_set: Dict[str, float] = Field(...)


class SimulationReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    software_version: str = __version__
    name: str = Field(...)
    seed: int = Field(...)
    replications: int = Field(...)
    completed: int = Field(...)
    n_per_arm: int = Field(...)
    alpha: float = Field(...)
    unit_scale: int = Field(...)
    stratum_labels: List[str] = Field(...)
    failures: Dict[str, int] = Field(default_factory=dict)
    taus: List[SimulationTauDTO] = Field(...)
