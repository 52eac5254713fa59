"""
Monte Carlo engine for the stratified AH estimators.

Event times are Weibull per (arm, stratum) cell, censoring is either a common
Weibull law or absent, and every replicate runs the standardized AH and its
contrasts at each truncation time. Replicate r draws from its own substream
``SeedSequence(seed, spawn_key=(r,))``, so results do not depend on how many
joblib workers run them.
"""

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
from dotenv import dotenv_values
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.integrate import quad

from stratah.config import settings
from stratah.exceptions import EstimationError, InvalidInput, ScenarioError, SimulationAborted
from stratah.logging_config import get_logger, operation_context
from stratah.models import Arm, Dataset
from stratah.stratified_inference import (
    Scale,
    VarianceForm,
    ah_contrast,
    critical_value,
    standardized_ah,
)
from stratah.survival_core import risk_set_size
from stratah.tracing import traced

logger = get_logger(__name__)

ARM_KEYS = {Arm.CONTROL: "control", Arm.TREATMENT: "treatment"}
METRICS = ("AH1", "AH0", "DAH", "logRAH")
SCENARIO_SUFFIX = ".env"


class WeibullParams(BaseModel):
    """Weibull law with S(t) = exp(-(t/scale)^shape); scale in months."""

    model_config = ConfigDict(frozen=True)

    shape: float = Field(..., gt=0.0)
    scale: float = Field(..., gt=0.0)

    def survival(self, t):
        return np.exp(-np.power(np.asarray(t, dtype=float) / self.scale, self.shape))

    def cdf(self, t):
        return 1.0 - self.survival(t)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Inverse-CDF draw T = scale * (-log(1 - U))^(1/shape)."""
        u = rng.random(size)
        return self.scale * np.power(-np.log1p(-u), 1.0 / self.shape)


class Censoring(str, Enum):
    WEIBULL = "weibull"
    NONE = "none"


class SimScenario(BaseModel):
    """A complete simulation design; see ``load_scenario`` for the file schema."""

    model_config = ConfigDict(frozen=True)

    name: str = "scenario"
    event_params: Dict[str, Dict[str, WeibullParams]]
    censoring: Censoring = Censoring.WEIBULL
    censoring_params: Optional[WeibullParams] = None
    n_per_arm: int = Field(..., gt=0)
    stratum_labels: Tuple[str, ...]
    stratum_fractions: Tuple[float, ...]
    weights: Tuple[float, ...]
    taus: Tuple[float, ...]
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    replications: int = Field(default=3000, ge=1)
    seed: int = Field(default=20240101, ge=0)

    @model_validator(mode="after")
    def _check_design(self) -> "SimScenario":
        k = len(self.stratum_labels)
        if k == 0 or len(set(self.stratum_labels)) != k:
            raise ValueError("stratum_labels must be non-empty and unique")
        if len(self.stratum_fractions) != k or len(self.weights) != k:
            raise ValueError(f"stratum_fractions and weights need {k} entries")
        if any(f <= 0 for f in self.stratum_fractions) or not math.isclose(sum(self.stratum_fractions), 1.0, abs_tol=1e-9):
            raise ValueError("stratum_fractions must be positive and sum to 1")
        if any(w <= 0 for w in self.weights):
            raise ValueError("weights must be positive")
        if not self.taus or any(not (t > 0 and math.isfinite(t)) for t in self.taus):
            raise ValueError("taus must be positive")
        if self.censoring is Censoring.WEIBULL and self.censoring_params is None:
            raise ValueError("weibull censoring needs censoring_shape and censoring_scale")
        for arm_key in ARM_KEYS.values():
            missing = [s for s in self.stratum_labels if s not in self.event_params.get(arm_key, {})]
            if missing:
                raise ValueError(f"no event-time law for {arm_key} in strata {missing}")
        if min(self.stratum_counts()) < 1:
            raise ValueError(f"n_per_arm={self.n_per_arm} leaves a stratum empty")
        return self

    def stratum_counts(self) -> Tuple[int, ...]:
        """Subjects per stratum in each arm: shares rounded half up, remainder to the last stratum."""
        counts = [math.floor(f * self.n_per_arm + 0.5) for f in self.stratum_fractions[:-1]]
        return tuple(counts + [self.n_per_arm - sum(counts)])

    def params_for(self, arm: int, stratum: str) -> WeibullParams:
        return self.event_params[ARM_KEYS[Arm(arm)]][stratum]

    @classmethod
    def from_flat(cls, values: Mapping[str, Optional[str]]) -> "SimScenario":
        """Build a scenario from flat KEY=VALUE pairs (keys case-insensitive)."""
        flat = {k.strip().lower(): (v or "").strip() for k, v in values.items()}

        def required(key: str) -> str:
            if not flat.get(key):
                raise ScenarioError("missing required key", key=key)
            return flat[key]

        def number(key: str, kind=float):
            raw = required(key)
            try:
                return kind(raw)
            except ValueError:
                raise ScenarioError(f"not a valid {kind.__name__}: {raw!r}", key=key) from None

        def number_list(key: str) -> List[float]:
            try:
                return [float(x) for x in required(key).split(",") if x.strip()]
            except ValueError:
                raise ScenarioError(f"not a comma-separated list of numbers: {flat[key]!r}", key=key) from None

        labels = [s.strip() for s in required("stratum_labels").split(",") if s.strip()]
        fields = dict(
            name=flat.get("name") or "scenario",
            censoring=flat.get("censoring") or Censoring.WEIBULL.value,
            n_per_arm=number("n_per_arm", int),
            stratum_labels=labels,
            stratum_fractions=number_list("stratum_fractions"),
            weights=number_list("weights"),
            taus=number_list("taus"),
        )
        for key, kind in (("alpha", float), ("replications", int), ("seed", int)):
            if flat.get(key):
                fields[key] = number(key, kind)

        if fields["censoring"] == Censoring.WEIBULL.value:
            fields["censoring_params"] = _weibull_from("censoring", number)
        fields["event_params"] = {
            arm_key: {s: _weibull_from(f"{arm_key}_{s.lower()}", number) for s in labels}
            for arm_key in ARM_KEYS.values()
        }

        try:
            return cls(**fields)
        except ValidationError as e:
            error = e.errors()[0]
            key = ".".join(str(part) for part in error["loc"]) or None
            raise ScenarioError(error["msg"], key=key) from None


def _weibull_from(prefix: str, number) -> WeibullParams:
    shape, scale = number(f"{prefix}_shape"), number(f"{prefix}_scale")
    try:
        return WeibullParams(shape=shape, scale=scale)
    except ValidationError:
        raise ScenarioError(f"shape and scale must be positive, got {shape}/{scale}", key=f"{prefix}_shape") from None


def bundled_scenarios() -> List[str]:
    """Names of the scenario files shipped with the package."""
    folder = resources.files("stratah") / "scenarios"
    return sorted(p.name[: -len(SCENARIO_SUFFIX)] for p in folder.iterdir() if p.name.endswith(SCENARIO_SUFFIX))


def load_scenario(path_or_name: Union[str, Path]) -> SimScenario:
    """
    Read a scenario from a KEY=VALUE file, or by bundled name
    (e.g. ``paper_pattern1_n700``).

    Keys: name, censoring (weibull|none), censoring_shape, censoring_scale,
    n_per_arm, stratum_labels, stratum_fractions, weights, taus (comma lists),
    alpha, replications, seed and {control|treatment}_{stratum}_{shape|scale}.
    """
    path = Path(path_or_name)
    if not path.is_file():
        bundled = resources.files("stratah") / "scenarios" / f"{path.name.removesuffix(SCENARIO_SUFFIX)}{SCENARIO_SUFFIX}"
        if not bundled.is_file():
            raise ScenarioError(
                f"no scenario file {str(path_or_name)!r}; bundled scenarios are {', '.join(bundled_scenarios())}"
            )
        path = Path(str(bundled))

    scenario = SimScenario.from_flat(dotenv_values(path))
    logger.debug("Scenario loaded", path=str(path), name=scenario.name, replications=scenario.replications)
    return scenario


class TruthValues(NamedTuple):
    """True standardized AHs (events per person-month) and their contrasts."""
    ah1: float
    ah0: float
    dah: float
    log_rah: float


def _true_rmst(params: WeibullParams, tau: float) -> float:
    value, _ = quad(lambda u: float(params.survival(u)), 0.0, tau, epsabs=1e-10, limit=200)
    return value


def weibull_truth(scenario: SimScenario, tau: float) -> TruthValues:
    """Standardized AH of each arm under the scenario's Weibull laws at ``tau``."""
    if not (tau > 0 and math.isfinite(tau)):
        raise InvalidInput(f"tau must be positive, got {tau}")
    total = sum(scenario.weights)
    weights = [w / total for w in scenario.weights]

    eta = {}
    for arm in Arm:
        incidence = sum(w * float(scenario.params_for(arm, s).cdf(tau))
                        for w, s in zip(weights, scenario.stratum_labels))
        rmst = sum(w * _true_rmst(scenario.params_for(arm, s), tau)
                   for w, s in zip(weights, scenario.stratum_labels))
        eta[arm] = incidence / rmst

    ah1, ah0 = eta[Arm.TREATMENT], eta[Arm.CONTROL]
    return TruthValues(ah1=ah1, ah0=ah0, dah=ah1 - ah0, log_rah=math.log(ah1 / ah0))


def generate_trial(scenario: SimScenario, rng: np.random.Generator) -> Dataset:
    """One simulated trial; censoring is independent of event time and shared by all cells."""
    counts = scenario.stratum_counts()
    times, events, arms, strata = [], [], [], []
    for arm in Arm:
        for stratum, count in zip(scenario.stratum_labels, counts):
            t = scenario.params_for(arm, stratum).sample(rng, count)
            if scenario.censoring is Censoring.WEIBULL:
                c = scenario.censoring_params.sample(rng, count)
                times.append(np.minimum(t, c))
                events.append(t <= c)
            else:
                times.append(t)
                events.append(np.ones(count, dtype=bool))
            arms.append(np.full(count, int(arm)))
            strata.append(np.full(count, stratum, dtype=object))

    return Dataset(
        times=np.concatenate(times),
        events=np.concatenate(events),
        arms=np.concatenate(arms),
        strata=np.concatenate(strata),
        stratum_labels=scenario.stratum_labels,
        arm_labels=(ARM_KEYS[Arm.CONTROL], ARM_KEYS[Arm.TREATMENT]),
    )


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate,)))


@dataclass(frozen=True)
class ReplicateOutcome:
    """
    Estimates of one replicate. ``estimates`` has shape (taus, metrics, 2):
    point estimate and standard error; ``risk_sets`` has shape (taus, arms, strata).
    """

    replicate: int
    estimates: Optional[np.ndarray] = None
    risk_sets: Optional[np.ndarray] = None
    failure: Optional[str] = None
    message: Optional[str] = None


def _run_replicate(scenario: SimScenario, replicate: int, variance_form: VarianceForm) -> ReplicateOutcome:
    dataset = generate_trial(scenario, replicate_rng(scenario.seed, replicate))
    weights = dict(zip(scenario.stratum_labels, scenario.weights))
    estimates = np.empty((len(scenario.taus), len(METRICS), 2))
    risk_sets = np.empty((len(scenario.taus), len(Arm), len(scenario.stratum_labels)))

    try:
        for i, tau in enumerate(scenario.taus):
            group = {
                arm: standardized_ah(dataset.arm_cells(arm), weights, tau, variance_form, arm=int(arm))
                for arm in Arm
            }
            dah = ah_contrast(group[Arm.CONTROL], group[Arm.TREATMENT], Scale.DIFFERENCE, scenario.alpha)
            rah = ah_contrast(group[Arm.CONTROL], group[Arm.TREATMENT], Scale.RATIO, scenario.alpha)
            estimates[i] = [
                (group[Arm.TREATMENT].eta_bar_hat, group[Arm.TREATMENT].se_q),
                (group[Arm.CONTROL].eta_bar_hat, group[Arm.CONTROL].se_q),
                (dah.estimate, dah.std_error),
                (math.log(rah.estimate), rah.std_error),
            ]
            for arm in Arm:
                for k, stratum in enumerate(scenario.stratum_labels):
                    risk_sets[i, int(arm), k] = risk_set_size(dataset.cell(arm, stratum), tau)
    except EstimationError as e:
        return ReplicateOutcome(replicate, failure=type(e).__name__, message=str(e))

    return ReplicateOutcome(replicate, estimates=estimates, risk_sets=risk_sets)


@dataclass(frozen=True)
class MetricSummary:
    """Monte Carlo summary of one estimator at one tau; rates per person-month."""

    truth: float
    mean_estimate: float
    bias: float
    empirical_sd: Optional[float]
    mean_se: float
    coverage: float


@dataclass(frozen=True)
class SimResult:
    """
    Aggregated simulation output.

    ``metrics[tau][metric]`` for metric in AH1, AH0, DAH, logRAH.
    ``avg_risk_set[tau][arm][stratum]`` is the across-replicate mean number at
    risk at tau; ``min_avg_risk_set[tau][arm]`` its minimum over strata.
    """

    name: str
    seed: int
    replications: int
    completed: int
    n_per_arm: int
    alpha: float
    taus: Tuple[float, ...]
    stratum_labels: Tuple[str, ...]
    metrics: Dict[float, Dict[str, MetricSummary]]
    avg_risk_set: Dict[float, Dict[int, Dict[str, float]]]
    min_avg_risk_set: Dict[float, Dict[int, float]]
    failures: Dict[str, int] = field(default_factory=dict)


def _summarize(values: np.ndarray, truth: float, z: float) -> MetricSummary:
    estimates, std_errors = values[:, 0], values[:, 1]
    mean = float(np.mean(estimates))
    covered = np.abs(estimates - truth) <= z * std_errors
    return MetricSummary(
        truth=truth,
        mean_estimate=mean,
        bias=mean - truth,
        empirical_sd=float(np.std(estimates, ddof=1)) if estimates.size > 1 else None,
        mean_se=float(np.mean(std_errors)),
        coverage=float(np.mean(covered)),
    )


@traced("run_simulation")
def run_simulation(scenario: SimScenario, n_jobs: Optional[int] = None,
                   variance_form: Optional[VarianceForm] = None) -> SimResult:
    """
    Run every replicate of ``scenario`` and aggregate bias, SD, mean SE,
    coverage and risk-set sizes per tau.

    Replicates that raise an EstimationError are counted by error type; more
    than ``settings.max_failure_rate`` of them aborts the run.
    """
    n_jobs = n_jobs or settings.n_jobs
    form = VarianceForm(variance_form or settings.variance_form)

    with operation_context(f"simulate:{scenario.name}"):
        start_time = time.perf_counter()
        logger.info(
            "Simulation started",
            replications=scenario.replications, n_per_arm=scenario.n_per_arm,
            taus=list(scenario.taus), seed=scenario.seed, n_jobs=n_jobs,
        )

        outcomes = Parallel(n_jobs=n_jobs)(
            delayed(_run_replicate)(scenario, r, form) for r in range(scenario.replications)
        )

        failures: Dict[str, int] = {}
        for outcome in outcomes:
            if outcome.failure:
                failures[outcome.failure] = failures.get(outcome.failure, 0) + 1
                logger.debug("Replicate failed", replicate=outcome.replicate,
                             error_type=outcome.failure, error=outcome.message)
        successes = [o for o in outcomes if o.failure is None]
        failed = len(outcomes) - len(successes)

        if failed:
            logger.warning("Replicates failed", failed=failed, total=len(outcomes), failures=failures)
        if not successes or failed / len(outcomes) > settings.max_failure_rate:
            logger.error("Simulation aborted", failed=failed, total=len(outcomes),
                         max_failure_rate=settings.max_failure_rate)
            raise SimulationAborted(failed, len(outcomes), failures)

        estimates = np.stack([o.estimates for o in successes])
        risk_sets = np.mean(np.stack([o.risk_sets for o in successes]), axis=0)
        z = critical_value(scenario.alpha)

        metrics: Dict[float, Dict[str, MetricSummary]] = {}
        avg_risk_set: Dict[float, Dict[int, Dict[str, float]]] = {}
        min_avg_risk_set: Dict[float, Dict[int, float]] = {}
        for i, tau in enumerate(scenario.taus):
            truth = weibull_truth(scenario, tau)
            truths = (truth.ah1, truth.ah0, truth.dah, truth.log_rah)
            metrics[tau] = {m: _summarize(estimates[:, i, j], truths[j], z) for j, m in enumerate(METRICS)}
            avg_risk_set[tau] = {
                int(arm): {s: float(risk_sets[i, int(arm), k]) for k, s in enumerate(scenario.stratum_labels)}
                for arm in Arm
            }
            min_avg_risk_set[tau] = {arm: min(cells.values()) for arm, cells in avg_risk_set[tau].items()}

        logger.info(
            "Simulation completed",
            completed=len(successes), failed=failed,
            elapsed_seconds=round(time.perf_counter() - start_time, 3),
        )

    return SimResult(
        name=scenario.name,
        seed=scenario.seed,
        replications=scenario.replications,
        completed=len(successes),
        n_per_arm=scenario.n_per_arm,
        alpha=scenario.alpha,
        taus=scenario.taus,
        stratum_labels=scenario.stratum_labels,
        metrics=metrics,
        avg_risk_set=avg_risk_set,
        min_avg_risk_set=min_avg_risk_set,
        failures=failures,
    )
