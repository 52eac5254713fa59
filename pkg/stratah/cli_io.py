"""
Dataset ingestion, the analyze and simulate commands, and report rendering.

Input files are delimited text (comma or tab, detected from the header) with
columns time, status, arm and stratum in any order and any letter case.
"""

import csv
import io
import math
import time
from dataclasses import asdict
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, field_validator

from stratah.config import settings
from stratah.exceptions import InvalidInput, ParseError, ScenarioError, ZeroEvents
from stratah.logging_config import get_logger, operation_context
from stratah.models import Arm, Dataset, SubjectRecord
from stratah.schemas import (
    AnalysisReport,
    CellEstimateDTO,
    ContrastDTO,
    GroupSummaryDTO,
    MethodBlockDTO,
    MetricDTO,
    SimulationReport,
    SimulationTauDTO,
    StratumRowDTO,
)
from stratah.sim_harness import ARM_KEYS, METRICS, SimResult, SimScenario, run_simulation
from stratah.stratified_inference import (
    ContrastResult,
    GroupSummary,
    Method,
    Scale,
    VarianceForm,
    WeightScheme,
    ah_contrast,
    cell_estimates,
    cmh_adjusted_ah,
    cmh_contrast,
    conventional_contrast,
    critical_value,
    resolve_weights,
    standardized_ah,
    stratum_contrast,
)
from stratah.tracing import traced

logger = get_logger(__name__)

REQUIRED_COLUMNS = ("time", "status", "arm", "stratum")
ANALYSIS_METHODS = (Method.PROPOSED, Method.CONVENTIONAL, Method.CMH1, Method.CMH2)


class OutputFormat(str, Enum):
    TABLE = "table"
    JSON = "json"


class AnalysisConfig(BaseModel):
    """Options of one ``analyze`` run."""

    tau: float = Field(..., gt=0.0)
    alpha: float = Field(default_factory=lambda: settings.default_alpha, gt=0.0, lt=1.0)
    methods: List[Method] = Field(default_factory=lambda: list(ANALYSIS_METHODS), min_length=1)
    weights: WeightScheme = Field(default_factory=WeightScheme)
    unit_scale: Literal[1, 100] = Field(default_factory=lambda: settings.default_unit_scale)
    output_format: OutputFormat = OutputFormat.TABLE
    group_ci_scale: Literal["natural", "log"] = "natural"
    variance_form: Optional[VarianceForm] = None

    @field_validator("tau")
    @classmethod
    def _finite_tau(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("tau must be finite")
        return value

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, value: List[Method]) -> List[Method]:
        unknown = [m.value for m in value if m not in ANALYSIS_METHODS]
        if unknown:
            raise ValueError(f"unsupported methods {unknown}")
        return [m for m in ANALYSIS_METHODS if m in value]

    @classmethod
    def build(cls, **options) -> "AnalysisConfig":
        """Validate options, reporting the first bad field as InvalidInput."""
        try:
            return cls(**options)
        except ValidationError as e:
            error = e.errors()[0]
            field = ".".join(str(part) for part in error["loc"])
            raise InvalidInput(f"{field}: {error['msg']}") from None


def _parse_time(raw: str, line: int) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ParseError(f"time is not a number: {raw!r}", line=line) from None


def _subject(row: Tuple[float, bool, str, str], line: int, control_label: str) -> SubjectRecord:
    time_, event, arm_name, stratum = row
    try:
        return SubjectRecord(
            time=time_, event=event,
            arm=Arm.CONTROL if arm_name == control_label else Arm.TREATMENT,
            stratum=stratum,
        )
    except ValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(part) for part in error["loc"])
        raise ParseError(f"{field}: {error['msg']}", line=line) from None


def parse_dataset(text: str, control_label: str) -> Dataset:
    """
    Parse a delimited table into a Dataset with ``control_label`` as arm 0.

    Every row is validated as a SubjectRecord. Raises ParseError with the
    1-based line number of the offending row, and MissingStratumArm when a
    stratum is absent from one arm.
    """
    if not control_label:
        raise InvalidInput("a control arm label is required")
    text = text.lstrip("\ufeff")
    header_line = text.split("\n", 1)[0]
    if not header_line.strip():
        raise ParseError("missing header row", line=1)
    delimiter = "\t" if "\t" in header_line else ","

    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    header = [name.strip().lower() for name in next(reader)]
    missing = [name for name in REQUIRED_COLUMNS if name not in header]
    if missing:
        raise ParseError(f"missing column(s): {', '.join(missing)}", line=1)
    position = {name: header.index(name) for name in REQUIRED_COLUMNS}

    rows: List[Tuple[int, Tuple[float, bool, str, str]]] = []
    for row in reader:
        line = reader.line_num
        if not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line)
        values = {name: row[i].strip() for name, i in position.items()}
        empty = [name for name, value in values.items() if not value]
        if empty:
            raise ParseError(f"empty value in column(s): {', '.join(empty)}", line=line)
        if values["status"] not in ("0", "1"):
            raise ParseError(f"unknown status {values['status']!r}; expected 0 or 1", line=line)
        parsed = (_parse_time(values["time"], line), values["status"] == "1", values["arm"], values["stratum"])
        rows.append((line, parsed))

    if not rows:
        raise ParseError("no data rows", line=2)
    labels = sorted({parsed[2] for _, parsed in rows})
    if len(labels) != 2:
        raise ParseError(f"expected exactly two arms, found {labels}")
    if control_label not in labels:
        raise InvalidInput(f"control label {control_label!r} is not one of the arms {labels}")
    treatment_label = next(label for label in labels if label != control_label)

    records = [_subject(parsed, line, control_label) for line, parsed in rows]
    dataset = Dataset.from_records(records, arm_labels=(control_label, treatment_label))
    logger.debug("Dataset parsed", n=dataset.n, strata=list(dataset.stratum_labels),
                 control=control_label, treatment=treatment_label)
    return dataset


def read_dataset(path: Union[str, Path], control_label: str) -> Dataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InvalidInput(f"cannot read {path}: {e.strerror}") from None
    return parse_dataset(text, control_label)


def serialize_dataset(dataset: Dataset) -> str:
    """Canonical CSV form of a dataset; ``parse_dataset`` reads it back unchanged."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(REQUIRED_COLUMNS)
    for record in dataset.records():
        writer.writerow([repr(record.time), int(record.event), dataset.arm_labels[record.arm], record.stratum])
    return buffer.getvalue()


def _contrast_dto(result: ContrastResult) -> ContrastDTO:
    return ContrastDTO(
        scale=result.scale.value, estimate=result.estimate, std_error=result.std_error,
        z_statistic=result.z_statistic, ci_low=result.ci_low, ci_high=result.ci_high,
        p_value=result.p_value,
    )


def _dto_or_none(result: Optional[ContrastResult]) -> Optional[ContrastDTO]:
    return None if result is None else _contrast_dto(result)


def _group_dtos(groups: Optional[Sequence[GroupSummary]], dataset: Dataset) -> Optional[List[GroupSummaryDTO]]:
    if groups is None:
        return None
    return [
        GroupSummaryDTO(
            arm=g.arm, arm_label=dataset.arm_labels[g.arm], estimate=g.estimate, std_error=g.std_error,
            ci_low=g.ci_low, ci_high=g.ci_high, ci_scale=g.ci_scale,
        )
        for g in groups
    ]


def _normalized(strata: Sequence[str], raw: Sequence[float]) -> Optional[Dict[str, float]]:
    total = float(sum(raw))
    if total <= 0:
        return None
    return {s: float(x) / total for s, x in zip(strata, raw)}


def _guarded(method: Method, scale: Scale, compute: Callable[[], ContrastResult]) -> Optional[ContrastResult]:
    try:
        return compute()
    except ZeroEvents as e:
        logger.warning("Method contrast undefined", method=method.value, scale=scale.value, error=str(e))
        return None


def _summaries(*results: Optional[ContrastResult]) -> Optional[Sequence[GroupSummary]]:
    return next((r.group_summaries for r in results if r is not None and r.group_summaries), None)


def _method_block(method: Method, dataset: Dataset, cells, config: AnalysisConfig) -> MethodBlockDTO:
    """
    One method's DAH and RAH. A contrast that is undefined for this data
    (no events where the method needs them) is reported as null.
    """
    tau, alpha = config.tau, config.alpha
    strata = dataset.stratum_labels

    if method is Method.PROPOSED:
        weights = dict(zip(strata, resolve_weights(config.weights, cells)))
        groups = {
            arm: standardized_ah(dataset.arm_cells(arm), weights, tau, config.variance_form, arm=int(arm))
            for arm in Arm
        }
        contrasts = {
            scale: _guarded(method, scale, lambda scale=scale: ah_contrast(
                groups[Arm.CONTROL], groups[Arm.TREATMENT], scale, alpha, config.group_ci_scale))
            for scale in Scale
        }
        return MethodBlockDTO(
            method=method.value, weights=weights,
            groups=_group_dtos(_summaries(*contrasts.values()), dataset),
            difference=_dto_or_none(contrasts[Scale.DIFFERENCE]), ratio=_dto_or_none(contrasts[Scale.RATIO]),
        )

    if method is Method.CONVENTIONAL:
        contrasts = {
            scale: _guarded(method, scale, lambda scale=scale: conventional_contrast(cells, scale, alpha))
            for scale in Scale
        }
        return MethodBlockDTO(
            method=method.value,
            difference=_dto_or_none(contrasts[Scale.DIFFERENCE]), ratio=_dto_or_none(contrasts[Scale.RATIO]),
        )

    adjusted = cmh_adjusted_ah(cells, method, tau)
    contrasts = {
        scale: _guarded(method, scale, lambda scale=scale: cmh_contrast(adjusted, cells, scale, alpha))
        for scale in Scale
    }
    return MethodBlockDTO(
        method=method.value,
        weights=_normalized(strata, adjusted.weights),
        ratio_weights=_normalized(strata, adjusted.ratio_weights),
        groups=_group_dtos(_summaries(*contrasts.values()), dataset),
        difference=_dto_or_none(contrasts[Scale.DIFFERENCE]), ratio=_dto_or_none(contrasts[Scale.RATIO]),
    )


def _stratum_row(stratum: str, arms, dataset: Dataset, alpha: float) -> StratumRowDTO:
    contrasts = {}
    for scale in Scale:
        try:
            contrasts[scale] = _contrast_dto(stratum_contrast(arms[0], arms[1], scale, alpha))
        except ZeroEvents as e:
            logger.warning("Stratum contrast undefined", stratum=stratum, scale=scale.value, error=str(e))
            contrasts[scale] = None
    z = critical_value(alpha)
    groups = [
        GroupSummaryDTO(
            arm=int(arm), arm_label=dataset.arm_labels[int(arm)], estimate=arms[int(arm)].eta_hat,
            std_error=arms[int(arm)].se_natural,
            ci_low=arms[int(arm)].eta_hat - z * arms[int(arm)].se_natural,
            ci_high=arms[int(arm)].eta_hat + z * arms[int(arm)].se_natural,
            ci_scale="natural",
        )
        for arm in Arm
    ]
    return StratumRowDTO(
        stratum=stratum, n_control=arms[0].n, n_treatment=arms[1].n, groups=groups,
        difference=contrasts[Scale.DIFFERENCE], ratio=contrasts[Scale.RATIO],
    )


@traced("analyze")
def analyze(dataset: Dataset, config: AnalysisConfig) -> AnalysisReport:
    """
    Per-stratum AHs and contrasts followed by one block per selected method.

    Estimation errors carry the (arm, stratum) cell they came from.
    """
    form = VarianceForm(config.variance_form or settings.variance_form)
    with operation_context(f"analyze:tau={config.tau:g}"):
        start_time = time.perf_counter()
        logger.info("Analysis started", n=dataset.n, strata=dataset.K, tau=config.tau,
                    methods=[m.value for m in config.methods])

        cells = cell_estimates(dataset, config.tau)
        cell_dtos = [
            CellEstimateDTO(
                arm=arm, arm_label=dataset.arm_labels[arm], stratum=stratum, n=est.n, events=est.events,
                risk_set_at_tau=est.risk_set_at_tau, eta_hat=est.eta_hat, f_hat=est.f_hat, r_hat=est.r_hat,
                var_natural=est.var_natural, var_log=est.var_log,
            )
            for stratum, arms in cells.items()
            for arm, est in sorted(arms.items())
        ]
        strata_rows = [_stratum_row(stratum, arms, dataset, config.alpha) for stratum, arms in cells.items()]
        blocks = [_method_block(method, dataset, cells, config) for method in config.methods]

        logger.info("Analysis completed", elapsed_seconds=round(time.perf_counter() - start_time, 3))

    return AnalysisReport(
        tau=config.tau,
        alpha=config.alpha,
        unit_scale=config.unit_scale,
        variance_form=form.value,
        control_label=dataset.arm_labels[0],
        treatment_label=dataset.arm_labels[1],
        n_total=dataset.n,
        cells=cell_dtos,
        strata=strata_rows,
        methods=blocks,
    )


def simulation_report(result: SimResult, unit_scale: int = 100) -> SimulationReport:
    return SimulationReport(
        name=result.name,
        seed=result.seed,
        replications=result.replications,
        completed=result.completed,
        n_per_arm=result.n_per_arm,
        alpha=result.alpha,
        unit_scale=unit_scale,
        stratum_labels=list(result.stratum_labels),
        failures=dict(sorted(result.failures.items())),
        taus=[
            SimulationTauDTO(
                tau=tau,
                metrics={m: MetricDTO(**asdict(result.metrics[tau][m])) for m in METRICS},
                avg_risk_set={ARM_KEYS[Arm(a)]: cells for a, cells in sorted(result.avg_risk_set[tau].items())},
                min_avg_risk_set={ARM_KEYS[Arm(a)]: v for a, v in sorted(result.min_avg_risk_set[tau].items())},
            )
            for tau in result.taus
        ],
    )


def simulate(scenario: SimScenario, replications: Optional[int] = None, seed: Optional[int] = None,
             n_jobs: Optional[int] = None, unit_scale: Optional[int] = None) -> SimulationReport:
    """Run a scenario, optionally overriding its replication count and seed."""
    overrides = {k: v for k, v in (("replications", replications), ("seed", seed)) if v is not None}
    if overrides:
        try:
            scenario = SimScenario(**{**scenario.model_dump(), **overrides})
        except ValidationError as e:
            error = e.errors()[0]
            raise ScenarioError(error["msg"], key=".".join(str(p) for p in error["loc"])) from None
    result = run_simulation(scenario, n_jobs=n_jobs)
    return simulation_report(result, unit_scale or settings.default_unit_scale)


def format_rate(value: Optional[float], unit_scale: int = 1) -> str:
    return "-" if value is None else f"{value * unit_scale:.3f}"


def format_p(p: float) -> str:
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def _contrast_line(label: str, contrast: Optional[ContrastDTO], unit_scale: int) -> str:
    if contrast is None:
        return f"  {label:<18}-"
    factor = unit_scale if contrast.scale == Scale.DIFFERENCE.value else 1
    return (
        f"  {label:<18}{format_rate(contrast.estimate, factor)} "
        f"({format_rate(contrast.ci_low, factor)}, {format_rate(contrast.ci_high, factor)})"
        f"  p={format_p(contrast.p_value)}"
    )


def _group_lines(groups: Optional[List[GroupSummaryDTO]], unit_scale: int) -> List[str]:
    if groups is None:
        return [f"  {'AH':<18}-"]
    return [
        f"  {'AH ' + g.arm_label:<18}{format_rate(g.estimate, unit_scale)} "
        f"({format_rate(g.ci_low, unit_scale)}, {format_rate(g.ci_high, unit_scale)})"
        for g in groups
    ]


def render_analysis_table(report: AnalysisReport) -> str:
    """Human-readable table mirroring the layout of a published stratified analysis."""
    scale = report.unit_scale
    confidence = round(100 * (1 - report.alpha), 1)
    lines = [
        f"Average hazard analysis, tau = {report.tau:g}",
        f"Rates per {scale} person-months; {confidence:g}% confidence intervals",
        f"Control: {report.control_label}   Treatment: {report.treatment_label}   n = {report.n_total}",
        "",
    ]
    for row in report.strata:
        lines.append(f"Stratum {row.stratum} (n = {row.n_control} / {row.n_treatment})")
        lines.extend(_group_lines(row.groups, scale))
        lines.append(_contrast_line("DAH", row.difference, scale))
        lines.append(_contrast_line("RAH", row.ratio, scale))
        lines.append("")
    for block in report.methods:
        header = f"Method: {block.method}"
        if block.weights:
            header += "  weights " + ", ".join(f"{s}={w:.3f}" for s, w in block.weights.items())
        lines.append(header)
        lines.extend(_group_lines(block.groups, scale))
        lines.append(_contrast_line("DAH", block.difference, scale))
        lines.append(_contrast_line("RAH", block.ratio, scale))
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def render_simulation_table(report: SimulationReport) -> str:
    """True value, min(n), bias, SD, SE and coverage rows by tau."""
    scale = report.unit_scale
    labels = {"AH1": "AH treatment", "AH0": "AH control", "DAH": "DAH", "logRAH": "logRAH"}
    factor = {"AH1": scale, "AH0": scale, "DAH": scale, "logRAH": 1}
    columns = "".join(f"{'tau=' + format(t.tau, 'g'):>10}" for t in report.taus)

    lines = [
        f"Scenario {report.name}: seed {report.seed}, {report.completed}/{report.replications} replicates, "
        f"n per arm {report.n_per_arm}",
        f"AH and DAH per {scale} person-months",
        f"{'':<28}{columns}",
    ]

    def metric_rows(title: str, attribute: str):
        for i, metric in enumerate(METRICS):
            head = f"{title if i == 0 else '':<14}{labels[metric]:<14}"
            cells = []
            for t in report.taus:
                value = getattr(t.metrics[metric], attribute)
                if attribute == "coverage":
                    cells.append(f"{value:>10.3f}")
                else:
                    cells.append(f"{format_rate(value, factor[metric]):>10}")
            lines.append(head + "".join(cells))

    metric_rows("True value", "truth")
    for i, arm in enumerate(("treatment", "control")):
        head = f"{'min(n)' if i == 0 else '':<14}{arm:<14}"
        lines.append(head + "".join(f"{t.min_avg_risk_set[arm]:>10.1f}" for t in report.taus))
    metric_rows("Bias", "bias")
    metric_rows("Empirical SD", "empirical_sd")
    metric_rows("Mean SE", "mean_se")
    metric_rows("Coverage", "coverage")
    if report.failures:
        lines.append("Failed replicates: " + ", ".join(f"{k}={v}" for k, v in report.failures.items()))
    return "\n".join(lines) + "\n"


def render(report: Union[AnalysisReport, SimulationReport], output_format: OutputFormat) -> str:
    if OutputFormat(output_format) is OutputFormat.JSON:
        return report.model_dump_json(indent=2) + "\n"
    if isinstance(report, AnalysisReport):
        return render_analysis_table(report)
    return render_simulation_table(report)
