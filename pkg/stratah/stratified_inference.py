"""
Stratified inference on the average hazard.

The proposed method standardizes the survival curves of each group to a
common set of stratum weights and reports group AHs, their difference (DAH)
and ratio (RAH). For comparison the module also provides the conventional
inverse-variance (Woolf) combination of stratum contrasts and the CMH-type
adjusted AHs.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import norm

from stratah.config import settings
from stratah.exceptions import (
    EstimationError,
    InvalidInput,
    InvalidPairing,
    MissingStratumArm,
    ZeroEvents,
)
from stratah.logging_config import get_logger
from stratah.models import Arm, Dataset, SampleLike
from stratah.survival_core import AhEstimate, TruncatedStratum, ah_from_truncated, kaplan_meier, truncate

logger = get_logger(__name__)

CellEstimates = Mapping[str, Mapping[int, AhEstimate]]


class WeightKind(str, Enum):
    """How standardization weights are chosen."""
    USER_SUPPLIED = "user_supplied"
    EQUAL = "equal"
    SAMPLE_SIZE_PROPORTIONAL = "sample_size_proportional"
    CMH1 = "cmh1"
    CMH2 = "cmh2"
    INVERSE_VARIANCE = "inverse_variance"


class Method(str, Enum):
    PROPOSED = "proposed"
    CONVENTIONAL = "conventional"
    CMH1 = "cmh1"
    CMH2 = "cmh2"
    STRATUM = "stratum"


class Scale(str, Enum):
    DIFFERENCE = "difference"
    RATIO = "ratio"


class VarianceForm(str, Enum):
    """
    Integrand of the standardized AH variance.

    ``printed`` (the default) is w_k {1/B - A R_k(u)/B^2} with A = sum w F and
    B = sum w R. ``linearized`` is the exact first-order influence of each
    stratum on the standardized AH. The two coincide when every stratum AH
    equals the standardized AH, which always holds for K=1.
    """
    PRINTED = "printed"
    LINEARIZED = "linearized"


class WeightScheme(BaseModel):
    kind: WeightKind = WeightKind.SAMPLE_SIZE_PROPORTIONAL
    user_weights: Optional[Union[Dict[str, float], List[float]]] = Field(
        default=None, description="Positive weights keyed by stratum, or listed in stratum order"
    )


@dataclass(frozen=True)
class GroupSummary:
    arm: int
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    ci_scale: str


@dataclass(frozen=True)
class ContrastResult:
    """
    A between-group contrast with its (1 - alpha) CI and two-sided p-value.

    ``std_error`` and ``z_statistic`` are on the test scale: natural for a
    difference, log for a ratio.
    """

    method: Method
    scale: Scale
    estimate: float
    std_error: float
    z_statistic: float
    ci_low: float
    ci_high: float
    p_value: float
    alpha: float
    group_summaries: Optional[Tuple[GroupSummary, GroupSummary]] = None

    def excludes_null(self) -> bool:
        null = 1.0 if self.scale is Scale.RATIO else 0.0
        return not (self.ci_low <= null <= self.ci_high)


@dataclass(frozen=True)
class StandardizedAhEstimate:
    """
    Standardized AH of one group.

    ``var_q`` is the natural-scale variance n_j^-1 V(Q_j); ``var_w`` the
    log-scale variance n_j^-1 V(W_j), None when the group has no events by tau.
    """

    tau: float
    eta_bar_hat: float
    var_q: float
    var_w: Optional[float]
    strata: Tuple[str, ...]
    weights: Tuple[float, ...]
    per_stratum: Tuple[AhEstimate, ...]
    n_total: int
    p_hat: Tuple[float, ...]
    arm: Optional[int] = None
    variance_form: VarianceForm = VarianceForm.PRINTED

    @property
    def se_q(self) -> float:
        return float(np.sqrt(self.var_q))

    @property
    def se_w(self) -> Optional[float]:
        return None if self.var_w is None else float(np.sqrt(self.var_w))


@dataclass(frozen=True)
class CmhAdjustedAh:
    variant: Method
    tau: float
    strata: Tuple[str, ...]
    eta0: float
    eta1: float
    dah: float
    rah: Optional[float]
    weights: Tuple[float, ...]
    ratio_weights: Tuple[float, ...]


def critical_value(alpha: float) -> float:
    """Two-sided standard normal quantile z_{1 - alpha/2}."""
    if not 0.0 < alpha < 1.0:
        raise InvalidInput(f"alpha must lie in (0, 1), got {alpha}")
    return float(norm.ppf(1.0 - alpha / 2.0))


def _two_sided_p(z: float) -> float:
    return float(min(1.0, 2.0 * norm.sf(abs(z))))


def _normalize(raw: Sequence[float]) -> Tuple[float, ...]:
    raw = np.asarray(raw, dtype=float)
    if raw.size == 0:
        raise InvalidInput("at least one stratum weight is required")
    if not np.all(np.isfinite(raw)) or np.any(raw <= 0):
        raise InvalidInput(f"weights must be positive and finite, got {raw.tolist()}")
    return tuple(float(w) for w in raw / raw.sum())


def _weights_in_order(weights: Union[Sequence[float], Mapping[str, float]],
                      strata: Sequence[str]) -> Tuple[float, ...]:
    if isinstance(weights, Mapping):
        missing = [s for s in strata if s not in weights]
        extra = [s for s in weights if s not in strata]
        if missing or extra:
            raise InvalidInput(f"weights keyed by unknown or missing strata: missing={missing}, extra={extra}")
        return _normalize([weights[s] for s in strata])
    weights = list(weights)
    if len(weights) != len(strata):
        raise InvalidInput(f"expected {len(strata)} weights, got {len(weights)}")
    return _normalize(weights)


def _require_both_arms(per_stratum_data: CellEstimates) -> None:
    for stratum, arms in per_stratum_data.items():
        for arm in Arm:
            if int(arm) not in arms:
                raise MissingStratumArm("stratum missing in one arm", arm=int(arm), stratum=stratum)


def cmh_weights(per_stratum_data: CellEstimates, variant: Method) -> Tuple[np.ndarray, np.ndarray]:
    """
    CMH-type stratum weights and the matching weights of the stratum RAHs.

    cmh1: w = n1 n0 R1 R0 / (n1 + n0),        w* = n1 n0 F0 R1 / (n1 + n0)
    cmh2: w = n1 n0 R1 R0 / (n1 R1 + n0 R0),  w* = n1 n0 F0 R1 / (n1 R1 + n0 R0)
    """
    variant = Method(variant)
    _require_both_arms(per_stratum_data)
    cells = [(arms[0], arms[1]) for arms in per_stratum_data.values()]
    n0 = np.array([c0.n for c0, _ in cells], dtype=float)
    n1 = np.array([c1.n for _, c1 in cells], dtype=float)
    r0 = np.array([c0.r_hat for c0, _ in cells])
    r1 = np.array([c1.r_hat for _, c1 in cells])
    f0 = np.array([c0.f_hat for c0, _ in cells])

    if variant is Method.CMH1:
        denominator = n1 + n0
    elif variant is Method.CMH2:
        denominator = n1 * r1 + n0 * r0
    else:
        raise InvalidInput(f"unknown CMH variant {variant}")
    return n1 * n0 * r1 * r0 / denominator, n1 * n0 * f0 * r1 / denominator


def resolve_weights(scheme: WeightScheme, per_stratum_data: CellEstimates) -> Tuple[float, ...]:
    """
    Standardization weights in stratum order, normalized to sum to 1.

    sample_size_proportional uses the combined-arm stratum sizes.
    """
    _require_both_arms(per_stratum_data)
    strata = list(per_stratum_data)

    if scheme.kind is WeightKind.USER_SUPPLIED:
        if scheme.user_weights is None:
            raise InvalidInput("user_supplied weights require user_weights")
        return _weights_in_order(scheme.user_weights, strata)
    if scheme.kind is WeightKind.EQUAL:
        return _normalize([1.0] * len(strata))
    if scheme.kind is WeightKind.SAMPLE_SIZE_PROPORTIONAL:
        return _normalize([arms[0].n + arms[1].n for arms in per_stratum_data.values()])
    if scheme.kind is WeightKind.CMH1:
        return _normalize(cmh_weights(per_stratum_data, Method.CMH1)[0])
    if scheme.kind is WeightKind.CMH2:
        return _normalize(cmh_weights(per_stratum_data, Method.CMH2)[0])
    if scheme.kind is WeightKind.INVERSE_VARIANCE:
        variances = [arms[0].var_natural + arms[1].var_natural for arms in per_stratum_data.values()]
        if any(v <= 0 for v in variances):
            raise InvalidInput("inverse_variance weights need a positive DAH variance in every stratum")
        return _normalize([1.0 / v for v in variances])
    raise InvalidInput(f"unsupported weight scheme {scheme.kind}")


def cell_estimates(dataset: Dataset, tau: float) -> Dict[str, Dict[int, AhEstimate]]:
    """AH of every (arm, stratum) cell, zero-event cells included."""
    estimates: Dict[str, Dict[int, AhEstimate]] = {}
    for stratum in dataset.stratum_labels:
        estimates[stratum] = {}
        for arm in Arm:
            try:
                stratum_data = truncate(dataset.cell(arm, stratum), tau)
            except EstimationError as e:
                raise e.for_cell(arm=int(arm), stratum=stratum) from e
            estimates[stratum][int(arm)] = ah_from_truncated(stratum_data)
    return estimates


def _influence_coefficients(stratum: TruncatedStratum, weight: float, a_total: float, b_total: float,
                            form: VarianceForm) -> np.ndarray:
    if form is VarianceForm.PRINTED:
        return weight * (1.0 / b_total - a_total * stratum.rmst_at_jumps / b_total ** 2)
    return weight * (
        stratum.survival_at_tau / b_total
        + a_total * (stratum.rmst_at_tau - stratum.rmst_at_jumps) / b_total ** 2
    )


def standardized_ah(samples: Mapping[str, SampleLike],
                    weights: Union[Sequence[float], Mapping[str, float]],
                    tau: float,
                    variance_form: Optional[VarianceForm] = None,
                    arm: Optional[int] = None) -> StandardizedAhEstimate:
    """
    Standardized AH of one group:
    sum_k w_k (1 - S_k(tau)) / sum_k w_k R_k(tau), with natural- and log-scale
    variances computed as sums over each stratum's jump set.
    """
    form = VarianceForm(variance_form or settings.variance_form)
    strata = tuple(samples)
    w = _weights_in_order(weights, strata)

    truncated: List[TruncatedStratum] = []
    for stratum in strata:
        try:
            truncated.append(truncate(samples[stratum], tau))
        except EstimationError as e:
            raise e.for_cell(arm=arm, stratum=stratum) from e

    per_stratum = tuple(ah_from_truncated(t) for t in truncated)
    n_total = sum(t.n for t in truncated)
    p_hat = tuple(t.n / n_total for t in truncated)

    a_total = float(sum(wk * t.f_hat for wk, t in zip(w, truncated)))
    b_total = float(sum(wk * t.rmst_at_tau for wk, t in zip(w, truncated)))
    eta_bar = a_total / b_total

    v_q = 0.0
    for wk, pk, t in zip(w, p_hat, truncated):
        coefficient = _influence_coefficients(t, wk, a_total, b_total, form)
        v_q += float(np.sum(coefficient ** 2 * t.hazard_jumps / t.at_risk_fraction)) / pk
    var_q = v_q / n_total
    var_w = var_q / eta_bar ** 2 if eta_bar > 0 else None

    if var_w is None:
        logger.warning("No events by tau in group; log-scale variance undefined", tau=tau, arm=arm)
    logger.debug(
        "Standardized AH estimated",
        tau=tau, arm=arm, eta_bar_hat=eta_bar, var_q=var_q, var_w=var_w,
        weights=list(w), variance_form=form.value,
    )
    return StandardizedAhEstimate(
        tau=float(tau),
        eta_bar_hat=eta_bar,
        var_q=var_q,
        var_w=var_w,
        strata=strata,
        weights=w,
        per_stratum=per_stratum,
        n_total=n_total,
        p_hat=p_hat,
        arm=arm,
        variance_form=form,
    )


def standardized_survival(samples: Mapping[str, SampleLike],
                          weights: Union[Sequence[float], Mapping[str, float]],
                          times) -> np.ndarray:
    """Mixture survival curve sum_k w_k S_k(t) evaluated at ``times``."""
    strata = tuple(samples)
    w = _weights_in_order(weights, strata)
    times = np.asarray(times, dtype=float)
    return sum(wk * np.asarray(kaplan_meier(samples[s]).survival(times)) for wk, s in zip(w, strata))


def standardized_incidence_rate(cells_for_group: Mapping[str, AhEstimate],
                                reference_sizes: Mapping[str, float]) -> float:
    """
    Person-time standardization of stratum AHs.

    Each stratum rate eta_k is weighted by the reference person-time
    N_k R_k(tau); the result equals the standardized AH with w proportional
    to N.
    """
    person_time = {s: reference_sizes[s] * est.r_hat for s, est in cells_for_group.items()}
    total = sum(person_time.values())
    if total <= 0:
        raise InvalidInput("reference person-time must be positive")
    return sum(est.eta_hat * person_time[s] for s, est in cells_for_group.items()) / total


def group_summary(estimate: StandardizedAhEstimate, alpha: float, scale: str = "natural") -> GroupSummary:
    """Point estimate and (1 - alpha) CI of one group's standardized AH."""
    z = critical_value(alpha)
    arm = -1 if estimate.arm is None else estimate.arm
    if scale == "log":
        if estimate.var_w is None:
            raise ZeroEvents("log-scale CI needs at least one event by tau", arm=estimate.arm)
        half = z * estimate.se_w
        return GroupSummary(arm, estimate.eta_bar_hat, estimate.se_w,
                            estimate.eta_bar_hat * float(np.exp(-half)),
                            estimate.eta_bar_hat * float(np.exp(half)), "log")
    half = z * estimate.se_q
    return GroupSummary(arm, estimate.eta_bar_hat, estimate.se_q,
                        estimate.eta_bar_hat - half, estimate.eta_bar_hat + half, "natural")


def _contrast(method: Method, scale: Scale, point: float, test_value: float, std_error: float,
              alpha: float, groups: Optional[Tuple[GroupSummary, GroupSummary]] = None) -> ContrastResult:
    if not std_error > 0:
        raise ZeroEvents("contrast has zero variance; no events by tau")
    z = critical_value(alpha)
    statistic = test_value / std_error
    if scale is Scale.RATIO:
        low, high = point * float(np.exp(-z * std_error)), point * float(np.exp(z * std_error))
    else:
        low, high = point - z * std_error, point + z * std_error
    return ContrastResult(
        method=method, scale=scale, estimate=point, std_error=std_error,
        z_statistic=statistic, ci_low=low, ci_high=high,
        p_value=_two_sided_p(statistic), alpha=alpha, group_summaries=groups,
    )


def ah_contrast(group0: StandardizedAhEstimate, group1: StandardizedAhEstimate,
                scale: Scale = Scale.DIFFERENCE, alpha: float = 0.05,
                group_ci_scale: str = "natural") -> ContrastResult:
    """DAH = eta1 - eta0 or RAH = eta1 / eta0 of two standardized AHs."""
    scale = Scale(scale)
    if group0.tau != group1.tau:
        raise InvalidPairing(f"tau differs between groups: {group0.tau} vs {group1.tau}")
    if group0.strata != group1.strata or not np.allclose(group0.weights, group1.weights, rtol=1e-12, atol=0.0):
        raise InvalidPairing("groups were standardized with different strata or weights")

    groups = None
    if group_ci_scale != "log" or (group0.var_w is not None and group1.var_w is not None):
        groups = (group_summary(group0, alpha, group_ci_scale), group_summary(group1, alpha, group_ci_scale))

    if scale is Scale.DIFFERENCE:
        point = group1.eta_bar_hat - group0.eta_bar_hat
        return _contrast(Method.PROPOSED, scale, point, point,
                         float(np.sqrt(group1.var_q + group0.var_q)), alpha, groups)

    if group0.var_w is None or group1.var_w is None:
        raise ZeroEvents("RAH needs at least one event by tau in both groups",
                         arm=0 if group0.var_w is None else 1)
    point = group1.eta_bar_hat / group0.eta_bar_hat
    return _contrast(Method.PROPOSED, scale, point, float(np.log(point)),
                     float(np.sqrt(group1.var_w + group0.var_w)), alpha, groups)


def inverse_variance_combine(theta_hats: Sequence[float], variances: Sequence[float],
                             alpha: float = 0.05, scale: Scale = Scale.DIFFERENCE,
                             method: Method = Method.CONVENTIONAL) -> ContrastResult:
    """
    Woolf combination sum(theta_k / V_k) / sum(1 / V_k) with variance
    1 / sum(1 / V_k). For the ratio scale ``theta_hats`` are log RAHs and the
    reported estimate and CI are exponentiated.
    """
    scale = Scale(scale)
    theta = np.asarray(theta_hats, dtype=float)
    var = np.asarray(variances, dtype=float)
    if theta.size == 0 or theta.shape != var.shape:
        raise InvalidInput("theta_hats and variances must be non-empty and of equal length")
    if np.any(~np.isfinite(var)) or np.any(var <= 0):
        raise InvalidInput(f"all variances must be positive, got {var.tolist()}")

    precision = 1.0 / var
    combined = float(np.sum(theta * precision) / np.sum(precision))
    std_error = float(np.sqrt(1.0 / np.sum(precision)))
    point = float(np.exp(combined)) if scale is Scale.RATIO else combined
    return _contrast(method, scale, point, combined, std_error, alpha)


def stratum_contrast(a0: AhEstimate, a1: AhEstimate, scale: Scale = Scale.DIFFERENCE,
                     alpha: float = 0.05) -> ContrastResult:
    """Unstratified two-sample DAH or RAH of one stratum."""
    scale = Scale(scale)
    z = critical_value(alpha)
    groups = tuple(
        GroupSummary(arm, a.eta_hat, a.se_natural, a.eta_hat - z * a.se_natural, a.eta_hat + z * a.se_natural, "natural")
        for arm, a in ((0, a0), (1, a1))
    )
    if scale is Scale.DIFFERENCE:
        point = a1.eta_hat - a0.eta_hat
        return _contrast(Method.STRATUM, scale, point, point,
                         float(np.sqrt(a1.var_natural + a0.var_natural)), alpha, groups)
    if a0.var_log is None or a1.var_log is None:
        raise ZeroEvents("RAH needs at least one event by tau in both arms", arm=0 if a0.var_log is None else 1)
    point = a1.eta_hat / a0.eta_hat
    return _contrast(Method.STRATUM, scale, point, float(np.log(point)),
                     float(np.sqrt(a1.var_log + a0.var_log)), alpha, groups)


def conventional_contrast(per_stratum_data: CellEstimates, scale: Scale = Scale.DIFFERENCE,
                          alpha: float = 0.05) -> ContrastResult:
    """Inverse-variance combination of the stratum DAHs or log RAHs."""
    scale = Scale(scale)
    _require_both_arms(per_stratum_data)
    theta, variances = [], []
    for stratum, arms in per_stratum_data.items():
        a0, a1 = arms[0], arms[1]
        if scale is Scale.DIFFERENCE:
            if a1.var_natural + a0.var_natural <= 0:
                raise ZeroEvents("stratum DAH has zero variance without events in either arm", stratum=stratum)
            theta.append(a1.eta_hat - a0.eta_hat)
            variances.append(a1.var_natural + a0.var_natural)
            continue
        if a0.var_log is None or a1.var_log is None:
            raise ZeroEvents("stratum RAH undefined without events in both arms",
                             arm=0 if a0.var_log is None else 1, stratum=stratum)
        theta.append(float(np.log(a1.eta_hat / a0.eta_hat)))
        variances.append(a1.var_log + a0.var_log)
    return inverse_variance_combine(theta, variances, alpha, scale, Method.CONVENTIONAL)


def cmh_adjusted_ah(per_stratum_data: CellEstimates, variant: Method, tau: float) -> CmhAdjustedAh:
    """
    CMH-type adjusted AH per arm, sum_k w_k eta_jk / sum_k w_k, with the
    resulting DAH and RAH. ``ratio_weights`` are the weights w* under which
    the RAH is a weighted average of the stratum RAHs. ``rah`` is None when
    the adjusted control AH is zero.
    """
    variant = Method(variant)
    for stratum, arms in per_stratum_data.items():
        for arm, estimate in arms.items():
            if estimate.tau != tau:
                raise InvalidPairing(f"cell estimated at tau={estimate.tau}, expected {tau}",
                                     arm=arm, stratum=stratum)
    w, w_star = cmh_weights(per_stratum_data, variant)
    eta0 = float(np.sum(w * [arms[0].eta_hat for arms in per_stratum_data.values()]) / np.sum(w))
    eta1 = float(np.sum(w * [arms[1].eta_hat for arms in per_stratum_data.values()]) / np.sum(w))
    return CmhAdjustedAh(
        variant=variant, tau=float(tau), strata=tuple(per_stratum_data),
        eta0=eta0, eta1=eta1, dah=eta1 - eta0, rah=eta1 / eta0 if eta0 > 0 else None,
        weights=tuple(float(x) for x in w), ratio_weights=tuple(float(x) for x in w_star),
    )


def cmh_contrast(adjusted: CmhAdjustedAh, per_stratum_data: CellEstimates,
                 scale: Scale = Scale.DIFFERENCE, alpha: float = 0.05) -> ContrastResult:
    """
    CI and test for a CMH-adjusted contrast by the delta method, holding the
    CMH weights fixed: var(eta_j) = sum_k c_k^2 var(eta_jk), c_k = w_k / sum w.
    """
    scale = Scale(scale)
    c = np.asarray(adjusted.weights) / np.sum(adjusted.weights)
    var0 = float(np.sum(c ** 2 * [arms[0].var_natural for arms in per_stratum_data.values()]))
    var1 = float(np.sum(c ** 2 * [arms[1].var_natural for arms in per_stratum_data.values()]))
    z = critical_value(alpha)
    groups = tuple(
        GroupSummary(arm, eta, float(np.sqrt(v)), eta - z * float(np.sqrt(v)), eta + z * float(np.sqrt(v)), "natural")
        for arm, eta, v in ((0, adjusted.eta0, var0), (1, adjusted.eta1, var1))
    )
    if scale is Scale.DIFFERENCE:
        return _contrast(adjusted.variant, scale, adjusted.dah, adjusted.dah,
                         float(np.sqrt(var0 + var1)), alpha, groups)
    if adjusted.rah is None or adjusted.eta1 <= 0:
        raise ZeroEvents("CMH-adjusted AH is zero; RAH undefined", arm=0 if adjusted.rah is None else 1)
    log_var = var1 / adjusted.eta1 ** 2 + var0 / adjusted.eta0 ** 2
    return _contrast(adjusted.variant, scale, adjusted.rah, float(np.log(adjusted.rah)),
                     float(np.sqrt(log_var)), alpha, groups)
