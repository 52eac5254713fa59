"""
One-sample survival machinery truncated at tau.

Kaplan-Meier fit, restricted mean survival time, cumulative incidence,
cumulative-hazard increments, at-risk fractions and the per-stratum average
hazard (AH) with its asymptotic variance. All integrals are exact sums over
the finite jump set of the product-limit curve.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from stratah.config import settings
from stratah.exceptions import InvalidInput, TauBeyondData, ZeroEvents
from stratah.logging_config import get_logger
from stratah.models import SampleLike, as_sample

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous piecewise-constant function on [0, inf)."""

    breakpoints: np.ndarray
    values: np.ndarray
    value_before_first: float = 1.0

    def __post_init__(self):
        breakpoints = np.asarray(self.breakpoints, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if breakpoints.shape != values.shape or breakpoints.ndim != 1:
            raise InvalidInput("breakpoints and values must be 1-d arrays of equal length")
        if breakpoints.size > 1 and np.any(np.diff(breakpoints) <= 0):
            raise InvalidInput("breakpoints must be strictly increasing")
        breakpoints.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "breakpoints", breakpoints)
        object.__setattr__(self, "values", values)
        # running integral at each breakpoint
        widths = np.diff(breakpoints)
        head = self.value_before_first * breakpoints[0] if breakpoints.size else 0.0
        cumulative = np.concatenate(([head], head + np.cumsum(values[:-1] * widths))) if breakpoints.size else np.empty(0)
        object.__setattr__(self, "_cumulative", cumulative)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        safe = np.clip(idx, 0, None)
        result = np.where(idx >= 0, self.values[safe] if self.values.size else self.value_before_first,
                          self.value_before_first)
        return float(result) if result.ndim == 0 else result

    def integral_to(self, t):
        """Exact integral of the function over [0, t]; vectorized over t."""
        t = np.asarray(t, dtype=float)
        if not self.breakpoints.size:
            result = self.value_before_first * t
            return float(result) if result.ndim == 0 else result
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        safe = np.clip(idx, 0, None)
        inside = self._cumulative[safe] + self.values[safe] * (t - self.breakpoints[safe])
        result = np.where(idx >= 0, inside, self.value_before_first * t)
        return float(result) if result.ndim == 0 else result

    def integrate(self, a: float, b: float) -> float:
        return float(self.integral_to(b) - self.integral_to(a))


@dataclass(frozen=True, eq=False)
class KmFit:
    """Product-limit fit of one sample."""

    survival: StepFunction
    event_times: np.ndarray
    deaths_at: np.ndarray
    at_risk_at: np.ndarray
    n: int
    sorted_times: np.ndarray

    @property
    def max_time(self) -> float:
        return float(self.sorted_times[-1])

    def risk_set_size(self, t: float) -> int:
        return int(self.n - np.searchsorted(self.sorted_times, t, side="left"))


@dataclass(frozen=True)
class AhEstimate:
    """
    Average hazard of one (arm, stratum) cell truncated at tau.

    Rates are events per person-month. ``var_log`` is None when no event
    occurred by tau; the log scale is undefined there.
    """

    tau: float
    eta_hat: float
    f_hat: float
    r_hat: float
    var_log: Optional[float]
    var_natural: float
    n: int
    events: int = 0
    risk_set_at_tau: int = 0
    max_term_share: float = 0.0

    @property
    def se_natural(self) -> float:
        return float(np.sqrt(self.var_natural))

    @property
    def se_log(self) -> Optional[float]:
        return None if self.var_log is None else float(np.sqrt(self.var_log))


@dataclass(frozen=True, eq=False)
class TruncatedStratum:
    """
    A fitted sample together with its jump set on [0, tau].

    Arrays are aligned over event times u <= tau: increment dH(u), the
    at-risk fraction G(u) and the running RMST R(u).
    """

    fit: KmFit
    tau: float
    survival_at_tau: float
    rmst_at_tau: float
    jump_times: np.ndarray
    hazard_jumps: np.ndarray
    at_risk_fraction: np.ndarray
    rmst_at_jumps: np.ndarray

    @property
    def n(self) -> int:
        return self.fit.n

    @property
    def f_hat(self) -> float:
        return 1.0 - self.survival_at_tau


def kaplan_meier(sample: SampleLike) -> KmFit:
    """
    Product-limit estimate of S(t).

    At tied times events are processed before censorings, so a subject
    censored at t is still in the risk set of an event at t.
    """
    sample = as_sample(sample)
    if sample.n == 0:
        raise InvalidInput("kaplan_meier requires a non-empty sample")

    sorted_times = np.sort(sample.times)
    event_times, deaths_at = np.unique(sample.times[sample.events], return_counts=True)
    at_risk_at = sample.n - np.searchsorted(sorted_times, event_times, side="left")
    values = np.cumprod(1.0 - deaths_at / at_risk_at)

    sorted_times.setflags(write=False)
    return KmFit(
        survival=StepFunction(event_times, values, 1.0),
        event_times=event_times,
        deaths_at=deaths_at,
        at_risk_at=at_risk_at,
        n=sample.n,
        sorted_times=sorted_times,
    )


def _require_positive_tau(tau: float) -> None:
    if not (tau > 0 and np.isfinite(tau)):
        raise InvalidInput(f"tau must be a positive finite number, got {tau}")


def rmst(fit: KmFit, tau: float) -> float:
    """Restricted mean survival time R(tau), the exact integral of S on [0, tau]."""
    _require_positive_tau(tau)
    return fit.survival.integrate(0.0, tau)


def cumulative_incidence(fit: KmFit, tau: float) -> float:
    """F(tau) = 1 - S(tau)."""
    _require_positive_tau(tau)
    return 1.0 - float(fit.survival(tau))


def _jump_arrays(fit: KmFit, tau: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    keep = fit.event_times <= tau
    times = fit.event_times[keep]
    after = fit.survival.values[keep]
    before = np.concatenate(([fit.survival.value_before_first], fit.survival.values))[:-1][keep]
    nelson_aalen = fit.deaths_at[keep] / fit.at_risk_at[keep]
    positive = after > 0
    with np.errstate(divide="ignore"):
        log_drop = np.log(before) - np.log(np.where(positive, after, 1.0))
    d_hazard = np.where(positive, log_drop, nelson_aalen)
    return times, d_hazard, fit.at_risk_at[keep]


def hazard_increments(fit: KmFit, tau: float) -> List[Tuple[float, float]]:
    """
    Cumulative-hazard jumps dH(u) = log S(u-) - log S(u) at event times u <= tau.

    Where S drops to 0 the Nelson-Aalen increment deaths/at_risk is used.
    """
    _require_positive_tau(tau)
    times, d_hazard, _ = _jump_arrays(fit, tau)
    return [(float(t), float(dh)) for t, dh in zip(times, d_hazard)]


def at_risk_fraction(sample: SampleLike, t: float) -> float:
    """Proportion of subjects with observed time >= t."""
    sample = as_sample(sample)
    if t < 0:
        raise InvalidInput(f"t must be non-negative, got {t}")
    if sample.n == 0:
        raise InvalidInput("at_risk_fraction requires a non-empty sample")
    return float(np.mean(sample.times >= t))


def risk_set_size(sample: SampleLike, t: float) -> int:
    """Number of subjects with observed time >= t."""
    sample = as_sample(sample)
    return int(np.count_nonzero(sample.times >= t))


def truncate(sample: SampleLike, tau: float) -> TruncatedStratum:
    """
    Fit a sample and collect its jump set on [0, tau].

    Raises TauBeyondData when S cannot be estimated at tau: nobody is left at
    risk at tau and the curve has not reached zero.
    """
    _require_positive_tau(tau)
    fit = kaplan_meier(sample)
    survival_at_tau = float(fit.survival(tau))
    if fit.risk_set_size(tau) == 0 and survival_at_tau > 0:
        raise TauBeyondData(
            f"risk set exhausted at {fit.max_time:g} before tau={tau:g}"
        )

    times, d_hazard, at_risk = _jump_arrays(fit, tau)
    return TruncatedStratum(
        fit=fit,
        tau=float(tau),
        survival_at_tau=survival_at_tau,
        rmst_at_tau=rmst(fit, tau),
        jump_times=times,
        hazard_jumps=d_hazard,
        at_risk_fraction=at_risk / fit.n,
        rmst_at_jumps=np.asarray(fit.survival.integral_to(times), dtype=float),
    )


def ah_from_truncated(stratum: TruncatedStratum) -> AhEstimate:
    """AH estimate and variance of an already truncated stratum."""
    f_hat = stratum.f_hat
    r_hat = stratum.rmst_at_tau
    if r_hat <= 0.0:
        raise InvalidInput(f"restricted mean survival time is zero at tau={stratum.tau:g}")
    common = dict(
        tau=stratum.tau,
        f_hat=f_hat,
        r_hat=r_hat,
        n=stratum.n,
        events=int(stratum.fit.deaths_at[stratum.fit.event_times <= stratum.tau].sum()),
        risk_set_at_tau=stratum.fit.risk_set_size(stratum.tau),
    )
    if f_hat <= 0.0:
        return AhEstimate(eta_hat=0.0, var_log=None, var_natural=0.0, **common)

    coefficient = 1.0 / f_hat - stratum.rmst_at_jumps / r_hat
    terms = coefficient ** 2 * stratum.hazard_jumps / stratum.at_risk_fraction
    total = float(terms.sum())
    share = float(terms.max() / total) if total > 0 else 0.0
    if share > settings.risk_set_dominance_threshold:
        logger.warning(
            "One jump dominates the AH variance",
            tau=stratum.tau,
            jump_time=float(stratum.jump_times[int(np.argmax(terms))]),
            share=round(share, 4),
            n=stratum.n,
        )

    eta_hat = f_hat / r_hat
    var_log = total / stratum.n
    return AhEstimate(
        eta_hat=eta_hat,
        var_log=var_log,
        var_natural=eta_hat ** 2 * var_log,
        max_term_share=share,
        **common,
    )


def summarize_stratum(sample: SampleLike, tau: float) -> AhEstimate:
    """
    AH of one cell without raising on zero events.

    A cell with no event by tau has eta_hat = 0 and var_log = None.
    """
    return ah_from_truncated(truncate(sample, tau))


def stratum_ah(sample: SampleLike, tau: float) -> AhEstimate:
    """
    AH estimate eta = (1 - S(tau)) / R(tau) with its asymptotic variance.

    var_log = n^-1 * sum over jumps u <= tau of
    {1/(1 - S(tau)) - R(u)/R(tau)}^2 dH(u) / G(u); var_natural = eta^2 * var_log.
    """
    estimate = summarize_stratum(sample, tau)
    if estimate.var_log is None:
        raise ZeroEvents(f"no events at or before tau={tau:g}")
    logger.debug(
        "Stratum AH estimated",
        tau=tau, n=estimate.n, events=estimate.events,
        eta_hat=estimate.eta_hat, var_log=estimate.var_log,
    )
    return estimate
