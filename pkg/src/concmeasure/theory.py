"""Quantitative side of the method: complexity penalty, generalization
certificate, sample/deviation schedule, l-inf to l2 budget conversion and
intrinsic-robustness bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import ParameterError


@dataclass(frozen=True)
class PenaltyParams:
    n: int
    T: int
    m: int
    delta: float

    def __post_init__(self):
        if self.n < 1 or self.T < 1:
            raise ParameterError("n and T must be >= 1")
        if self.m < 2:
            raise ParameterError("m must be >= 2")
        if not 0.0 <= self.delta <= 1.0:
            raise ParameterError(f"delta must lie in [0, 1], got {self.delta}")


def log_penalty_raw(p: PenaltyParams) -> float:
    """Natural log of the unclamped bound ``8 exp(n T ln T ln m - m delta^2 / 128)``."""
    return math.log(8.0) + p.n * p.T * math.log(p.T) * math.log(p.m) - p.m * p.delta**2 / 128.0


def complexity_penalty(p: PenaltyParams) -> float:
    """VC uniform-convergence penalty for unions of T boxes (or balls) in R^n,
    clamped to [0, 1]."""
    log_val = log_penalty_raw(p)
    if log_val >= 0.0:
        return 1.0
    return math.exp(log_val)


@dataclass(frozen=True)
class GeneralizationCertificate:
    h_empirical: float
    delta: float
    confidence: float
    penalty: float
    statement: str


def generalization_certificate(h_emp: float, p: PenaltyParams) -> GeneralizationCertificate:
    """Two-sided bracket on the empirical restricted concentration.

    The expanded family is contained in the base family, so one penalty
    serves for both and the failure probability is ``2 * (phi + phi) = 4 phi``.
    """
    if not 0.0 <= h_emp <= 1.0:
        raise ParameterError(f"h_emp must lie in [0, 1], got {h_emp}")
    phi = complexity_penalty(p)
    confidence = max(0.0, 1.0 - 4.0 * phi)
    # near-certain confidences print as 1 - x so the gap stays visible
    shown = f"1 - {4.0 * phi:.3g}" if 0.0 < 4.0 * phi < 1e-3 else f"{confidence:.6g}"
    statement = (
        f"with probability >= {shown} over the draw of {p.m} samples: "
        f"h(mu, alpha-{p.delta:g}, eps, G) - {p.delta:g} <= {h_emp:.6g} "
        f"<= h(mu, alpha+{p.delta:g}, eps, G) + {p.delta:g}"
    )
    return GeneralizationCertificate(h_emp, p.delta, confidence, phi, statement)


def schedule(T: int) -> tuple[int, float]:
    """Sample size and deviation that make the restricted estimate converge: (T^4, 1/T)."""
    if T < 1:
        raise ParameterError("T must be >= 1")
    return T**4, 1.0 / T


def log_schedule_term(n: int, T: int) -> float:
    """ln of the penalty evaluated on the schedule, ``ln 8 + 4 n T ln^2 T - T^2 / 128``."""
    # with m = T^4 and delta = 1/T: ln m = 4 ln T and m delta^2 = T^2 exactly
    return math.log(8.0) + 4 * n * T * math.log(T) ** 2 - T * T / 128.0


def log_schedule_step(n: int, T: int) -> float:
    """``log_schedule_term(n, T+1) - log_schedule_term(n, T)`` without cancellation."""
    lt, lt1 = math.log(T), math.log(T + 1)
    growth = lt1**2 + T * math.log1p(1.0 / T) * (lt1 + lt)
    return 4 * n * growth - (2 * T + 1) / 128.0


@dataclass(frozen=True)
class ScheduleCheck:
    n: int
    ratio: float
    T0: int
    verified_until: int
    log_tail_bound: float
    delta_vanishes: bool


def check_schedule(n: int, ratio: float = 0.5, horizon: int = 64) -> ScheduleCheck:
    """Verify the penalty series along the schedule is summable.

    Finds ``T0``, the first ``T`` after which every consecutive term ratio is
    at most ``ratio``, checks that on ``[T0, horizon * T0]``, and bounds the
    tail sum by the geometric series ``term(T0) / (1 - ratio)`` (in logs).
    The per-step log-ratio ``4n[(T+1)ln^2(T+1) - T ln^2 T] - (2T+1)/128``
    is eventually decreasing, so once it drops below ``ln ratio`` it stays there.
    """
    if n < 1 or not 0.0 < ratio < 1.0:
        raise ParameterError("need n >= 1 and ratio in (0, 1)")
    log_r = math.log(ratio)

    def step(T):
        return log_schedule_step(n, T)

    hi = 2
    while step(hi) > log_r:
        hi *= 2
    lo = _peak(step, hi)
    while lo < hi:
        mid = (lo + hi) // 2
        if step(mid) <= log_r:
            hi = mid
        else:
            lo = mid + 1
    T0 = hi
    last = T0 * horizon
    grid = {T0, T0 + 1, last}
    grid.update(int(T0 * 1.5**j) for j in range(1, 64) if T0 * 1.5**j <= last)
    for T in sorted(grid):
        if step(T) > log_r:
            raise AssertionError(f"term ratio exceeds {ratio} at T={T}")
    tail = log_schedule_term(n, T0) - math.log1p(-ratio)
    return ScheduleCheck(n, ratio, T0, last, tail, schedule(last)[1] < schedule(T0)[1])


def _peak(step, hi):
    # the log-ratio rises while the VC term's growth dominates, then falls;
    # ternary search over integers for its maximiser
    lo = 1
    while hi - lo > 2:
        a = lo + (hi - lo) // 3
        b = hi - (hi - lo) // 3
        if step(a) < step(b):
            lo = a + 1
        else:
            hi = b
    return max(range(lo, hi + 1), key=step)


def eps_convert(n: int, eps_inf: float) -> float:
    """l2 budget whose ball roughly matches the volume of the l-inf ball: sqrt(n/pi) * eps_inf."""
    if n < 1 or eps_inf < 0:
        raise ParameterError("need n >= 1 and eps_inf >= 0")
    return math.sqrt(n / math.pi) * eps_inf


def intrinsic_robustness(advrisk: float) -> float:
    """Upper estimate of intrinsic robustness against classifiers with risk >= alpha."""
    if not 0.0 <= advrisk <= 1.0:
        raise ParameterError(f"advrisk must lie in [0, 1], got {advrisk}")
    return 1.0 - advrisk


@dataclass
class ConcentrationEstimate:
    """One measured row: the found region and its risk/adv-risk on both splits.

    ``advrisk_train`` is the found region's value of the restricted empirical
    concentration function; the region is the error set of the implied classifier.
    """

    alpha: float
    epsilon: float
    metric: str
    T: int
    risk_train: float
    advrisk_train: float
    risk_test: float
    advrisk_test: float
    region: Any
    config: dict = field(default_factory=dict)
    restart_stats: dict = field(default_factory=dict)
    feasible: bool = True
    details: dict = field(default_factory=dict)
    certificate: Optional[GeneralizationCertificate] = None
