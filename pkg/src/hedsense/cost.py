"""Weighted sensing/interference cost: per-stage cost, realized cost of one
idle period, and the survival-weighted expected total cost."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .distributions import HyperExp, interference_expectation, residual_update, survival


class ExhaustedIntervalsError(ValueError):
    """The supplied intervals end before the idle period does."""


@dataclass(frozen=True)
class CostModel:
    """Cost per sensing, cost per unit interference time, and the weight
    on sensing (interference gets ``1 - weight``)."""

    c_sense: float
    c_interf: float
    weight: float

    def __post_init__(self) -> None:
        if self.c_sense < 0 or self.c_interf < 0:
            raise ValueError("costs must be nonnegative")
        if self.c_sense == 0 and self.c_interf == 0:
            raise ValueError("c_sense and c_interf cannot both be zero")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight must lie in [0, 1], got {self.weight}")

    @property
    def weight_c(self) -> float:
        return 1.0 - self.weight

    @property
    def sense_term(self) -> float:
        """Weighted cost of one sensing."""
        return self.weight * self.c_sense

    @property
    def interf_term(self) -> float:
        """Weighted cost of one time unit of interference."""
        return self.weight_c * self.c_interf

    def with_weight(self, weight: float) -> "CostModel":
        return CostModel(self.c_sense, self.c_interf, weight)

    def combine(self, n_sense, interference):
        """Total cost for a sensing count and an interference time."""
        return self.sense_term * n_sense + self.interf_term * interference


def stage_cost(cm: CostModel, d: HyperExp, pv: np.ndarray, interval):
    """Expected cost of choosing ``interval`` as the next sensing interval
    in phase state ``pv``: one sensing plus the expected interference."""
    return cm.sense_term + cm.interf_term * interference_expectation(d, pv, interval)


def realized_total_cost(
    cm: CostModel, intervals: Iterable[float], idle: float
) -> tuple[float, int, float]:
    """Cost of one realized idle period of length ``idle``.

    Sensing stops at the first index where the running sum of intervals is
    strictly greater than ``idle``; a sum exactly equal to ``idle`` means
    the PU has not yet been seen.

    Returns
    -------
    (cost, n, interference)
    """
    if idle < 0:
        raise ValueError("idle must be >= 0")
    elapsed = 0.0
    n = 0
    for interval in intervals:
        n += 1
        elapsed += interval
        if elapsed > idle:
            interf = elapsed - idle
            return cm.combine(n, interf), n, interf
    raise ExhaustedIntervalsError(
        f"intervals sum to {elapsed} after {n} entries, never exceeding idle={idle}"
    )


def expected_total_cost_recursive(
    cm: CostModel, d: HyperExp, intervals: Sequence[float], pv: np.ndarray | None = None
) -> float:
    """Survival-weighted expansion ``C_0(I_1) + g_0(I_1) C_1(I_2) + ...``
    over exactly the supplied intervals (no tail)."""
    value, _, _ = _expand(cm, d, intervals, d.p if pv is None else pv)
    return value


def _expand(cm, d, intervals, pv):
    total = 0.0
    surv = 1.0
    for interval in intervals:
        total += surv * stage_cost(cm, d, pv, interval)
        surv *= survival(d, pv, interval)
        pv = residual_update(d, pv, interval)
    return total, surv, pv


def expected_total_cost(
    cm: CostModel,
    d: HyperExp,
    intervals: Sequence[float],
    tol: float = 1e-9,
    max_terms: int = 10_000_000,
    pv: np.ndarray | None = None,
) -> tuple[float, float]:
    """Expected total cost of a deterministic interval sequence whose last
    entry repeats forever.

    Terms are added until the remaining tail is provably below ``tol``: with
    survival ``g`` at the truncation point and constant interval ``I``
    thereafter, each later stage costs at most ``w C_S + w^c C_I I`` and the
    survival shrinks at least by ``exp(-lam_min I)`` per stage.

    Returns
    -------
    (value, tail_bound)
    """
    if not intervals:
        raise ValueError("need at least one interval")
    if any(i <= 0 for i in intervals):
        raise ValueError("intervals must be positive")
    pv = d.p if pv is None else pv
    head = list(intervals[:-1])
    last = float(intervals[-1])
    total, surv, pv = _expand(cm, d, head, pv)
    stage_max = cm.sense_term + cm.interf_term * last
    ratio = math.exp(-d.min_rate * last)
    n = len(head)
    while True:
        bound = surv * stage_max / (1.0 - ratio)
        if bound < tol:
            return total, bound
        if n >= max_terms:
            raise RuntimeError(f"tail bound {bound} still above {tol} after {n} terms")
        total += surv * stage_cost(cm, d, pv, last)
        surv *= survival(d, pv, last)
        pv = residual_update(d, pv, last)
        n += 1
