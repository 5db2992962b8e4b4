"""Sensing-interval policies and their parameter derivations.

Four strategies share one interface (:func:`next_interval`):

* ``periodic``    constant interval, optimal for exponential idle times
* ``exponential`` every interval drawn fresh from an exponential
* ``one_stage``   optimized deterministic first interval, exponential after
* ``multishot``   one periodic optimum per phase rate, fastest rate first,
                  the last interval repeated forever
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cost import CostModel, stage_cost
from .distributions import HyperExp, mean, residual_update, survival
from .numerics import lambert_w_m1_negexp

log = logging.getLogger(__name__)

VARIANTS = ("periodic", "exponential", "one_stage", "multishot")
DEFAULT_STEP = 1e-4


class WeightError(ValueError):
    """Weight at 0 or 1 leaves the sensing/interference trade-off degenerate."""


class UpperBoundWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SensingState:
    pv: np.ndarray
    elapsed: float = 0.0
    index: int = 0

    def __post_init__(self) -> None:
        if self.elapsed < 0 or self.index < 0:
            raise ValueError("elapsed and index must be nonnegative")

    def advance(self, d: HyperExp, interval: float) -> "SensingState":
        return SensingState(
            residual_update(d, self.pv, interval), self.elapsed + interval, self.index + 1
        )


@dataclass(frozen=True)
class PolicyParams:
    """A derived policy.

    ``interval`` is used by periodic, ``rate`` by exponential and by the
    exponential tail of one-stage, ``first_interval`` by one-stage and
    ``intervals`` by multishot.
    """

    variant: str
    interval: float | None = None
    rate: float | None = None
    first_interval: float | None = None
    intervals: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "intervals", tuple(float(i) for i in self.intervals))
        required = {
            "periodic": ("interval",),
            "exponential": ("rate",),
            "one_stage": ("first_interval", "rate"),
            "multishot": ("intervals",),
        }
        if self.variant not in required:
            raise ValueError(f"unknown policy variant {self.variant!r}; expected one of {VARIANTS}")
        for name in required[self.variant]:
            value = getattr(self, name)
            if value is None or value == ():
                raise ValueError(f"{self.variant} policy needs {name}")
        for value in (self.interval, self.rate, self.first_interval, *self.intervals):
            if value is not None and not (value > 0 and math.isfinite(value)):
                raise ValueError(f"policy parameters must be positive and finite, got {value}")

    @classmethod
    def periodic(cls, interval: float) -> "PolicyParams":
        return cls("periodic", interval=interval)

    @classmethod
    def exponential(cls, rate: float) -> "PolicyParams":
        return cls("exponential", rate=rate)

    @classmethod
    def one_stage(cls, first_interval: float, rate: float) -> "PolicyParams":
        return cls("one_stage", first_interval=first_interval, rate=rate)

    @classmethod
    def multishot(cls, intervals: Sequence[float]) -> "PolicyParams":
        return cls("multishot", intervals=tuple(intervals))

    @property
    def deterministic(self) -> bool:
        return self.variant in ("periodic", "multishot")

    def deterministic_intervals(self) -> tuple[float, ...]:
        """Interval sequence whose last entry repeats forever."""
        if self.variant == "periodic":
            return (self.interval,)
        if self.variant == "multishot":
            return self.intervals
        raise ValueError(f"{self.variant} policy draws random intervals")

    def to_dict(self) -> dict:
        out: dict = {"variant": self.variant}
        for name in ("interval", "rate", "first_interval"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        if self.intervals:
            out["intervals"] = list(self.intervals)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyParams":
        unknown = set(data) - {"variant", "interval", "rate", "first_interval", "intervals"}
        if unknown:
            raise ValueError(f"unknown policy parameter keys: {sorted(unknown)}")
        return cls(
            data["variant"],
            interval=data.get("interval"),
            rate=data.get("rate"),
            first_interval=data.get("first_interval"),
            intervals=tuple(data.get("intervals", ())),
        )


def next_interval(params: PolicyParams, state: SensingState, rng: np.random.Generator | None = None) -> float:
    """Interval to use after ``state.index`` sensings in the current occupancy."""
    v = params.variant
    if v == "periodic":
        return params.interval
    if v == "multishot":
        return params.intervals[min(state.index, len(params.intervals) - 1)]
    if v == "one_stage" and state.index == 0:
        return params.first_interval
    if rng is None:
        raise ValueError(f"{v} policy needs a random stream")
    return float(rng.exponential(1.0 / params.rate))


def interval_batch(params: PolicyParams, index: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`next_interval` for trials at sensing indices ``index``.

    Only as many exponentials are drawn as there are randomized slots.
    """
    index = np.asarray(index)
    v = params.variant
    if v == "periodic":
        return np.full(index.shape, params.interval)
    if v == "multishot":
        table = np.asarray(params.intervals)
        return table[np.minimum(index, table.size - 1)]
    scale = 1.0 / params.rate
    if v == "exponential":
        return rng.exponential(scale, index.shape)
    out = np.full(index.shape, params.first_interval)
    later = index > 0
    out[later] = rng.exponential(scale, int(later.sum()))
    return out


def _check_weight(cm: CostModel) -> None:
    if not 0.0 < cm.weight < 1.0:
        raise WeightError(f"weight must lie strictly inside (0, 1), got {cm.weight}")


def derive_periodic(cm: CostModel, rate: float) -> float:
    """Optimal constant interval for exponential idle times of ``rate``.

    Closed form via the lower Lambert-W branch; with ``a = rate * (w/w^c) *
    (C_S/C_I)`` the optimum is ``(-1 - a - W_{-1}(-e^{-1-a})) / rate``.
    """
    _check_weight(cm)
    if not rate > 0:
        raise ValueError("rate must be positive")
    if not cm.c_interf > 0:
        raise ValueError("c_interf must be positive for a finite periodic optimum")
    if not cm.c_sense > 0:
        raise ValueError("c_sense must be positive for a positive periodic optimum")
    a = rate * (cm.weight / cm.weight_c) * (cm.c_sense / cm.c_interf)
    w = lambert_w_m1_negexp(1.0 + a)
    return (-1.0 - a - w) / rate


def periodic_cost(cm: CostModel, rate: float, interval):
    """Expected total cost of constant ``interval`` on exponential idle times."""
    interval = np.asarray(interval, dtype=float)
    q = -np.expm1(-rate * interval)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (cm.sense_term + cm.interf_term * (interval - q / rate)) / q
    return float(out) if out.ndim == 0 else out


def exponential_cost(cm: CostModel, mean_idle, rate: float):
    """Expected total cost of the exponential policy with an arbitrary rate."""
    return cm.sense_term * (rate * mean_idle + 1.0) + cm.interf_term / rate


def _optimal_exponential(cm: CostModel, mean_idle):
    rate = np.sqrt(cm.interf_term / (cm.sense_term * mean_idle))
    c_star = cm.sense_term + 2.0 * np.sqrt(cm.sense_term * cm.interf_term * mean_idle)
    return rate, c_star


def derive_exponential(cm: CostModel, d: HyperExp, pv: np.ndarray | None = None) -> tuple[float, float]:
    """Optimal exponential-policy rate and its minimal expected total cost.

    Returns
    -------
    (rate, c_star)
    """
    _check_weight(cm)
    if not (cm.c_sense > 0 and cm.c_interf > 0):
        raise ValueError("exponential policy needs c_sense > 0 and c_interf > 0")
    rate, c_star = _optimal_exponential(cm, mean(d, pv))
    return float(rate), float(c_star)


def sensing_upper_bound(cm: CostModel, d: HyperExp) -> float:
    """Upper bound on useful sensing intervals, evaluated as published:
    ``(v + 1 + 1/lam_min) / w^c`` with ``v = w^c + w (1 + 1/lam_min) C_I``."""
    if cm.weight >= 1.0:
        raise WeightError("upper bound undefined at weight 1")
    inv = 1.0 / d.min_rate
    v_bar = cm.weight_c + cm.weight * (1.0 + inv) * cm.c_interf
    return (v_bar + 1.0 + inv) / cm.weight_c


@dataclass(frozen=True)
class OneStageResult:
    first_interval: float
    rate: float
    c_total: float
    upper_bound: float
    grid_size: int

    @property
    def params(self) -> PolicyParams:
        return PolicyParams.one_stage(self.first_interval, self.rate)


def one_stage_cost(cm: CostModel, d: HyperExp, first_interval):
    """Expected total cost when ``first_interval`` is followed by the
    exponential policy re-optimized for the residual idle time.

    Returns ``(cost, tail_rate)``, both broadcast over ``first_interval``.
    """
    first = np.asarray(first_interval, dtype=float)
    c0 = stage_cost(cm, d, d.p, first)
    pv1 = residual_update(d, d.p, first)
    mean1 = pv1 @ (1.0 / d.lam)
    rate1, c_exp = _optimal_exponential(cm, mean1)
    return c0 + survival(d, d.p, first) * c_exp, rate1


def derive_one_stage(
    cm: CostModel, d: HyperExp, step: float = DEFAULT_STEP, max_doublings: int = 8
) -> OneStageResult:
    """Grid search for the best first interval.

    The grid runs ``step, 2*step, ...`` up to and including the interval
    upper bound. An optimum on the last grid point means the bound was too
    tight; it is then doubled (with a warning) and the search repeated.
    """
    _check_weight(cm)
    if not (cm.c_sense > 0 and cm.c_interf > 0):
        raise ValueError("one-stage policy needs c_sense > 0 and c_interf > 0")
    if not step > 0:
        raise ValueError("step must be positive")
    upper = sensing_upper_bound(cm, d)
    for _ in range(max_doublings + 1):
        n = int(math.floor(upper / step + 1e-9))
        grid = step * np.arange(1, n + 1, dtype=float)
        if grid.size == 0 or grid[-1] < upper:
            grid = np.append(grid, upper)
        costs, rates = one_stage_cost(cm, d, grid)
        k = int(np.argmin(costs))
        if k < grid.size - 1:
            return OneStageResult(float(grid[k]), float(rates[k]), float(costs[k]), upper, grid.size)
        warnings.warn(
            f"one-stage optimum sits on the interval bound {upper:.6g}; doubling it",
            UpperBoundWarning,
            stacklevel=2,
        )
        upper *= 2.0
    raise RuntimeError("one-stage optimum kept hitting the interval bound")


def derive_multishot(cm: CostModel, d: HyperExp) -> tuple[float, ...]:
    """Periodic optima for the phase rates taken largest first."""
    return tuple(derive_periodic(cm, r) for r in reversed(d.rates))


def derive(
    variant: str, cm: CostModel, d: HyperExp, step: float = DEFAULT_STEP, periodic_rate: float | None = None
) -> PolicyParams:
    """Optimal parameters for ``variant``.

    For ``periodic`` on a multi-phase distribution the rate defaults to the
    reciprocal of the mean idle time.
    """
    if variant == "periodic":
        rate = periodic_rate if periodic_rate is not None else 1.0 / mean(d)
        return PolicyParams.periodic(derive_periodic(cm, rate))
    if variant == "exponential":
        return PolicyParams.exponential(derive_exponential(cm, d)[0])
    if variant == "one_stage":
        return derive_one_stage(cm, d, step).params
    if variant == "multishot":
        return PolicyParams.multishot(derive_multishot(cm, d))
    raise ValueError(f"unknown policy variant {variant!r}; expected one of {VARIANTS}")
