"""Hyper-exponential idle-time distribution and the residual phase-probability
update that drives the sensing state.

Phase vectors are plain read-only float arrays of length ``K``; every
function here accepts scalar or array time arguments where that is useful
for grid evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class HyperExp:
    """K-phase hyper-exponential distribution.

    With probability ``probs[i]`` the idle time is exponential with rate
    ``rates[i]``. Construction canonicalizes the phases: rates are sorted
    ascending and phases sharing a rate are merged.
    """

    probs: tuple[float, ...]
    rates: tuple[float, ...]
    _p: np.ndarray = field(init=False, repr=False, compare=False)
    _lam: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        probs = [float(p) for p in self.probs]
        rates = [float(r) for r in self.rates]
        if len(probs) != len(rates) or not probs:
            raise ValueError("probs and rates must be nonempty and of equal length")
        if any(not math.isfinite(p) or p < 0 for p in probs):
            raise ValueError(f"phase probabilities must be >= 0, got {probs}")
        if any(not math.isfinite(r) or r <= 0 for r in rates):
            raise ValueError(f"phase rates must be > 0, got {rates}")
        if abs(math.fsum(probs) - 1.0) > PROB_TOL:
            raise ValueError(f"phase probabilities must sum to 1, got sum {math.fsum(probs)!r}")

        merged: dict[float, float] = {}
        for p, r in zip(probs, rates):
            merged[r] = merged.get(r, 0.0) + p
        rates_sorted = tuple(sorted(merged))
        probs_sorted = tuple(merged[r] for r in rates_sorted)
        object.__setattr__(self, "probs", probs_sorted)
        object.__setattr__(self, "rates", rates_sorted)
        object.__setattr__(self, "_p", _frozen(np.array(probs_sorted)))
        object.__setattr__(self, "_lam", _frozen(np.array(rates_sorted)))

    @classmethod
    def exponential(cls, rate: float) -> "HyperExp":
        return cls((1.0,), (rate,))

    @property
    def K(self) -> int:
        return len(self.rates)

    @property
    def p(self) -> np.ndarray:
        """Initial phase vector P^0 as a read-only array."""
        return self._p

    @property
    def lam(self) -> np.ndarray:
        return self._lam

    @property
    def min_rate(self) -> float:
        return self.rates[0]

    @property
    def max_rate(self) -> float:
        return self.rates[-1]

    def scaled(self, factor: float) -> "HyperExp":
        """Same phase mix with every rate multiplied by ``factor``."""
        if not factor > 0:
            raise ValueError("scale factor must be positive")
        return HyperExp(self.probs, tuple(r * factor for r in self.rates))

    def to_dict(self) -> dict:
        return {"probs": list(self.probs), "rates": list(self.rates)}


def phase_vector(d: HyperExp, probs: Sequence[float] | np.ndarray | None = None) -> np.ndarray:
    """Validate ``probs`` as a phase vector for ``d`` (``None`` gives P^0)."""
    if probs is None:
        return d.p
    pv = np.asarray(probs, dtype=float)
    if pv.shape != (d.K,):
        raise ValueError(f"phase vector must have length {d.K}, got shape {pv.shape}")
    if np.any(pv < 0) or abs(math.fsum(pv) - 1.0) > PROB_TOL:
        raise ValueError(f"invalid phase vector {pv}")
    return _frozen(pv.copy())


def sample(d: HyperExp, rng: np.random.Generator, size: int | None = None):
    """Draw idle times: pick a phase by its probability, then an exponential.

    Two uniforms-worth of stream per draw, phase first; ``size=None`` returns
    a float.
    """
    cdf = np.cumsum(d.p)
    cdf[-1] = 1.0
    u = rng.random(size)
    phase = np.searchsorted(cdf, u, side="right")
    scale = 1.0 / d.lam[phase]
    x = rng.exponential(scale)
    return float(x) if size is None else x


def survival(d: HyperExp, pv: np.ndarray, t):
    """``sum_i pv_i exp(-lam_i t)``: probability the residual idle time exceeds ``t``."""
    t_arr = np.asarray(t, dtype=float)
    out = np.exp(-np.multiply.outer(t_arr, d.lam)) @ np.asarray(pv, dtype=float)
    return float(out) if t_arr.ndim == 0 else out


def mean(d: HyperExp, pv: np.ndarray | None = None) -> float:
    """Mean residual idle time ``sum_i pv_i / lam_i``."""
    pv = d.p if pv is None else pv
    return float(np.dot(pv, 1.0 / d.lam))


def residual_update(d: HyperExp, pv: np.ndarray, interval, return_flag: bool = False):
    """Phase vector after the channel has stayed idle for another ``interval``.

    Computed from log weights ``log pv_i - lam_i * interval`` shifted by their
    maximum, so enormous intervals saturate to the smallest-rate phase
    instead of producing 0/0. An array of intervals returns one row per
    interval. With ``return_flag`` the second return value marks rows where
    some initially positive phase underflowed to exactly zero.
    """
    t = np.asarray(interval, dtype=float)
    if np.any(t < 0):
        raise ValueError("interval must be >= 0")
    pv = np.asarray(pv, dtype=float)
    limit = np.zeros(d.K)
    limit[int(np.argmax(pv > 0))] = 1.0
    finite_t = np.where(np.isinf(t), 0.0, t)
    with np.errstate(divide="ignore"):
        logw = np.log(pv) - np.multiply.outer(finite_t, d.lam)
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    out = w / w.sum(axis=-1, keepdims=True)
    out = np.where(np.isinf(t)[..., None], limit, out)
    if t.ndim == 0:
        out = _frozen(out)
    if return_flag:
        flag = np.any((out == 0.0) & (pv > 0.0), axis=-1)
        return out, (bool(flag) if t.ndim == 0 else flag)
    return out


def _excess_fraction(x: np.ndarray) -> np.ndarray:
    # 1 - (1 - e^{-x})/x, with a series branch where cancellation bites
    x = np.asarray(x, dtype=float)
    small = x < 1e-4
    xs = np.where(small, 1.0, x)
    series = x / 2.0 - x * x / 6.0 + x ** 3 / 24.0
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = (xs + np.expm1(-xs)) / xs
    return np.where(small, series, direct)


def interference_expectation(d: HyperExp, pv: np.ndarray, interval):
    """Expected time the SU transmits after the PU has returned within one
    interval: ``I - sum_i pv_i (1 - exp(-lam_i I)) / lam_i``."""
    t = np.asarray(interval, dtype=float)
    frac = _excess_fraction(np.multiply.outer(t, d.lam))
    out = t * (frac @ np.asarray(pv, dtype=float))
    return float(out) if t.ndim == 0 else out
