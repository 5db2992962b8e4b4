"""Scalar numerical primitives: Lambert-W (lower branch), normal tail
probability and its inverse, grid minimization and fixed-step quadrature."""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable

import numpy as np

_INV_E = math.exp(-1.0)
_STD_NORMAL = NormalDist()


class NumericsError(ArithmeticError):
    """Base class for failures in the numerical primitives."""


class DomainError(NumericsError, ValueError):
    pass


class ConvergenceError(NumericsError):
    pass


@dataclass(frozen=True)
class Tolerance:
    abs_tol: float = 1e-15
    rel_tol: float = 1e-15
    max_iter: int = 200

    def __post_init__(self) -> None:
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be > 0")
        if not self.rel_tol >= 0:
            raise ValueError("rel_tol must be >= 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


DEFAULT_TOL = Tolerance()


def _initial_guess_m1(z: float) -> float:
    # series about the branch point for z near -1/e, asymptotic log form near 0
    if z < -0.25:
        p = -math.sqrt(2.0 * (math.e * z + 1.0))
        return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    l1 = math.log(-z)
    l2 = math.log(-l1)
    return l1 - l2 + l2 / l1


def lambert_w_m1(z: float, tol: Tolerance = DEFAULT_TOL) -> float:
    """Lower real branch W_{-1} of the Lambert-W function.

    Returns ``x <= -1`` with ``x * exp(x) == z`` for ``z`` in ``[-1/e, 0)``.
    Halley steps are kept inside a shrinking bisection bracket, so a step
    that would leave the branch is replaced by a bisection step.
    """
    z = float(z)
    if math.isnan(z) or z >= 0.0 or z < -_INV_E * (1.0 + 1e-15):
        raise DomainError(f"lambert_w_m1 defined on [-1/e, 0), got {z!r}")
    if z <= -_INV_E:
        return -1.0

    # g(w) = w e^w is strictly decreasing on (-inf, -1]; root lies in [lo, -1]
    hi = -1.0
    lo = min(_initial_guess_m1(z), -1.0) - 1.0
    while lo * math.exp(lo) < z:
        lo *= 2.0
        if lo < -1e4:
            raise ConvergenceError(f"could not bracket W_-1({z})")

    w = min(max(_initial_guess_m1(z), lo), hi)
    for _ in range(tol.max_iter):
        ew = math.exp(w)
        f = w * ew - z
        if f > 0.0:
            lo = w
        elif f < 0.0:
            hi = w
        else:
            return w
        wp1 = w + 1.0
        if wp1 != 0.0:
            # Halley update
            denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
            step = f / denom if denom != 0.0 else math.inf
            w_new = w - step
        else:
            w_new = math.inf
        if not (lo < w_new < hi):
            w_new = 0.5 * (lo + hi)
        if abs(w_new - w) <= tol.abs_tol + tol.rel_tol * abs(w_new) or hi - lo <= tol.abs_tol + tol.rel_tol * abs(lo):
            return w_new
        w = w_new
    raise ConvergenceError(f"lambert_w_m1({z}) did not converge in {tol.max_iter} iterations")


def lambert_w_m1_negexp(u: float, tol: Tolerance = DEFAULT_TOL) -> float:
    """``W_{-1}(-exp(-u))`` for ``u >= 1``, stable when ``exp(-u)`` underflows.

    Solves ``w + log(-w) = -u`` by Newton iteration beyond the range where
    the argument is representable.
    """
    if not u >= 1.0:
        raise DomainError(f"need u >= 1, got {u!r}")
    if u < 600.0:
        return lambert_w_m1(-math.exp(-u), tol)
    w = -u - math.log(u)
    for _ in range(tol.max_iter):
        h = w + math.log(-w) + u
        w_new = w - h / (1.0 + 1.0 / w)
        if abs(w_new - w) <= tol.abs_tol + tol.rel_tol * abs(w_new) + 4e-16 * abs(w_new):
            return w_new
        w = w_new
    raise ConvergenceError(f"lambert_w_m1_negexp({u}) did not converge")


def q_function(x: float) -> float:
    """Standard normal tail probability ``P(Z > x)``.

    Uses ``erfc``, which keeps full relative precision deep in the upper tail.
    """
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def q_inverse(p: float) -> float:
    """Inverse of :func:`q_function` on ``(0, 1)``."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"q_inverse defined on (0, 1), got {p!r}")
    return -_STD_NORMAL.inv_cdf(p)


def minimize_scalar(
    f: Callable,
    lo: float,
    hi: float,
    step: float,
    vectorized: bool = False,
    chunk: int = 1 << 20,
) -> tuple[float, float]:
    """Exhaustive grid minimization over ``{lo, lo+step, ..., hi}``.

    Ties are broken toward the smaller argument. With ``vectorized=True``
    ``f`` is called on numpy chunks of grid points instead of scalars.

    Returns
    -------
    (argmin, min)
    """
    if not lo < hi:
        raise ValueError("minimize_scalar needs lo < hi")
    if not step > 0:
        raise ValueError("step must be positive")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    best_x, best_f = lo, math.inf
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n), dtype=float)
        xs = lo + step * idx
        if vectorized:
            fs = np.asarray(f(xs), dtype=float)
        else:
            fs = np.fromiter((f(float(x)) for x in xs), dtype=float, count=xs.size)
        fs = np.where(np.isnan(fs), np.inf, fs)
        k = int(np.argmin(fs))
        if fs[k] < best_f:
            best_x, best_f = float(xs[k]), float(fs[k])
    return best_x, best_f


def minimize_convex_grid(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    step: float,
    window: int = 64,
) -> tuple[float, float]:
    """Grid minimization for a convex ``f`` in O(log n) evaluations.

    Integer ternary search over grid indices, then an exhaustive scan of
    ``window`` points either side to absorb rounding plateaus near the
    minimum. Agrees with :func:`minimize_scalar` on convex functions.
    """
    if not lo < hi:
        raise ValueError("minimize_convex_grid needs lo < hi")
    if not step > 0:
        raise ValueError("step must be positive")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1

    def at(i: int) -> float:
        v = f(lo + step * i)
        return math.inf if math.isnan(v) else v

    a, b = 0, n - 1
    while b - a > 2:
        m1 = a + (b - a) // 3
        m2 = b - (b - a) // 3
        if at(m1) <= at(m2):
            b = m2
        else:
            a = m1
    best_i, best_f = -1, math.inf
    for i in range(max(0, a - window), min(n, b + window + 1)):
        v = at(i)
        if v < best_f:
            best_i, best_f = i, v
    return lo + step * best_i, best_f


def integrate(f: Callable, lo: float, hi: float, n: int, vectorized: bool = True):
    """Composite Simpson rule with ``n`` panels (``2n + 1`` evaluations).

    For semi-infinite integrals the caller picks a truncation point ``hi``.
    A vectorized ``f`` may return shape ``(m, ...)`` for ``m`` abscissae; the
    result then has the trailing shape.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if hi < lo:
        raise ValueError("integrate needs lo <= hi")
    xs = np.linspace(lo, hi, 2 * n + 1)
    if vectorized:
        ys = np.asarray(f(xs), dtype=float)
        if ys.ndim == 0:
            ys = np.full(xs.shape, float(ys))
    else:
        ys = np.array([f(float(x)) for x in xs], dtype=float)
    h = (hi - lo) / (2 * n)
    total = ys[0] + ys[-1] + 4.0 * ys[1:-1:2].sum(axis=0) + 2.0 * ys[2:-1:2].sum(axis=0)
    out = total * h / 3.0
    return float(out) if np.ndim(out) == 0 else out
