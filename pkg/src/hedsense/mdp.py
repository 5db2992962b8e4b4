"""Finite-horizon dynamic-programming oracle over a discrete action grid.

The state is the residual phase vector. From state ``P`` an action ``I``
costs the stage cost and, with the survival probability, moves to
``residual_update(P, I)``. After ``horizon`` stages the frontier is valued
by the tail rule:

* ``zero``               nothing more is charged (a lower-bound style cut)
* ``exponential_bound``  the optimal exponential policy's closed-form cost
                         for the residual distribution; a feasible
                         continuation, so the DP value stays an upper bound
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cost import CostModel, stage_cost
from .distributions import HyperExp, mean, residual_update, survival
from .policies import (
    PolicyParams,
    _optimal_exponential,
    exponential_cost,
    sensing_upper_bound,
)

TAIL_RULES = ("zero", "exponential_bound")


class BudgetExceededError(RuntimeError):
    def __init__(self, message: str, node_count: int, depth_reached: int):
        super().__init__(message)
        self.node_count = node_count
        self.depth_reached = depth_reached


@dataclass(frozen=True)
class DpConfig:
    horizon: int
    action_grid: tuple[float, ...]
    tail_rule: str = "exponential_bound"
    p_false: float = 0.0
    max_nodes: int = 2_000_000
    key_quantum: float = 1e-9

    def __post_init__(self) -> None:
        grid = tuple(float(a) for a in self.action_grid)
        object.__setattr__(self, "action_grid", grid)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if len(grid) < 2:
            raise ValueError("action grid needs at least two actions")
        if grid[0] <= 0 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("action grid must be positive and strictly increasing")
        if self.tail_rule not in TAIL_RULES:
            raise ValueError(f"tail_rule must be one of {TAIL_RULES}")
        if not 0.0 <= self.p_false < 1.0:
            raise ValueError("p_false must lie in [0, 1)")

    @classmethod
    def uniform(
        cls, cm: CostModel, d: HyperExp, size: int, horizon: int, upper: float | None = None, **kw
    ) -> "DpConfig":
        """``size`` evenly spaced actions on ``(0, upper]``; ``upper`` defaults
        to the published interval bound."""
        upper = sensing_upper_bound(cm, d) if upper is None else upper
        if not upper > 0:
            raise ValueError("upper must be positive")
        grid = upper * np.arange(1, size + 1) / size
        return cls(horizon, tuple(grid), **kw)

    @property
    def max_gap(self) -> float:
        g = np.asarray(self.action_grid)
        return float(max(g[0], np.diff(g).max()))


@dataclass
class DpResult:
    value: float
    first_action: float
    node_count: int
    depth_reached: int
    path: list[float] = field(default_factory=list)


def tight_action_bound(cm: CostModel, d: HyperExp) -> float:
    """A first action above this bound cannot be optimal.

    Choosing ``I`` costs at least ``w^c C_I (I - E[X])`` in expected
    interference, while the exponential policy achieves ``c*``; so an optimal
    ``I`` satisfies ``I <= E[X] + c* / (w^c C_I)``. The result is capped at
    the published bound, which is often far looser for fast phases.
    """
    _, c_star = _optimal_exponential(cm, mean(d))
    return float(min(sensing_upper_bound(cm, d), mean(d) + c_star / cm.interf_term))


def _tail(cm: CostModel, d: HyperExp, pv: np.ndarray, rule: str) -> np.ndarray:
    if rule == "zero":
        return np.zeros(pv.shape[:-1])
    return _optimal_exponential(cm, pv @ (1.0 / d.lam))[1]


def solve(cm: CostModel, d: HyperExp, cfg: DpConfig) -> DpResult:
    """Minimize the survival-weighted cost over ``cfg.horizon`` grid actions.

    States are memoized per depth on phase vectors quantized to
    ``cfg.key_quantum``. With ``p_false > 0`` the continuation is scaled by
    ``1 - p_false`` to account for false alarms ending the occupancy.
    """
    if cfg.tail_rule == "exponential_bound" and not (0 < cm.weight < 1 and cm.c_sense > 0 and cm.c_interf > 0):
        raise ValueError("exponential_bound tail needs 0 < weight < 1 and positive costs")
    acts = np.asarray(cfg.action_grid)
    H = cfg.horizon
    keep = 1.0 - cfg.p_false
    memo: dict = {}
    deepest = 0

    def key(depth: int, pv: np.ndarray):
        return depth, tuple(np.rint(pv / cfg.key_quantum).astype(np.int64))

    def value(depth: int, pv: np.ndarray) -> float:
        nonlocal deepest
        k = key(depth, pv)
        hit = memo.get(k)
        if hit is not None:
            return hit[0]
        deepest = max(deepest, depth)
        c = stage_cost(cm, d, pv, acts)
        s = survival(d, pv, acts)
        nxt = residual_update(d, pv, acts)
        if depth + 1 == H:
            cont = _tail(cm, d, nxt, cfg.tail_rule)
        else:
            cont = np.array([value(depth + 1, row) for row in nxt])
        total = c + keep * s * cont
        i = int(np.argmin(total))
        if len(memo) >= cfg.max_nodes:
            raise BudgetExceededError(
                f"DP node budget {cfg.max_nodes} exceeded", len(memo), deepest + 1
            )
        memo[k] = (float(total[i]), float(acts[i]), nxt[i])
        return memo[k][0]

    v = value(0, d.p)
    path = []
    pv = d.p
    for depth in range(H):
        entry = memo.get(key(depth, pv))
        if entry is None:
            break
        path.append(entry[1])
        pv = entry[2]
    return DpResult(v, path[0], len(memo), deepest + 1, path)


def snap(x: float, grid: Sequence[float]) -> float:
    g = np.asarray(grid)
    return float(g[int(np.argmin(np.abs(g - x)))])


def evaluate_policy_truncated(
    cm: CostModel,
    d: HyperExp,
    params: PolicyParams,
    horizon: int,
    tail_rule: str = "exponential_bound",
    grid: Sequence[float] | None = None,
) -> float:
    """Expected cost of a fixed policy, scored the way :func:`solve` scores.

    Deterministic policies follow their first ``horizon`` intervals (snapped
    to ``grid`` when given) and then take the tail valuation. Randomized
    policies use their closed forms.
    """
    if tail_rule not in TAIL_RULES:
        raise ValueError(f"tail_rule must be one of {TAIL_RULES}")
    if params.variant == "exponential":
        return float(exponential_cost(cm, mean(d), params.rate))
    if params.variant == "one_stage":
        first = params.first_interval if grid is None else snap(params.first_interval, grid)
        pv1 = residual_update(d, d.p, first)
        return float(
            stage_cost(cm, d, d.p, first)
            + survival(d, d.p, first) * exponential_cost(cm, mean(d, pv1), params.rate)
        )
    seq = params.deterministic_intervals()
    total, surv, pv = 0.0, 1.0, d.p
    for j in range(horizon):
        interval = seq[min(j, len(seq) - 1)]
        if grid is not None:
            interval = snap(interval, grid)
        total += surv * stage_cost(cm, d, pv, interval)
        surv *= survival(d, pv, interval)
        pv = residual_update(d, pv, interval)
    return float(total + surv * _tail(cm, d, pv, tail_rule))
