"""Run configuration: a single YAML (or JSON) mapping, validated strictly.

Unknown keys anywhere are errors. :meth:`RunConfig.to_dict` emits the fully
resolved mapping, so ``RunConfig.from_dict(cfg.to_dict()) == cfg``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .cost import CostModel
from .distributions import HyperExp
from .mdp import TAIL_RULES, DpConfig, tight_action_bound
from .policies import DEFAULT_STEP, VARIANTS, PolicyParams
from .simulator import ChannelModel, Flags, SensingModel, delayed_phase_update

SWEEP_AXES = ("omega", "load-scale", "p_f")
FORMATS = ("csv", "text")
DP_BOUNDS = ("published", "tight")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _check_keys(section: str, data: Any, allowed: set[str], required: set[str] = frozenset()) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(data).__name__}")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {sorted(unknown)}")
    missing = set(required) - set(data)
    if missing:
        raise ConfigError(f"{section}: missing required key(s) {sorted(missing)}")
    return data


def check_weight(costs: tuple[float, float], w: float, section: str) -> None:
    try:
        CostModel(costs[0], costs[1], w)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from None
    if not 0.0 < w < 1.0:
        raise ConfigError(f"{section}: weight must lie strictly inside (0, 1), got {w}")


def _number(section: str, value: Any, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}: expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"{section}: expected an integer, got {value!r}")
    return kind(value)


@dataclass(frozen=True)
class PolicySpec:
    """A policy to run: derived per weight, or fixed when ``fixed`` is set."""

    variant: str
    periodic_rate: float | None = None
    step: float | None = None
    fixed: PolicyParams | None = None

    @classmethod
    def parse(cls, raw: Any) -> "PolicySpec":
        if isinstance(raw, str):
            raw = {"variant": raw}
        data = _check_keys(
            "policies[]", raw,
            {"variant", "periodic_rate", "step", "interval", "rate", "first_interval", "intervals"},
            {"variant"},
        )
        variant = data["variant"]
        if variant not in VARIANTS:
            raise ConfigError(f"policies[].variant: {variant!r} not one of {VARIANTS}")
        fixed_keys = {"interval", "rate", "first_interval", "intervals"} & set(data)
        fixed = None
        if fixed_keys:
            try:
                fixed = PolicyParams.from_dict({"variant": variant, **{k: data[k] for k in fixed_keys}})
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"policies[{variant}]: {exc}") from None
        rate = data.get("periodic_rate")
        step = data.get("step")
        return cls(
            variant,
            None if rate is None else _number("policies[].periodic_rate", rate),
            None if step is None else _number("policies[].step", step),
            fixed,
        )

    def to_dict(self) -> dict:
        out: dict = {"variant": self.variant}
        if self.periodic_rate is not None:
            out["periodic_rate"] = self.periodic_rate
        if self.step is not None:
            out["step"] = self.step
        if self.fixed is not None:
            out.update({k: v for k, v in self.fixed.to_dict().items() if k != "variant"})
        return out


@dataclass(frozen=True)
class RunConfig:
    hed: HyperExp
    costs: tuple[float, float]
    weights: tuple[float, ...]
    policies: tuple[PolicySpec, ...]
    trials: int = 100_000
    seed: int = 0
    step: float = DEFAULT_STEP
    workers: int = 1
    on_rate: float | None = None
    flags: Flags = Flags()
    sensing: SensingModel = SensingModel()
    dp_check: dict | None = None
    sweep_axis: str = "omega"
    sweep_values: tuple[float, ...] | None = None
    output_path: str | None = None
    output_format: str = "csv"
    inject_idle: tuple[float, ...] | None = None

    @classmethod
    def from_dict(cls, data: Any) -> "RunConfig":
        data = _check_keys(
            "config", data,
            {"hed", "costs", "weights", "policies", "trials", "seed", "step", "workers", "on_rate",
             "flags", "sensing", "dp_check", "sweep", "output", "inject_idle"},
            {"hed", "costs", "weights", "policies"},
        )
        hed_raw = _check_keys("hed", data["hed"], {"probs", "rates"}, {"probs", "rates"})
        try:
            hed = HyperExp(tuple(hed_raw["probs"]), tuple(hed_raw["rates"]))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"hed: {exc}") from None

        costs_raw = _check_keys("costs", data["costs"], {"c_sense", "c_interf"}, {"c_sense", "c_interf"})
        costs = (_number("costs.c_sense", costs_raw["c_sense"]), _number("costs.c_interf", costs_raw["c_interf"]))
        weights_raw = data["weights"]
        if isinstance(weights_raw, (int, float)):
            weights_raw = [weights_raw]
        if not isinstance(weights_raw, list) or not weights_raw:
            raise ConfigError("weights: need at least one weight")
        weights = tuple(_number("weights[]", w) for w in weights_raw)
        for w in weights:
            check_weight(costs, w, "weights")

        pol_raw = data["policies"]
        if isinstance(pol_raw, str):
            pol_raw = [p.strip() for p in pol_raw.split(",") if p.strip()]
        if not isinstance(pol_raw, list) or not pol_raw:
            raise ConfigError("policies: need at least one policy")
        policies = tuple(PolicySpec.parse(p) for p in pol_raw)

        kw: dict = {}
        if "trials" in data:
            kw["trials"] = _number("trials", data["trials"], int)
            if kw["trials"] < 1:
                raise ConfigError("trials: must be >= 1")
        if "seed" in data:
            kw["seed"] = _number("seed", data["seed"], int)
            if not 0 <= kw["seed"] < 2 ** 64:
                raise ConfigError("seed: must be an unsigned 64-bit integer")
        if "step" in data:
            kw["step"] = _number("step", data["step"])
            if kw["step"] <= 0:
                raise ConfigError("step: must be positive")
        if "workers" in data:
            kw["workers"] = _number("workers", data["workers"], int)
            if kw["workers"] < 1:
                raise ConfigError("workers: must be >= 1")
        if data.get("on_rate") is not None:
            kw["on_rate"] = _number("on_rate", data["on_rate"])
            if kw["on_rate"] <= 0:
                raise ConfigError("on_rate: must be positive")

        if "flags" in data:
            fl = _check_keys("flags", data["flags"], {"sensing_error", "delayed_occupancy", "sensing_duration"})
            for k, v in fl.items():
                if not isinstance(v, bool):
                    raise ConfigError(f"flags.{k}: expected true/false, got {v!r}")
            kw["flags"] = Flags(**fl)
        if "sensing" in data:
            sens = _check_keys(
                "sensing", data["sensing"],
                {"p_detect", "snr", "sample_rate", "t_sense", "busy_rate", "p_false"},
            )
            vals = {k: _number(f"sensing.{k}", v) for k, v in sens.items() if v is not None}
            vals.setdefault("p_false", None)
            try:
                kw["sensing"] = SensingModel(**vals)
            except ValueError as exc:
                raise ConfigError(f"sensing: {exc}") from None
        if data.get("dp_check") is not None:
            dp = _check_keys("dp_check", data["dp_check"], {"horizon", "grid_size", "tail_rule", "bound"})
            dp = {
                "horizon": _number("dp_check.horizon", dp.get("horizon", 4), int),
                "grid_size": _number("dp_check.grid_size", dp.get("grid_size", 64), int),
                "tail_rule": dp.get("tail_rule", "exponential_bound"),
                "bound": dp.get("bound", "published"),
            }
            if dp["bound"] not in DP_BOUNDS:
                raise ConfigError(f"dp_check.bound: {dp['bound']!r} not one of {DP_BOUNDS}")
            if dp["tail_rule"] not in TAIL_RULES:
                raise ConfigError(f"dp_check.tail_rule: {dp['tail_rule']!r} not one of {TAIL_RULES}")
            if dp["horizon"] < 1 or dp["grid_size"] < 2:
                raise ConfigError("dp_check: horizon >= 1 and grid_size >= 2 required")
            kw["dp_check"] = dp
        if "sweep" in data:
            sw = _check_keys("sweep", data["sweep"], {"axis", "values"})
            if "axis" in sw:
                if sw["axis"] not in SWEEP_AXES:
                    raise ConfigError(f"sweep.axis: {sw['axis']!r} not one of {SWEEP_AXES}")
                kw["sweep_axis"] = sw["axis"]
            if sw.get("values") is not None:
                kw["sweep_values"] = tuple(_number("sweep.values[]", v) for v in sw["values"])
        if "output" in data:
            out = _check_keys("output", data["output"], {"path", "format"})
            kw["output_path"] = out.get("path")
            fmt = out.get("format", "csv")
            if fmt not in FORMATS:
                raise ConfigError(f"output.format: {fmt!r} not one of {FORMATS}")
            kw["output_format"] = fmt
        if data.get("inject_idle") is not None:
            vals = tuple(_number("inject_idle[]", v) for v in data["inject_idle"])
            if any(v < 0 for v in vals):
                raise ConfigError("inject_idle: idle lengths must be >= 0")
            kw["inject_idle"] = vals
        return cls(hed, costs, weights, policies, **kw)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        sm = self.sensing
        out = {
            "hed": self.hed.to_dict(),
            "costs": {"c_sense": self.costs[0], "c_interf": self.costs[1]},
            "weights": list(self.weights),
            "policies": [p.to_dict() for p in self.policies],
            "trials": self.trials,
            "seed": self.seed,
            "step": self.step,
            "workers": self.workers,
            "on_rate": self.on_rate,
            "flags": {
                "sensing_error": self.flags.sensing_error,
                "delayed_occupancy": self.flags.delayed_occupancy,
                "sensing_duration": self.flags.sensing_duration,
            },
            "sensing": {
                "p_detect": sm.p_detect, "snr": sm.snr, "sample_rate": sm.sample_rate,
                "t_sense": sm.t_sense, "busy_rate": sm.busy_rate, "p_false": sm.p_false,
            },
            "dp_check": self.dp_check,
            "sweep": {"axis": self.sweep_axis, "values": None if self.sweep_values is None else list(self.sweep_values)},
            "output": {"path": self.output_path, "format": self.output_format},
            "inject_idle": None if self.inject_idle is None else list(self.inject_idle),
        }
        return out

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def config_hash(self) -> str:
        """Short digest of everything that affects results (output excluded)."""
        data = self.to_dict()
        data.pop("output")
        data.pop("workers")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def override(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def cost_model(self, weight: float) -> CostModel:
        return CostModel(self.costs[0], self.costs[1], weight)

    @property
    def channel(self) -> ChannelModel:
        return ChannelModel(self.hed, self.on_rate)

    def planning_distribution(self) -> HyperExp:
        """Idle-time law the policies are derived for: with delayed occupancy
        the phase mix left after the occupancy overshoot."""
        if not self.flags.delayed_occupancy:
            return self.hed
        pd = delayed_phase_update(self.hed, self.sensing.busy_rate)
        return HyperExp(tuple(float(p) for p in pd), self.hed.rates)

    def dp_config(self, cm: CostModel) -> DpConfig | None:
        if self.dp_check is None:
            return None
        d = self.planning_distribution()
        upper = tight_action_bound(cm, d) if self.dp_check["bound"] == "tight" else None
        return DpConfig.uniform(cm, d, self.dp_check["grid_size"], self.dp_check["horizon"],
                                upper=upper, tail_rule=self.dp_check["tail_rule"])
