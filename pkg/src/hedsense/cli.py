"""Command-line front end: ``derive``, ``simulate``, ``sweep`` and ``table``.

Every command reads one YAML run configuration; a few flags override
fields of it. Exit status is 0 on success, 2 for an invalid configuration
and 3 when a computation fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Sequence

from .config import FORMATS, SWEEP_AXES, ConfigError, PolicySpec, RunConfig, check_weight
from .cost import CostModel, expected_total_cost
from .distributions import HyperExp, mean
from .mdp import BudgetExceededError, evaluate_policy_truncated, solve
from .numerics import NumericsError
from .policies import (
    PolicyParams,
    derive,
    derive_exponential,
    derive_one_stage,
    sensing_upper_bound,
)
from .simulator import QuadratureError, RunawayTrialError, simulate

log = logging.getLogger("hedsense")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

METRIC_COLUMNS = [
    "mean_n", "se_n", "mean_interference", "se_interference",
    "mean_cost", "se_cost", "throughput", "se_throughput",
]
SIMULATE_COLUMNS = ["policy", "omega", "trials", "seed", *METRIC_COLUMNS, "config_hash"]
SWEEP_COLUMNS = [
    "axis", "value", "policy", "omega", "mean_interval", "expected_cost",
    *METRIC_COLUMNS, "trials", "seed", "config_hash",
]
TABLE_METRICS = [("mean_n", "E[N]"), ("mean_interference", "interference"), ("mean_cost", "C_total")]
DEFAULT_SWEEPS = {
    "omega": tuple(round(0.05 * k, 2) for k in range(1, 20)),
    "load-scale": (0.5, 1.0, 2.0, 4.0),
    "p_f": (0.0, 0.01, 0.02, 0.05, 0.1),
}


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".10g")
    return str(x)


def resolve_params(cfg: RunConfig, spec: PolicySpec, cm: CostModel, d: HyperExp) -> PolicyParams:
    """Parameters for ``spec`` at cost model ``cm`` on planning law ``d``."""
    if spec.fixed is not None:
        return spec.fixed
    return derive(spec.variant, cm, d, spec.step or cfg.step, spec.periodic_rate)


def expected_cost(cm: CostModel, d: HyperExp, params: PolicyParams) -> float:
    """Exact expected total cost of ``params`` on idle law ``d``."""
    if params.deterministic:
        return expected_total_cost(cm, d, params.deterministic_intervals())[0]
    return evaluate_policy_truncated(cm, d, params, horizon=1)


def mean_interval(params: PolicyParams) -> float:
    """Steady-state interval: the repeated interval or the mean exponential one."""
    if params.variant == "periodic":
        return params.interval
    if params.variant == "multishot":
        return params.intervals[-1]
    return 1.0 / params.rate


# --------------------------------------------------------------------------- commands


def cmd_derive(cfg: RunConfig, check: bool = False) -> dict:
    """Optimal parameters per (policy, weight) plus the quantities behind them."""
    d = cfg.planning_distribution()
    results = []
    for w in cfg.weights:
        cm = cfg.cost_model(w)
        dp = None
        if check:
            dcfg = cfg.dp_config(cm)
            if dcfg is None:
                raise ConfigError("--check needs a dp_check section in the config")
            res = solve(cm, d, dcfg)
            dp = {"value": res.value, "first_action": res.first_action, "path": res.path,
                  "node_count": res.node_count, "horizon": dcfg.horizon,
                  "grid_size": len(dcfg.action_grid), "tail_rule": dcfg.tail_rule}
        for spec in cfg.policies:
            entry = {"policy": spec.variant, "omega": w}
            if spec.variant == "one_stage" and spec.fixed is None:
                one = derive_one_stage(cm, d, spec.step or cfg.step)
                params = one.params
                entry.update(upper_bound=one.upper_bound, grid_size=one.grid_size, c_total=one.c_total)
            else:
                params = resolve_params(cfg, spec, cm, d)
                entry["upper_bound"] = sensing_upper_bound(cm, d)
            if spec.variant == "exponential" and spec.fixed is None:
                entry["c_star"] = derive_exponential(cm, d)[1]
            entry["params"] = params.to_dict()
            entry["expected_cost"] = expected_cost(cm, d, params)
            if dp is not None:
                entry["dp"] = dp
                entry["dp_gap"] = entry["expected_cost"] - dp["value"]
            results.append(entry)
    return {
        "config_hash": cfg.config_hash(),
        "distribution": cfg.hed.to_dict(),
        "planning_distribution": d.to_dict(),
        "mean_idle": mean(d),
        "costs": {"c_sense": cfg.costs[0], "c_interf": cfg.costs[1]},
        "results": results,
    }


def load_params(path: str | Path) -> dict[tuple[str, float], PolicyParams]:
    """Parameters from a ``derive`` report keyed by (policy, omega)."""
    try:
        report = json.loads(Path(path).read_text())
        return {
            (r["policy"], float(r["omega"])): PolicyParams.from_dict(r["params"])
            for r in report["results"]
        }
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot load parameters from {path}: {exc}") from None


def _simulate_one(cfg: RunConfig, params: PolicyParams, cm: CostModel):
    ch = cfg.channel
    idle = cfg.inject_idle
    n = len(idle) if idle is not None else cfg.trials
    return simulate(ch, params, cm, n, cfg.seed, cfg.sensing, cfg.flags,
                    idle=idle, workers=cfg.workers), n


def _metric_row(agg) -> dict:
    return {
        "mean_n": agg.mean_n, "se_n": agg.se_n,
        "mean_interference": agg.mean_interference, "se_interference": agg.se_interference,
        "mean_cost": agg.mean_cost, "se_cost": agg.se_cost,
        "throughput": agg.normalized_throughput, "se_throughput": agg.se_throughput,
    }


def iter_simulate(cfg: RunConfig, params_table: dict | None = None) -> Iterable[dict]:
    """Yield one result row per (policy, weight)."""
    h = cfg.config_hash()
    d = cfg.planning_distribution()
    for spec in cfg.policies:
        for w in cfg.weights:
            cm = cfg.cost_model(w)
            if params_table is not None:
                key = (spec.variant, float(w))
                if key not in params_table:
                    raise ConfigError(f"parameter file has no entry for policy {spec.variant} at omega {w}")
                params = params_table[key]
            else:
                params = resolve_params(cfg, spec, cm, d)
            agg, n = _simulate_one(cfg, params, cm)
            yield {"policy": spec.variant, "omega": w, "trials": n, "seed": cfg.seed,
                   **_metric_row(agg), "config_hash": h}


def iter_sweep(cfg: RunConfig) -> Iterable[dict]:
    """Yield rows along ``cfg.sweep_axis``; every point reuses the same seed."""
    axis = cfg.sweep_axis
    values = cfg.sweep_values or DEFAULT_SWEEPS[axis]
    h = cfg.config_hash()
    for value in values:
        if axis == "omega":
            point, weights = cfg, (value,)
        elif axis == "load-scale":
            point, weights = replace(cfg, hed=cfg.hed.scaled(value)), cfg.weights
        else:
            point = replace(cfg, flags=replace(cfg.flags, sensing_error=True),
                            sensing=replace(cfg.sensing, p_false=value))
            weights = cfg.weights
        d = point.planning_distribution()
        for spec in cfg.policies:
            for w in weights:
                cm = cfg.cost_model(w)
                params = resolve_params(point, spec, cm, d)
                agg, n = _simulate_one(point, params, cm)
                yield {"axis": axis, "value": value, "policy": spec.variant, "omega": w,
                       "mean_interval": mean_interval(params),
                       "expected_cost": expected_cost(cm, d, params),
                       **_metric_row(agg), "trials": n, "seed": cfg.seed, "config_hash": h}


def table_rows(rows: Sequence[dict]) -> tuple[list[str], list[dict]]:
    """Pivot per-(policy, weight) rows into one row per policy with a column
    group per metric and one column per weight inside each group."""
    weights = list(dict.fromkeys(r["omega"] for r in rows))
    policies = list(dict.fromkeys(r["policy"] for r in rows))
    by_key = {(r["policy"], r["omega"]): r for r in rows}
    columns = ["policy"] + [f"{key}@{w:g}" for key, _ in TABLE_METRICS for w in weights]
    columns += ["trials", "seed", "config_hash"]
    out = []
    for p in policies:
        first = by_key[(p, weights[0])]
        row = {"policy": p}
        for key, _ in TABLE_METRICS:
            for w in weights:
                row[f"{key}@{w:g}"] = by_key[(p, w)][key]
        row.update(trials=first["trials"], seed=first["seed"], config_hash=first["config_hash"])
        out.append(row)
    return columns, out


def table_text(rows: Sequence[dict]) -> str:
    """Aligned text rendering of :func:`table_rows`: a header line of metric
    groups above a line of weights."""
    weights = list(dict.fromkeys(r["omega"] for r in rows))
    _, wide = table_rows(rows)
    lines = [["", *[label if i == 0 else "" for _, label in TABLE_METRICS for i in range(len(weights))]],
             ["policy", *[f"w={w:g}" for _ in TABLE_METRICS for w in weights]]]
    for row in wide:
        lines.append([row["policy"], *[format(row[f"{key}@{w:g}"], ".4f") for key, _ in TABLE_METRICS for w in weights]])
    widths = [max(len(line[i]) for line in lines) for i in range(len(lines[0]))]
    text = ["  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(line)).rstrip()
            for line in lines]
    return "\n".join(text) + "\n"


# --------------------------------------------------------------------------- plumbing


def _csv_writer(stream, columns):
    writer = csv.DictWriter(stream, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    return writer


def _write_rows(rows: Iterable[dict], columns: Sequence[str], stream) -> None:
    """Stream rows as CSV; a failure leaves the finished rows plus an error footer."""
    writer = _csv_writer(stream, columns)
    try:
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
            stream.flush()
    except ConfigError:
        raise
    except Exception as exc:
        stream.write(f"# error: {type(exc).__name__}: {exc}\n")
        raise


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    changes: dict = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        changes["seed"] = args.seed
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be >= 1")
        changes["trials"] = args.trials
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        changes["workers"] = args.workers
    if args.out is not None:
        changes["output_path"] = args.out
    if args.format is not None:
        changes["output_format"] = args.format
    if args.policy:
        changes["policies"] = tuple(PolicySpec.parse(p.strip()) for p in args.policy.split(",") if p.strip())
    if args.omega:
        try:
            weights = tuple(float(w) for w in args.omega.split(","))
        except ValueError:
            raise ConfigError(f"--omega: cannot parse {args.omega!r}") from None
        for w in weights:
            check_weight(cfg.costs, w, "--omega")
        changes["weights"] = weights
    if getattr(args, "axis", None):
        changes["sweep_axis"] = args.axis
    if getattr(args, "values", None):
        try:
            changes["sweep_values"] = tuple(float(v) for v in args.values.split(","))
        except ValueError:
            raise ConfigError(f"--values: cannot parse {args.values!r}") from None
    return replace(cfg, **changes)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hedsense",
        description="Sensing-interval policies for hyper-exponential channel idle times.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--trials", type=int, help="override the trial count")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--policy", help="comma-separated policy names, replaces the config list")
        p.add_argument("--omega", help="comma-separated weights, replaces the config list")
        p.add_argument("--workers", type=int, help="worker processes for simulation")
        p.add_argument("--format", choices=FORMATS, help="output format where applicable")
        return p

    p = common(sub.add_parser("derive", help="derive optimal policy parameters (JSON)"))
    p.add_argument("--check", action="store_true", help="also run the DP oracle from dp_check")
    p = common(sub.add_parser("simulate", help="Monte Carlo metrics per policy and weight (CSV)"))
    p.add_argument("--params", help="use parameters from a derive report instead of deriving")
    p = common(sub.add_parser("sweep", help="derive and simulate along one axis (CSV)"))
    p.add_argument("--axis", choices=SWEEP_AXES, help="sweep axis")
    p.add_argument("--values", help="comma-separated axis values")
    common(sub.add_parser("table", help="policy-by-weight comparison table"))
    return parser


def run(args: argparse.Namespace, stream) -> None:
    cfg = _apply_overrides(RunConfig.load(args.config), args)
    log.info("config %s (%s)", args.config, cfg.config_hash())
    if args.command == "derive":
        report = cmd_derive(cfg, check=args.check)
        stream.write(json.dumps(report, indent=2) + "\n")
    elif args.command == "simulate":
        table = load_params(args.params) if args.params else None
        _write_rows(iter_simulate(cfg, table), SIMULATE_COLUMNS, stream)
    elif args.command == "sweep":
        _write_rows(iter_sweep(cfg), SWEEP_COLUMNS, stream)
    elif args.command == "table":
        if len(cfg.policies) < 2:
            raise ConfigError("table needs at least two policies")
        rows = list(iter_simulate(cfg))
        if cfg.output_format == "text":
            stream.write(table_text(rows))
        else:
            columns, wide = table_rows(rows)
            _write_rows(wide, columns, stream)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    warnings.simplefilter("default")
    out_path = args.out
    if out_path is None:
        try:
            out_path = RunConfig.load(args.config).output_path
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    owned = open(out_path, "w", newline="") if out_path else None
    stream = owned or sys.stdout
    try:
        run(args, stream)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BrokenPipeError:
        # downstream reader closed early (e.g. ``| head``); silence the final flush
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except (NumericsError, RunawayTrialError, BudgetExceededError, QuadratureError,
            RuntimeError, ArithmeticError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if owned is not None:
            owned.close()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
