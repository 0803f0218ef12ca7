"""Command-line entry points: run, compare, sweep, replay and config."""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional

from .engine import CorruptLog, RunLog
from .experiment import (
    OUT_ENV,
    ConfigKeyError,
    ExperimentConfig,
    build_config,
    default_out_dir,
    emit_config,
    parse_value,
    read_config_text,
    run_experiment,
    scalability_sweep,
)
from .metrics import (
    Aggregate,
    aggregate,
    comparison_csv,
    compute_metrics,
    long_format_csv,
    render_table,
    report_json,
    sweep_csv,
)
from .schedulers import POLICY_KINDS

# flags that map onto a config field of the same (dashed) name, parsed from text
_VALUE_FLAGS = {
    "algorithm": "comma-separated policies: priority, rr, throttled",
    "runs": "seeded runs per policy (seeds seed..seed+runs-1)",
    "seed": "first seed",
    "vehicles": "vehicle count; must split evenly over clusters",
    "clusters": "number of twin clusters",
    "k": "rounds of intra-twin exchange per update",
    "alpha": "weight of the vehicle class rank",
    "beta": "weight of the application rank; alpha must exceed 5*beta",
    "aging-interval": "ticks waited per aging step",
    "aging-step": "priority reduction per aging step",
    "aging-floor": "best priority aging can reach",
    "mix": "High,Medium,Normal class shares, summing to 1",
    "horizon": "simulated ticks (1 tick = 1 ms)",
    "arrival-rate": "updates per vehicle per tick",
    "load": "offered load as a multiple of VM capacity; overrides --arrival-rate",
    "trace": "mobility trace CSV for vehicle positions and types",
    "sweep": "comma-separated vehicle counts for the sweep",
    "workers": "worker processes; output does not depend on it",
}


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    for name, text in _VALUE_FLAGS.items():
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), metavar=name.upper().replace("-", "_"), help=text)
    p.add_argument("--fail-twin", dest="fail_twin", action="append", metavar="ID@TICK",
                   help="inject a twin failure; repeatable")
    p.add_argument("--churn", dest="churn", action="store_const", const="on",
                   help="also run with mid-run topology churn to measure adaptability")
    p.add_argument("--no-aging", dest="aging", action="store_const", const="off",
                   help="disable priority aging (waiting tasks never gain priority)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./vdtn-out)")
    p.add_argument("--show-config", action="store_true", help="print the resolved config first")


def resolve_config(args: argparse.Namespace, default_algorithm: Optional[str] = None) -> ExperimentConfig:
    """File values, then flags; every explicit value is parsed strictly."""
    file_values = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_values = read_config_text(fh.read())
    overrides: Dict[str, object] = {}
    for name in (*_VALUE_FLAGS, "churn", "aging"):
        key = name.replace("-", "_")
        text = getattr(args, key, None)
        if text is not None:
            overrides[key] = parse_value(key, text)
    if getattr(args, "fail_twin", None):
        overrides["fail_twin"] = parse_value("fail_twin", ",".join(args.fail_twin))
    if default_algorithm and "algorithm" not in overrides and "algorithm" not in file_values:
        overrides["algorithm"] = parse_value("algorithm", default_algorithm)
    return build_config(file_values, overrides)


def _out_dir(args) -> str:
    path = args.out or default_out_dir()
    os.makedirs(path, exist_ok=True)
    return path


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _run_policies(cfg: ExperimentConfig, out: str, nested: bool) -> Dict[str, Aggregate]:
    rows: Dict[str, Aggregate] = {}
    for policy in cfg.algorithm:
        agg, results = run_experiment(cfg, policy)
        rows[policy] = agg
        run_dir = os.path.join(out, "runs", policy) if nested else os.path.join(out, "runs")
        os.makedirs(run_dir, exist_ok=True)
        for r in results:
            _write(os.path.join(run_dir, f"{r.index}.log"), r.log_text)
            if r.churn_log_text is not None:
                _write(os.path.join(run_dir, f"{r.index}.churn.log"), r.churn_log_text)
        _write(os.path.join(out, f"report.{policy}.csv"), comparison_csv({policy: agg}))
    return rows


def cmd_run(cfg: ExperimentConfig, out: str) -> int:
    rows = _run_policies(cfg, out, nested=len(cfg.algorithm) > 1)
    print(render_table(rows))
    return 0


def cmd_compare(cfg: ExperimentConfig, out: str) -> int:
    rows = _run_policies(cfg, out, nested=True)
    _write(os.path.join(out, "comparison.csv"), comparison_csv(rows))
    _write(os.path.join(out, "comparison.json"), report_json(rows))
    _write(os.path.join(out, "comparison_long.csv"), long_format_csv(rows))
    print(render_table(rows))
    return 0


def cmd_sweep(cfg: ExperimentConfig, out: str, sizes=None) -> int:
    table = scalability_sweep(list(sizes or cfg.sweep), cfg.algorithm, cfg)
    text = sweep_csv(table)
    _write(os.path.join(out, "sweep.csv"), text)
    print(text, end="")
    return 0


def replay_report(log_path: str, churn_path: Optional[str] = None) -> str:
    """The single-run report recomputed from stored logs."""
    log = RunLog.load(log_path)
    churn = RunLog.load(churn_path) if churn_path else None
    agg = aggregate([compute_metrics(log, churn)])
    return comparison_csv({log.meta["policy"]: agg})


def cmd_replay(log_path: str, churn_path: Optional[str] = None, out: Optional[str] = None) -> int:
    text = replay_report(log_path, churn_path)
    if out:
        _write(out, text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vdtn", description="Vehicular digital-twin scheduling simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "seeded runs of one or more policies"),
                       ("compare", "all three policies side by side"),
                       ("sweep", "scalability sweep over vehicle counts"),
                       ("config", "print the resolved config and exit")):
        _add_experiment_flags(sub.add_parser(name, help=text))
    rp = sub.add_parser("replay", help="recompute metrics from a stored run log")
    rp.add_argument("log")
    rp.add_argument("--churn-log", help="matching churn-run log, for adaptability")
    rp.add_argument("--out", help="write the report here as well")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return cmd_replay(args.log, args.churn_log, args.out)
        default_algo = ",".join(POLICY_KINDS) if args.command in ("compare", "sweep") else None
        cfg = resolve_config(args, default_algo)
        if args.command == "config" or args.show_config:
            print(emit_config(cfg), end="")
            if args.command == "config":
                return 0
        out = _out_dir(args)
        if args.command == "run":
            return cmd_run(cfg, out)
        if args.command == "compare":
            return cmd_compare(cfg, out)
        return cmd_sweep(cfg, out)
    except ConfigKeyError as exc:
        print(f"vdtn: config error: {exc}", file=sys.stderr)
        return 2
    except CorruptLog as exc:
        print(f"vdtn: corrupt log: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, KeyError) as exc:
        print(f"vdtn: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
