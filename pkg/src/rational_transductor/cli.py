"""Command-line entry point: ``rt train | bench | verify | eval``.

The output root defaults to ``./runs`` and can be set with ``RT_OUTPUT_ROOT``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .bench import DEFAULT_GRID
from .errors import RationalError
from .experiments import EXPERIMENTS, default_spec, resolve_spec, run_experiment, verify_all
from .serialize import load_config, load_model, write_report
from .trainer import TaskSpec, evaluate

OUTPUT_ENV = "RT_OUTPUT_ROOT"


def output_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or "runs")


def _lengths(text: str) -> list:
    try:
        out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("lengths must be positive integers")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a named experiment")
    t.add_argument("name", help=f"one of: {', '.join(EXPERIMENTS)}")
    t.add_argument("--config", help="YAML file with train/task/models overrides")
    t.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    t.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or ./runs)")

    b = sub.add_parser("bench", help="latency and parallel-depth benchmark")
    b.add_argument("--tmin", type=int, default=DEFAULT_GRID[0])
    b.add_argument("--tmax", type=int, default=DEFAULT_GRID[-1])
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--out", help="output root")

    v = sub.add_parser("verify", help="theory checks and oracle suites")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--fault", choices=["cayley"], help="inject a fault to exercise the failure path")
    v.add_argument("--out", help="output root")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a task length grid")
    e.add_argument("checkpoint")
    e.add_argument("task", help="experiment name (mod5, lengen, addition, base2) or task kind")
    e.add_argument("--lengths", type=_lengths)
    e.add_argument("--n", type=int, default=256, help="examples per length")
    e.add_argument("--seed", type=int, default=0)
    return p


def _eval_task(name: str, lengths) -> TaskSpec:
    if name in ("mod5", "lengen", "addition", "base2"):
        task = default_spec(name).task
    elif name in ("mod_count", "parity", "addition", "base2"):
        task = TaskSpec(name, 64)
    else:
        raise RationalError(f"unknown task {name!r}; valid: mod5, lengen, addition, base2, mod_count, parity")
    if lengths:
        task.eval_lengths = list(lengths)
    if not task.eval_lengths:
        raise RationalError("no evaluation lengths; pass --lengths")
    return task


def _print_bench(report) -> None:
    print(f"{'kernel':<15} {'T':>6} {'median_ms':>10} {'iqr_ms':>9} {'levels':>6}")
    for r in report["bench"]["rows"]:
        med = "-" if r["median_ms"] is None else f"{r['median_ms']:.3f}"
        iqr = "-" if r["iqr_ms"] is None else f"{r['iqr_ms']:.3f}"
        print(f"{r['kernel']:<15} {r['T']:>6} {med:>10} {iqr:>9} {r['levels']:>6}")
    print("crossovers:", json.dumps(report["bench"]["notes"]["crossovers"]))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            config = load_config(args.config) if args.config else None
            spec = resolve_spec(args.name, config, seed=args.seed, out_dir=output_root(args.out))
            result = run_experiment(spec, log=lambda m: print(m, flush=True))
            if args.name == "verify":
                return result["report"]["exit_status"]
            if args.name == "bench":
                _print_bench(result["report"])
            print(f"wrote {result['dir']}")
            return 0
        if args.command == "bench":
            grid = [t for t in DEFAULT_GRID if args.tmin <= t <= args.tmax] or [args.tmin]
            spec = resolve_spec("bench", {"bench": {"t_grid": grid, "trials": args.trials}},
                                out_dir=output_root(args.out))
            result = run_experiment(spec)
            _print_bench(result["report"])
            print(f"wrote {result['dir']}")
            return 0
        if args.command == "verify":
            code, results = verify_all(args.seed, fault=args.fault)
            out = output_root(args.out) / "verify" / "report.json"
            write_report({"seed": args.seed, "fault": args.fault, "exit_status": code,
                          "checks": [r.to_dict() for r in results]}, out)
            print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
            return code
        if args.command == "eval":
            model = load_model(args.checkpoint)
            task = _eval_task(args.task, args.lengths)
            metrics = evaluate(model, task, task.eval_lengths, args.n, args.seed)
            for length in task.eval_lengths:
                vals = "  ".join(f"{k}={v:.6g}" for k, v in sorted(metrics[length].items()))
                print(f"L={length:<6} {vals}")
            return 0
    except (RationalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
