"""Command-line front end.

    aoii analyze  --scenario S.json (--strategy P.json | --class C --pi V) [--alpha0 A --alpha1 A]
    aoii simulate --scenario S.json --strategy P.json --slots N [--warmup N --reps N --trace]
    aoii optimize --scenario S.json --class C [--starts N --budget N]
    aoii sweep    (--scenario S.json | --preset NAME) --grid 0.001,0.01 [--classes ...]

Every command writes into ``--out`` (default ``.``) together with a
``manifest.json`` describing how to reproduce it.  Exit codes: 0 success,
2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .analysis import analyze
from .markov import ChainError
from .model import (
    AOII,
    PenaltySpec,
    Scenario,
    Strategy,
    StrategyClass,
    ValidationError,
    check,
    db_to_linear,
    paper_scenario,
    strategy_free_parameters,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

REPORT_COLUMNS = ("scenario_hash", "mean_wed", "second_moment_wed", "mean_ced", "gamma",
                  "average_penalty", "average_aoii", "mep")
CURVE_COLUMNS = ("uq_bar", "class", "objective", "mep", "average_aoii", "evaluations",
                 "converged", "best_start", "error", "note")
CSV_SCHEMAS = {"report.csv": "report/1", "curves.csv": "curves/1"}
PRESETS = {"paper": False, "paper-asymmetric": True}

log = logging.getLogger("aoii")


class InputError(ValueError):
    pass


# --- inputs -------------------------------------------------------------------


def _load_json(path: str, what: str) -> dict[str, Any]:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InputError(f"{what}: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{what}: {path} is not valid JSON (line {exc.lineno}, column {exc.colno})") from None
    if not isinstance(data, dict):
        raise InputError(f"{what}: top level of {path} must be an object")
    return data


def load_scenario(path: str) -> Scenario:
    """Scenario from JSON; ``noise_variance_db`` may replace ``noise_variance``."""
    d = _load_json(path, "scenario")
    if "noise_variance_db" in d:
        if "noise_variance" in d:
            raise ValidationError([("noise_variance_db", "give either noise_variance or noise_variance_db")])
        d["noise_variance"] = db_to_linear(d.pop("noise_variance_db"))
    sc = Scenario.from_dict(d)
    check(sc)
    return sc


def scenario_hash(scenario: Scenario) -> str:
    blob = json.dumps(scenario.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _parse_floats(text: str, what: str) -> list[float]:
    text = text.split("=", 1)[1] if "=" in text else text
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    return values


def load_strategy(args, scenario: Scenario) -> Strategy:
    if args.strategy:
        if args.strategy_class or args.pi is not None:
            raise InputError("give either --strategy or --class/--pi")
        st = Strategy.from_dict(_load_json(args.strategy, "strategy"))
    else:
        if not args.strategy_class or args.pi is None:
            raise InputError("need --strategy FILE or both --class and --pi")
        values = _parse_floats(args.pi, "--pi")
        E = scenario.battery_capacity
        k, _ = strategy_free_parameters(args.strategy_class, E)
        if len(values) == 1:
            st = Strategy.constant(E, values[0], args.strategy_class)
        elif len(values) == k:
            st = Strategy.from_params(args.strategy_class, E, values)
        else:
            raise InputError(f"--pi: {args.strategy_class} with E={E} needs 1 or {k} values, got {len(values)}")
    check(scenario, st)
    return st


def penalty_from(args) -> PenaltySpec:
    return PenaltySpec(args.alpha0, args.alpha1)


# --- outputs ------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerows(rows)


def write_manifest(out: Path, args, **extra) -> None:
    manifest = {
        "tool": "aoii",
        "version": __version__,
        "subcommand": args.command,
        "argv": list(args.argv),
        "scenario": getattr(args, "scenario", None),
        "preset": getattr(args, "preset", None),
        "strategy": getattr(args, "strategy", None),
        "strategy_class": getattr(args, "strategy_class", None),
        "out": str(out),
        "seed": getattr(args, "seed", None),
        "csv_schemas": CSV_SCHEMAS,
        **extra,
    }
    write_json(out / "manifest.json", manifest)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# --- subcommands --------------------------------------------------------------


def cmd_analyze(args) -> int:
    scenario = load_scenario(args.scenario)
    strategy = load_strategy(args, scenario)
    rep = analyze(scenario, strategy, penalty_from(args))
    out = _out_dir(args)
    h = scenario_hash(scenario)
    write_json(out / "report.json", {"scenario_hash": h, "scenario": scenario.to_dict(),
                                     "strategy": strategy.to_dict(), **rep.to_dict()})
    row = [h, rep.mean_wed, rep.second_moment_wed, rep.mean_ced, rep.gamma,
           rep.average_penalty, rep.average_aoii, rep.mep]
    write_csv(out / "report.csv", REPORT_COLUMNS, [[_fmt(v) for v in row]])
    write_manifest(out, args)
    print(f"average AoII {rep.average_aoii:.6g}  average penalty {rep.average_penalty:.6g}  MEP {rep.mep:.6g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulator import SimConfig, derive_seeds, run, run_replications

    scenario = load_scenario(args.scenario)
    strategy = load_strategy(args, scenario)
    try:
        config = SimConfig(int(args.slots), int(args.warmup), args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.reps < 1:
        raise InputError("--reps must be >= 1")
    out = _out_dir(args)
    penalty = penalty_from(args)
    if args.trace:
        if args.reps != 1:
            raise InputError("--trace needs --reps 1")
        stats = run(scenario, strategy, config, penalty=penalty, trace_path=out / "trace.csv")
        seeds = [args.seed]
    elif args.reps == 1:
        stats = run(scenario, strategy, config, penalty=penalty)
        seeds = [args.seed]
    else:
        stats = run_replications(scenario, strategy, config, args.reps, penalty=penalty, threads=args.threads)
        seeds = derive_seeds(args.seed, args.reps)
    (out / "stats.json").write_text(stats.dumps() + "\n")
    write_manifest(out, args, slots=config.num_slots, warmup=config.warmup_slots, reps=args.reps, rep_seeds=seeds)
    print(f"average AoII {stats.average_aoii:.6g} +- {stats.aoii_se:.3g} over {stats.slots} slots")
    return EXIT_OK


def cmd_optimize(args) -> int:
    from .optimizer import Objective, optimize

    scenario = load_scenario(args.scenario)
    penalty = penalty_from(args)
    obj = Objective(scenario, args.strategy_class, penalty)
    res = optimize(obj, starts=args.starts, budget=args.budget, seed=args.seed)
    if not math.isfinite(res.value):
        raise ChainError("no start produced a finite objective")
    out = _out_dir(args)
    write_json(out / "result.json", res.to_dict())
    write_json(out / "strategy.json", res.strategy.to_dict())
    write_manifest(out, args, starts=args.starts, budget=args.budget)
    print(f"{args.strategy_class}: objective {res.value:.6g} (converged: {res.converged})")
    return EXIT_OK


def _sweep_cell(task):
    from .optimizer import evaluate_strategy_table

    rate, scenario, classes, penalty, starts, budget, seed = task
    return evaluate_strategy_table([(rate, scenario)], classes, penalty, starts=starts, budget=budget, seed=seed)


def cmd_sweep(args) -> int:
    grid = _parse_floats(args.grid, "--grid")
    if not grid:
        raise InputError("--grid: empty grid")
    if any(v <= 0 for v in grid):
        raise InputError("--grid: transition rates must be > 0")
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    try:
        classes = [StrategyClass(c).value for c in classes]
    except ValueError as exc:
        raise InputError(f"--classes: {exc}") from None
    if args.scenario and args.preset:
        raise InputError("give either --scenario or --preset")
    if args.scenario:
        base = load_scenario(args.scenario)
        scenarios = []
        for rate in grid:
            kw = base.to_dict()
            U, ratio = kw.pop("num_devices"), base.q01 / base.q10
            kw.pop("q01"), kw.pop("q10")
            scenarios.append(Scenario.from_transition_rate(rate, U, ratio, **kw))
    else:
        asym = PRESETS[args.preset or "paper"]
        scenarios = [paper_scenario(rate, asymmetric=asym) for rate in grid]
    for sc in scenarios:
        check(sc)
    penalty = AOII if args.objective == "aoii" else penalty_from(args)

    tasks = [(rate, sc, classes, penalty, args.starts, args.budget, args.seed) for rate, sc in zip(grid, scenarios)]
    if args.threads > 1:
        with ProcessPoolExecutor(args.threads) as ex:
            results = list(ex.map(_sweep_cell, tasks))
    else:
        results = [_sweep_cell(t) for t in tasks]
    rows = [r for cell in results for r in cell]

    out = _out_dir(args)
    write_csv(out / "curves.csv", CURVE_COLUMNS, [
        [_fmt(r.total_rate), r.strategy_class, _fmt(r.objective), _fmt(r.mep), _fmt(r.average_aoii),
         r.evaluations, int(r.converged), r.best_start, r.error, r.note]
        for r in rows
    ])
    write_json(out / "strategies.json", [
        {"uq_bar": r.total_rate, "class": r.strategy_class,
         "strategy": r.strategy.to_dict() if r.strategy is not None else None}
        for r in rows
    ])
    write_manifest(out, args, grid=grid, classes=classes, objective=args.objective,
                   alpha0=penalty.alpha0, alpha1=penalty.alpha1, starts=args.starts, budget=args.budget)
    failed = sum(r.failed for r in rows)
    print(f"{len(rows)} cells written to {out / 'curves.csv'} ({failed} failed)")
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aoii", description="AoII analysis, simulation and strategy optimization")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--alpha0", type=int, default=1)
    common.add_argument("--alpha1", type=int, default=1)

    strat = argparse.ArgumentParser(add_help=False)
    strat.add_argument("--strategy", help="strategy JSON file")
    strat.add_argument("--class", dest="strategy_class", choices=[c.value for c in StrategyClass])
    strat.add_argument("--pi", help="one constant probability or the comma-separated free parameters")

    a = sub.add_parser("analyze", parents=[common, strat], help="approximate analysis of one strategy")
    a.add_argument("--scenario", required=True)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", parents=[common, strat], help="slot-level Monte Carlo")
    s.add_argument("--scenario", required=True)
    s.add_argument("--slots", type=float, default=1e6)
    s.add_argument("--warmup", type=float, default=1e4)
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--trace", action="store_true", help="write trace.csv (tiny runs only)")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("optimize", parents=[common], help="optimize one strategy class")
    o.add_argument("--scenario", required=True)
    o.add_argument("--class", dest="strategy_class", required=True, choices=[c.value for c in StrategyClass])
    o.add_argument("--starts", type=int, default=10)
    o.add_argument("--budget", type=int, default=2000, help="objective evaluations per start")
    o.set_defaults(func=cmd_optimize)

    w = sub.add_parser("sweep", parents=[common], help="optimize every class over a grid of U*q_bar")
    w.add_argument("--scenario", help="base scenario; q01/q10 fix the asymmetry ratio")
    w.add_argument("--preset", choices=sorted(PRESETS))
    w.add_argument("--grid", required=True, help="comma-separated U*q_bar values, e.g. uq_bar=0.001,0.01")
    w.add_argument("--classes", default="reactive,random,hybrid")
    w.add_argument("--objective", choices=("aoii", "penalty"), default="aoii")
    w.add_argument("--starts", type=int, default=10)
    w.add_argument("--budget", type=int, default=2000)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        for fld, msg in exc.errors:
            print(f"error: {fld}: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, TypeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ChainError, ArithmeticError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
