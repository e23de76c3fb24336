"""Command-line front end.

Subcommands: ``experiment <name>``, ``solve-markov``,
``optimize-threshold``, ``simulate``.  Global flags: ``--config``,
``--out``, ``--seed``, ``--format``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import SaveTxError
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment, \
    validate_config
from .power import solve_water_level
from .simulate import Policy, run_best_effort, run_conventional, \
    run_simulation
from .solver import optimize_threshold, solve_markov


def _load_config(args, experiment=None) -> ExperimentConfig:
    if args.config:
        raw = Path(args.config).read_text()
        data = json.loads(raw)
    else:
        data = {}
    if experiment is not None:
        data["experiment"] = experiment
    if args.seed is not None:
        data["seed"] = args.seed
    return validate_config(data)


def _dump(payload: dict, args) -> None:
    text = json.dumps(payload, indent=2, default=float)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{payload.get('command', 'result')}.json"
        path.write_text(text + "\n")
        print(path)
    else:
        print(text)


def _cmd_experiment(args) -> int:
    cfg = _load_config(args, experiment=args.name)
    out_dir = args.out or "."
    result = run_experiment(cfg, out_dir)
    if args.format == "json":
        import csv as _csv

        with open(result["csv"], newline="") as fh:
            rows = list(_csv.DictReader(fh))
        json_path = Path(result["csv"]).with_suffix(".json")
        json_path.write_text(json.dumps(rows, indent=2) + "\n")
        result["json"] = str(json_path)
    print(json.dumps(result))
    return 0


def _cmd_solve_markov(args) -> int:
    cfg = _load_config(args)
    p_s = args.p_s if args.p_s is not None else cfg.p_s_grid[0]
    model = cfg.build_model(p_s)
    table = solve_markov(model, cfg.solver)
    _dump({
        "command": "solve-markov",
        "p_s": p_s,
        "lambda_star": table.lambda_star,
        "outer_iters": table.outer_iters,
        "states": int(table.values.size),
        "stop_fraction": float(table.stop_table.mean()),
    }, args)
    return 0


def _cmd_optimize_threshold(args) -> int:
    cfg = _load_config(args)
    p_s = args.p_s if args.p_s is not None else cfg.p_s_grid[0]
    model = cfg.build_model(p_s)
    policy = optimize_threshold(model, cfg.solver)
    _dump({
        "command": "optimize-threshold",
        "p_s": p_s,
        "gamma_star": policy.gamma,
        "throughput": policy.lambda_star,
    }, args)
    return 0


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    p_s = args.p_s if args.p_s is not None else cfg.p_s_grid[0]
    model = cfg.build_model(p_s)
    mc = cfg.mc
    if args.scheme == "threshold":
        if args.gamma is None:
            raise SaveTxError("--gamma is required for the threshold scheme")
        policy = Policy.threshold(args.gamma)
        m = run_simulation(policy, model, mc["periods"], cfg.seed,
                           warmup_periods=mc["warmup_periods"],
                           replications=mc["replications"],
                           streams=mc["streams"], slot_cap=mc["slot_cap"],
                           trace_path=args.trace)
    elif args.scheme == "dp":
        table = solve_markov(model, cfg.solver)
        m = run_simulation(Policy.dp(table), model, mc["periods"], cfg.seed,
                           warmup_periods=mc["warmup_periods"],
                           replications=mc["replications"],
                           streams=mc["streams"], slot_cap=mc["slot_cap"],
                           trace_path=args.trace)
    elif args.scheme == "best-effort":
        m = run_best_effort(model, mc["slots"], cfg.seed,
                            warmup_slots=mc["warmup_slots"],
                            replications=mc["replications"],
                            streams=mc["streams"])
    else:
        level = solve_water_level(model.private, model.common, model.access,
                                  cfg.p_bar)
        m = run_conventional(model, cfg.p_bar, mc["slots"], cfg.seed,
                             water_level=level,
                             replications=mc["replications"],
                             streams=mc["streams"])
    payload = {
        "command": "simulate",
        "scheme": args.scheme,
        "p_s": p_s,
        "throughput": m.throughput,
        "se_throughput": m.se_throughput,
        "mean_saving_time": m.mean_saving_time,
        "periods": m.periods,
        "cap_hit_fraction": m.cap_hit_fraction,
    }
    if m.realized_avg_power is not None:
        payload["realized_avg_power"] = m.realized_avg_power
    _dump(payload, args)
    return 0


def _add_global_flags(parser, suppress=False):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="JSON config file")
    parser.add_argument("--out", default=d, help="output directory")
    parser.add_argument("--seed", type=int, default=d,
                        help="override the config seed")
    parser.add_argument("--format", choices=("csv", "json"),
                        default=argparse.SUPPRESS if suppress else "csv",
                        help="experiment table format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="savetx",
        description="Save-then-transmit stopping policies: solvers, "
                    "simulators, and experiment tables.")
    _add_global_flags(parser)
    # the same flags are accepted after the subcommand; SUPPRESS keeps a
    # flag given before the subcommand from being reset to a default
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("experiment", parents=[common],
                           help="run a named experiment")
    p_exp.add_argument("name", choices=EXPERIMENTS)
    p_exp.set_defaults(func=_cmd_experiment)

    p_solve = sub.add_parser("solve-markov", parents=[common],
                             help="solve the Markov stopping problem")
    p_solve.add_argument("--p-s", type=float, dest="p_s")
    p_solve.set_defaults(func=_cmd_solve_markov)

    p_opt = sub.add_parser("optimize-threshold", parents=[common],
                           help="search the best pure threshold")
    p_opt.add_argument("--p-s", type=float, dest="p_s")
    p_opt.set_defaults(func=_cmd_optimize_threshold)

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="simulate one scheme")
    p_sim.add_argument("--scheme", required=True,
                       choices=("dp", "threshold", "best-effort",
                                "conventional"))
    p_sim.add_argument("--gamma", type=float)
    p_sim.add_argument("--p-s", type=float, dest="p_s")
    p_sim.add_argument("--trace", help="per-period trace CSV path")
    p_sim.set_defaults(func=_cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SaveTxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
