"""Command line: ``dpilqr solve|campaign|check``."""

import argparse
import json
import logging
import os
import sys

from . import __version__
from . import config as cfgio
from .errors import ConfigurationError, DpilqrError, InfeasibleScenarioError
from .sim import (build_problem, generate_scenario, grid, run_campaign, run_name, run_single, summarize,
                  write_campaign, write_trajectory)

OUT_ENV = "DPILQR_OUT"
DEFAULT_OUT = "runs"

log = logging.getLogger("dpilqr")


def _out_dir(args) -> str:
    return args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT


def _load(args) -> cfgio.RunConfig:
    run = cfgio.load(args.scenario)
    planner = cfgio.planner_kind(args.planner) if getattr(args, "planner", None) else None
    return cfgio.override(run, planner=planner, alpha=args.alpha, budget=args.budget,
                          budget_scope=args.budget_scope, seed=args.seed, jobs=args.jobs)


def _meta(run: cfgio.RunConfig, command: str) -> dict:
    return {"version": __version__, "command": command, "seed": run.scenario.seed}


def cmd_solve(args) -> int:
    run = _load(args)
    out = _out_dir(args)
    record, trace, problem = run_single(run.scenario, run.planner, jobs=run.jobs)
    os.makedirs(out, exist_ok=True)
    name = run_name(run.scenario, run.planner)
    write_trajectory(os.path.join(out, name + ".csv"), problem, trace)
    with open(os.path.join(out, name + ".metrics.json"), "w") as f:
        f.write(record.to_json() + "\n")
    with open(os.path.join(out, name + ".manifest.yaml"), "w") as f:
        f.write(cfgio.dumps(run, _meta(run, "solve")))
    print(f"{name}: status={trace.status} steps={trace.n_steps} "
          f"min_distance={record.min_distance:.3f} mean_final_distance={record.mean_final_distance:.4f} "
          f"mean_solve_time={record.mean_solve_time * 1e3:.2f}ms")
    print(f"outputs written to {out}")
    if trace.status == "diverged":
        print("error: closed-loop state diverged", file=sys.stderr)
        return 1
    return 0


def format_table(summary) -> str:
    """Per ``(n_agents, model)``: solve time, distance left and collision rate for each planner."""
    planners = sorted({r["planner"] for r in summary})
    by_key = {}
    for r in summary:
        by_key.setdefault((r["n_agents"], r["model"]), {})[r["planner"]] = r
    head = ["N", "model"]
    for p in planners:
        head += [f"{p}:solve_ms", f"{p}:dist_left", f"{p}:collisions"]
    lines = ["  ".join(f"{h:>24}" if i > 1 else f"{h:>4}" if i == 0 else f"{h:<18}" for i, h in enumerate(head))]
    for (n, model), rows in sorted(by_key.items()):
        cells = [f"{n:>4}", f"{model:<18}"]
        for p in planners:
            r = rows.get(p)
            if r is None:
                cells += [f"{'-':>24}"] * 3
            else:
                cells += [f"{r['mean_solve_time'] * 1e3:>24.3f}", f"{r['mean_distance_left']:>24.4f}",
                          f"{r['collision_rate']:>24.3f}"]
        lines.append("  ".join(cells))
    return "\n".join(lines)


def cmd_campaign(args) -> int:
    run = _load(args)
    camp = run.campaign or cfgio.Campaign()
    planners = (run.planner,) if args.planner else camp.planners
    configs = grid(run.scenario, camp.seeds, camp.n_agents, camp.models)
    jobs = 1 if args.serial else run.jobs
    out = _out_dir(args)
    os.makedirs(out, exist_ok=True)
    records = run_campaign(configs, planners, jobs=jobs, out_dir=out)
    summary = summarize(records)
    write_campaign(out, records, summary)
    with open(os.path.join(out, "manifest.yaml"), "w") as f:
        f.write(cfgio.dumps(run, _meta(run, "campaign")))
    errors = sum(r.error is not None for r in records)
    print(f"{len(records)} runs ({errors} failed), outputs written to {out}")
    if summary:
        print(format_table(summary))
    return 0


def cmd_check(args) -> int:
    run = _load(args)
    x0, goals = generate_scenario(run.scenario)
    problem = build_problem(run.scenario, goals)
    s = run.scenario
    print(f"ok: {problem.n_agents} x {s.model}, planner={run.planner}, alpha={s.alpha}, "
          f"horizon={s.horizon}, dt={s.dt}, budget={s.budget}")
    if args.dump:
        print(cfgio.dumps(run), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpilqr", description="Distributed Potential-iLQR multi-agent planner.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="YAML scenario file")
        sp.add_argument("--planner", choices=sorted(cfgio.PLANNER_ALIASES), default=None,
                        help="override planner.kind (campaign: run only this planner)")
        sp.add_argument("--alpha", type=float, default=None, help="interaction radius factor, >= 1")
        sp.add_argument("--budget", type=float, default=None, help="wall-clock budget per step [s]")
        sp.add_argument("--budget-scope", choices=("per-agent", "global"), default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=None, help="worker count")

    sp = sub.add_parser("solve", help="run one receding-horizon episode")
    common(sp)
    sp.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("campaign", help="run a Monte Carlo grid under both planners")
    common(sp)
    sp.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    sp.add_argument("--serial", action="store_true", help="single process, for timing and reproducibility")
    sp.set_defaults(func=cmd_campaign)

    sp = sub.add_parser("check", help="validate a scenario file without running it")
    common(sp)
    sp.add_argument("--dump", action="store_true", help="print the fully resolved configuration")
    sp.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, InfeasibleScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DpilqrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
