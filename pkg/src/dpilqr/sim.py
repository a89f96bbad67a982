"""Monte Carlo campaigns comparing the centralized and distributed planners."""

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .costs import ProximityCost, default_tracking
from .dynamics import make_model
from .errors import ConfigurationError, DpilqrError, InfeasibleScenarioError
from .ilqr import SolverOptions
from .planner import PLANNER_KINDS, PlannerConfig, Problem, SimulationTrace, min_pairwise_distance, run_receding_horizon

log = logging.getLogger(__name__)

MAX_REJECTIONS = 10_000
DEFAULT_WORKSPACE = {"double_integrator": (10.0, 10.0), "unicycle": (10.0, 10.0), "quad6d": (10.0, 10.0, 4.0)}


@dataclass(frozen=True)
class CostConfig:
    q_position: float = 1.0
    q_other: float = 0.1
    r: float = 0.1
    qf_scale: float = 100.0
    beta: float = 500.0


@dataclass(frozen=True)
class ScenarioConfig:
    n_agents: int = 3
    model: str = "double_integrator"
    dt: float = 0.1
    horizon: int = 40
    d_prox: float = 0.5
    alpha: float = 1.5
    seed: int = 0
    workspace: Optional[tuple] = None  # defaults per model, see DEFAULT_WORKSPACE
    min_separation: float = 1.0
    n_steps: int = 100
    goal_tolerance: float = 0.1
    budget: Optional[float] = None
    budget_scope: str = "per-agent"
    warm_start: str = "plans"
    collision_fraction: float = 0.8
    costs: CostConfig = field(default_factory=CostConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)
    x0: Optional[tuple] = None  # explicit per-agent initial states
    goals: Optional[tuple] = None  # explicit per-agent goal states

    def __post_init__(self):
        if self.n_agents < 1:
            raise ConfigurationError("n_agents must be at least 1")
        make_model(self.model)
        if not self.dt > 0 or self.horizon < 1 or self.n_steps < 1:
            raise ConfigurationError("dt, horizon and n_steps must be positive")
        if not self.d_prox > 0:
            raise ConfigurationError("d_prox must be positive")
        if self.alpha < 1:
            raise ConfigurationError(f"alpha must be >= 1, got {self.alpha}")
        if self.min_separation < self.d_prox:
            raise ConfigurationError("min_separation must be at least d_prox")
        if self.workspace is not None:
            object.__setattr__(self, "workspace", tuple(float(w) for w in self.workspace))
            if len(self.workspace) != len(make_model(self.model).pos_idx) or min(self.workspace) <= 0:
                raise ConfigurationError("workspace must give one positive extent per position axis")

    @property
    def extent(self) -> tuple:
        return self.workspace if self.workspace is not None else DEFAULT_WORKSPACE[self.model]

    @property
    def separation(self) -> float:
        return max(2.0 * self.d_prox, self.min_separation)


def _sample_points(rng, n, extent, sep, budget):
    pts = []
    while len(pts) < n:
        p = rng.uniform(0.0, 1.0, size=len(extent)) * np.asarray(extent)
        if all(np.linalg.norm(p - q) >= sep for q in pts):
            pts.append(p)
            continue
        budget[0] += 1
        if budget[0] >= MAX_REJECTIONS:
            raise InfeasibleScenarioError(
                f"could not place {n} agents {sep} m apart in workspace {tuple(extent)}"
            )
    return np.array(pts)


def generate_scenario(cfg: ScenarioConfig):
    """Random initial and goal states, deterministic in ``cfg.seed``.

    Positions are rejection-sampled uniformly in the workspace with pairwise
    separation ``max(2 d_prox, min_separation)``; agents start at rest.
    Unicycles start with a random heading and their goal heading points from
    start to goal.
    """
    model = make_model(cfg.model)
    if cfg.x0 is not None and cfg.goals is not None:
        x0 = np.concatenate([np.asarray(x, float) for x in cfg.x0])
        goals = np.concatenate([np.asarray(x, float) for x in cfg.goals])
        if x0.shape != (cfg.n_agents * model.n_x,) or goals.shape != x0.shape:
            raise ConfigurationError("explicit x0/goals do not match n_agents and model")
        return x0, goals
    rng = np.random.default_rng(cfg.seed)
    rejected = [0]
    starts = _sample_points(rng, cfg.n_agents, cfg.extent, cfg.separation, rejected)
    ends = _sample_points(rng, cfg.n_agents, cfg.extent, cfg.separation, rejected)
    x0 = np.zeros((cfg.n_agents, model.n_x))
    goals = np.zeros((cfg.n_agents, model.n_x))
    pos = list(model.pos_idx)
    x0[:, pos] = starts
    goals[:, pos] = ends
    if cfg.model == "unicycle":
        x0[:, 2] = rng.uniform(-np.pi, np.pi, size=cfg.n_agents)
        delta = ends - starts
        goals[:, 2] = np.arctan2(delta[:, 1], delta[:, 0])
    return x0.ravel(), goals.ravel()


def build_problem(cfg: ScenarioConfig, goals) -> Problem:
    model = make_model(cfg.model)
    goals = np.asarray(goals, float).reshape(cfg.n_agents, model.n_x)
    c = cfg.costs
    tracking = tuple(
        default_tracking(model, g, c.q_position, c.q_other, c.r, c.qf_scale) for g in goals
    )
    models = tuple(model.with_id(i) for i in range(cfg.n_agents))
    return Problem(models, tracking, ProximityCost(c.beta, cfg.d_prox), cfg.dt, cfg.horizon, cfg.goal_tolerance)


def planner_config(cfg: ScenarioConfig, jobs: int = 1) -> PlannerConfig:
    return PlannerConfig(cfg.alpha, cfg.solver, cfg.budget, cfg.budget_scope, jobs, cfg.warm_start)


@dataclass
class MetricsRecord:
    seed: int
    n_agents: int
    model: str
    planner: str
    steps: int = 0
    status: str = ""
    solve_times: list = field(default_factory=list)  # per step; per agent in distributed mode
    mean_solve_time: float = float("nan")
    graph_time: float = 0.0
    final_distances: list = field(default_factory=list)
    mean_final_distance: float = float("nan")
    min_distance: float = float("nan")
    iterations: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    collision: bool = False
    reached: bool = False
    failures: int = 0
    error: Optional[str] = None

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def record_from_trace(cfg: ScenarioConfig, planner: str, problem: Problem, trace: SimulationTrace) -> MetricsRecord:
    times = trace.solve_times
    flat = [t for step in times for t in step]
    final = problem.goal_distances(trace.states[-1])
    dmin = min_pairwise_distance(problem, trace.states)
    return MetricsRecord(
        seed=cfg.seed,
        n_agents=cfg.n_agents,
        model=cfg.model,
        planner=planner,
        steps=trace.n_steps,
        status=trace.status,
        solve_times=times,
        mean_solve_time=float(np.mean(flat)) if flat else 0.0,
        graph_time=float(sum(trace.graph_times)),
        final_distances=final.tolist(),
        mean_final_distance=float(final.mean()),
        min_distance=dmin,
        iterations=trace.iterations,
        converged=trace.converged,
        collision=bool(dmin < cfg.collision_fraction * cfg.d_prox),
        reached=bool(np.all(final < cfg.goal_tolerance)),
        failures=trace.failures,
    )


def run_single(cfg: ScenarioConfig, planner: str, jobs: int = 1):
    """Run one receding-horizon episode; returns ``(record, trace, problem)``."""
    x0, goals = generate_scenario(cfg)
    problem = build_problem(cfg, goals)
    trace = run_receding_horizon(problem, x0, planner, cfg.n_steps, planner_config(cfg, jobs))
    return record_from_trace(cfg, planner, problem, trace), trace, problem


def trajectory_rows(problem: Problem, trace: SimulationTrace):
    """Tidy rows ``time, agent, x0.., u0..``; the last state has empty controls."""
    dyn = problem.dynamics
    nx = max(m.n_x for m in problem.models)
    nu = max(m.n_u for m in problem.models)
    header = ["time", "agent"] + [f"x{c}" for c in range(nx)] + [f"u{c}" for c in range(nu)]
    rows = []
    K = trace.n_steps
    for k in range(K + 1):
        for a in range(problem.n_agents):
            xs = trace.states[k, dyn.state_slice(a)]
            us = trace.controls[k, dyn.control_slice(a)] if k < K else []
            row = [_fmt(k * problem.dt), str(a)]
            row += [_fmt(v) for v in xs] + [""] * (nx - len(xs))
            row += [_fmt(v) for v in us] + [""] * (nu - len(us))
            rows.append(row)
    return header, rows


def _fmt(v) -> str:
    return repr(float(v))


def write_trajectory(path, problem: Problem, trace: SimulationTrace):
    header, rows = trajectory_rows(problem, trace)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_name(cfg: ScenarioConfig, planner: str) -> str:
    return f"seed{cfg.seed}_n{cfg.n_agents}_{cfg.model}_{planner}"


def _campaign_task(args):
    cfg, planner, traj_dir = args
    try:
        record, trace, problem = run_single(cfg, planner)
    except DpilqrError as exc:
        log.warning("run %s failed: %s", run_name(cfg, planner), exc)
        return MetricsRecord(cfg.seed, cfg.n_agents, cfg.model, planner, error=str(exc))
    if traj_dir is not None:
        write_trajectory(os.path.join(traj_dir, run_name(cfg, planner) + ".csv"), problem, trace)
    return record


def run_campaign(configs: Sequence[ScenarioConfig], planners: Iterable[str] = PLANNER_KINDS,
                 jobs: int = 1, out_dir: Optional[str] = None) -> List[MetricsRecord]:
    """Evaluate every scenario under every planner (paired design).

    Records come back ordered by ``(seed, n_agents, model, planner)``. With
    ``out_dir`` each run's trajectory is written to ``out_dir/trajectories``.
    """
    planners = tuple(planners)
    for p in planners:
        if p not in PLANNER_KINDS:
            raise ConfigurationError(f"unknown planner {p!r}")
    traj_dir = None
    if out_dir is not None:
        traj_dir = os.path.join(out_dir, "trajectories")
        os.makedirs(traj_dir, exist_ok=True)
    tasks = sorted(((cfg, p, traj_dir) for cfg in configs for p in planners),
                   key=lambda t: (t[0].seed, t[0].n_agents, t[0].model, t[1]))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_campaign_task, tasks))
    return [_campaign_task(t) for t in tasks]


SUMMARY_FIELDS = ("n_agents", "model", "planner", "runs", "errors", "mean_solve_time", "std_solve_time",
                  "q50_solve_time", "q90_solve_time", "mean_distance_left", "std_distance_left",
                  "var_distance_left", "q50_distance_left", "q90_distance_left", "collision_rate",
                  "reached_rate")


def summarize(records: Sequence[MetricsRecord]) -> List[dict]:
    """Aggregate statistics per ``(n_agents, model, planner)``."""
    groups = {}
    for r in records:
        groups.setdefault((r.n_agents, r.model, r.planner), []).append(r)
    rows = []
    for (n, model, planner), rs in sorted(groups.items()):
        ok = [r for r in rs if r.error is None]
        times = np.array([r.mean_solve_time for r in ok]) if ok else np.array([np.nan])
        dist = np.array([r.mean_final_distance for r in ok]) if ok else np.array([np.nan])
        rows.append({
            "n_agents": n,
            "model": model,
            "planner": planner,
            "runs": len(rs),
            "errors": len(rs) - len(ok),
            "mean_solve_time": float(np.mean(times)),
            "std_solve_time": float(np.std(times)),
            "q50_solve_time": float(np.quantile(times, 0.5)),
            "q90_solve_time": float(np.quantile(times, 0.9)),
            "mean_distance_left": float(np.mean(dist)),
            "std_distance_left": float(np.std(dist)),
            "var_distance_left": float(np.var(dist)),
            "q50_distance_left": float(np.quantile(dist, 0.5)),
            "q90_distance_left": float(np.quantile(dist, 0.9)),
            "collision_rate": float(np.mean([r.collision for r in ok])) if ok else float("nan"),
            "reached_rate": float(np.mean([r.reached for r in ok])) if ok else float("nan"),
        })
    return rows


def write_campaign(out_dir: str, records: Sequence[MetricsRecord], summary: Sequence[dict]):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "records.jsonl"), "w") as f:
        for r in records:
            f.write(r.to_json() + "\n")
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(summary)


def grid(base: ScenarioConfig, seeds: Iterable[int], n_agents: Iterable[int],
         models: Optional[Iterable[str]] = None) -> List[ScenarioConfig]:
    models = list(models) if models is not None else [base.model]
    return [replace(base, seed=s, n_agents=n, model=m, workspace=base.workspace if m == base.model else None)
            for m in models for n in n_agents for s in seeds]
