"""Receding-horizon planners: distributed (DP-iLQR) and centralized Potential-iLQR.

In the distributed planner every agent keeps its own prediction of the joint
trajectory. Each step it builds an interaction graph from that prediction,
solves the local potential over itself and its neighbours, executes only its
own first control and publishes its own plan. Predictions for agents outside
the neighbourhood come from those agents' published plans.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import List, Optional

import numpy as np

from .costs import PotentialSpec, ProximityCost, centralized_potential, local_potential
from .dynamics import JointDynamics, JointTrajectory, reference_control
from .errors import ConfigurationError, DpilqrError
from .graph import build_graph
from .ilqr import SolveReport, SolverOptions, solve

BUDGET_SCOPES = ("per-agent", "global")
PLANNER_KINDS = ("distributed", "centralized")
# "plans": every member starts from its own published plan;
# "own": the owner's previous copy, reference controls for newly joined members
WARM_STARTS = ("plans", "own")


@dataclass(frozen=True, eq=False)
class Problem:
    """A multi-agent navigation game: models, tracking costs and the shared proximity penalty."""

    models: tuple
    tracking: tuple
    proximity: ProximityCost
    dt: float = 0.1
    horizon: int = 40
    goal_tolerance: float = 0.1

    def __post_init__(self):
        if len(self.models) != len(self.tracking) or not self.models:
            raise ConfigurationError("need one tracking cost per agent")
        if not self.dt > 0 or self.horizon < 1:
            raise ConfigurationError("dt must be positive and horizon at least 1")

    @property
    def n_agents(self) -> int:
        return len(self.models)

    @cached_property
    def dynamics(self) -> JointDynamics:
        return JointDynamics(tuple(self.models))

    @cached_property
    def _local_specs(self) -> dict:
        return {}

    def local_spec(self, owner: int, neighbors) -> PotentialSpec:
        key = (owner, frozenset(neighbors))
        spec = self._local_specs.get(key)
        if spec is None:
            spec = local_potential(owner, neighbors, self.models, self.tracking, self.proximity)
            self._local_specs[key] = spec
        return spec

    @cached_property
    def central_spec(self) -> PotentialSpec:
        return centralized_potential(self.models, self.tracking, self.proximity)

    def goal_distances(self, x) -> np.ndarray:
        dyn = self.dynamics
        out = np.empty(self.n_agents)
        for a, (mdl, tc) in enumerate(zip(self.models, self.tracking)):
            xa = np.asarray(x)[dyn.state_slice(a)]
            out[a] = np.linalg.norm(mdl.position_of(xa) - mdl.position_of(tc.x_goal))
        return out

    def reference_controls(self) -> np.ndarray:
        return np.concatenate([reference_control(mdl) for mdl in self.models])


@dataclass(frozen=True)
class PlannerConfig:
    alpha: float = 1.5
    options: SolverOptions = field(default_factory=SolverOptions)
    budget: Optional[float] = None
    budget_scope: str = "per-agent"
    jobs: int = 1
    warm_start: str = "plans"

    def __post_init__(self):
        if self.alpha < 1:
            raise ConfigurationError(f"alpha must be >= 1, got {self.alpha}")
        if self.budget_scope not in BUDGET_SCOPES:
            raise ConfigurationError(f"budget_scope must be one of {BUDGET_SCOPES}")
        if self.budget is not None and not self.budget > 0:
            raise ConfigurationError("budget must be positive")
        if self.warm_start not in WARM_STARTS:
            raise ConfigurationError(f"warm_start must be one of {WARM_STARTS}")

    def solver_options(self, n_solves: int) -> SolverOptions:
        if self.budget is None:
            return self.options
        budget = self.budget if self.budget_scope == "per-agent" else self.budget / n_solves
        return replace(self.options, time_budget=budget)


@dataclass
class PlannerState:
    current_state: np.ndarray
    predictions: list  # per agent (distributed) or a single entry (centralized)
    plans: list  # each agent's own published controls, (T, m_i)
    members: list  # previous subproblem membership per agent
    applied_controls: list = field(default_factory=list)


def _shift(U):
    return np.concatenate([U[1:], U[-1:]], axis=0)


def initial_state(problem: Problem, x0, distributed: bool = True) -> PlannerState:
    """Bootstrap predictions: every agent holds its reference control over the horizon."""
    dyn = problem.dynamics
    U = np.tile(problem.reference_controls(), (problem.horizon, 1))
    traj = dyn.rollout(x0, U, problem.dt)
    n_pred = problem.n_agents if distributed else 1
    return PlannerState(
        current_state=np.array(x0, dtype=float),
        predictions=[traj] * n_pred,
        plans=[U[:, dyn.control_slice(a)].copy() for a in range(problem.n_agents)],
        members=[(a,) for a in range(problem.n_agents)],
    )


@dataclass
class StepInfo:
    reports: list
    solve_times: list
    graph_time: float
    neighborhoods: list
    edges: int


def _solve_local(i, state: PlannerState, problem: Problem, config: PlannerConfig, opts: SolverOptions):
    dyn = problem.dynamics
    t0 = time.perf_counter()
    graph = build_graph(state.predictions[i].states, problem.models, problem.proximity.d_prox, config.alpha)
    graph_time = time.perf_counter() - t0
    nbrs = graph.neighbors(i)
    spec = problem.local_spec(i, nbrs)
    members = spec.agents
    blocks = []
    if config.warm_start == "plans":
        blocks = [state.plans[j] for j in members]
    else:
        prev = set(state.members[i])
        pred_U = state.predictions[i].controls
        for j in members:
            if j in prev:
                blocks.append(pred_U[:, dyn.control_slice(j)])
            else:
                blocks.append(np.tile(reference_control(problem.models[j]), (problem.horizon, 1)))
    U_init = np.concatenate(blocks, axis=1)
    x0_local = np.concatenate([state.current_state[dyn.state_slice(j)] for j in members])
    t0 = time.perf_counter()
    try:
        report = solve(spec, x0_local, problem.dt, U_init=U_init, options=opts)
    except DpilqrError as exc:
        report = SolveReport(U_init, JointTrajectory(np.empty((0, 0)), U_init), float("nan"), 0,
                             False, 0.0, failed=True, message=str(exc))
    solve_time = time.perf_counter() - t0
    return members, nbrs, report, solve_time, graph_time


def dp_ilqr_step(state: PlannerState, problem: Problem, config: PlannerConfig):
    """One distributed step. Returns ``(u, new_state, info)`` with ``u`` the executed joint control."""
    dyn = problem.dynamics
    N = problem.n_agents
    opts = config.solver_options(N)

    def work(i):
        return _solve_local(i, state, problem, config, opts)

    if config.jobs > 1 and N > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(work, range(N)))
    else:
        results = [work(i) for i in range(N)]

    u = np.empty(dyn.m)
    local_plans = []
    for i, (members, _, report, _, _) in enumerate(results):
        local = problem.local_spec(i, results[i][1]).dynamics
        own = local.control_slice(members.index(i))
        U_local = report.controls
        u[dyn.control_slice(i)] = U_local[0, own]
        local_plans.append((members, local, U_local))

    x_next = _advance(problem, state.current_state, u)
    plans = [_shift(U_local[:, local.control_slice(members.index(i))])
             for i, (members, local, U_local) in enumerate(local_plans)]
    bulletin = np.concatenate(plans, axis=1)
    predictions = []
    for i, (members, local, U_local) in enumerate(local_plans):
        U_pred = bulletin.copy()
        shifted = _shift(U_local)
        for b, j in enumerate(members):
            U_pred[:, dyn.control_slice(j)] = shifted[:, local.control_slice(b)]
        predictions.append(dyn.rollout(x_next, U_pred, problem.dt))

    new_state = PlannerState(
        current_state=x_next,
        predictions=predictions,
        plans=plans,
        members=[r[0] for r in results],
        applied_controls=state.applied_controls + [u],
    )
    edges = {(min(i, j), max(i, j)) for i, r in enumerate(results) for j in r[1]}
    info = StepInfo(
        reports=[r[2] for r in results],
        solve_times=[r[3] for r in results],
        graph_time=sum(r[4] for r in results),
        neighborhoods=[r[1] for r in results],
        edges=len(edges),
    )
    return u, new_state, info


def centralized_step(state: PlannerState, problem: Problem, config: PlannerConfig):
    """One step of Potential-iLQR over all agents, warm-started from the shifted previous plan."""
    dyn = problem.dynamics
    spec = problem.central_spec
    opts = config.solver_options(1)
    U_init = state.predictions[0].controls
    t0 = time.perf_counter()
    try:
        report = solve(spec, state.current_state, problem.dt, U_init=U_init, options=opts)
    except DpilqrError as exc:
        report = SolveReport(U_init, state.predictions[0], float("nan"), 0, False, 0.0,
                             failed=True, message=str(exc))
    solve_time = time.perf_counter() - t0
    u = report.controls[0].copy()
    x_next = _advance(problem, state.current_state, u)
    U_next = _shift(report.controls)
    pred = dyn.rollout(x_next, U_next, problem.dt)
    new_state = PlannerState(
        current_state=x_next,
        predictions=[pred],
        plans=[U_next[:, dyn.control_slice(a)] for a in range(problem.n_agents)],
        members=[tuple(range(problem.n_agents))] * problem.n_agents,
        applied_controls=state.applied_controls + [u],
    )
    N = problem.n_agents
    info = StepInfo([report], [solve_time], 0.0, [frozenset(set(range(N)) - {i}) for i in range(N)],
                    N * (N - 1) // 2)
    return u, new_state, info


def _advance(problem: Problem, x, u) -> np.ndarray:
    traj = problem.dynamics.rollout(x, u[None, :], problem.dt)
    return traj.states[1]


@dataclass
class SimulationTrace:
    states: np.ndarray  # (K + 1, n)
    controls: np.ndarray  # (K, m)
    solve_times: list  # per step: list of per-solve wall times
    graph_times: list
    min_distances: list  # per step, over the state before the step
    costs: list
    edges: list
    iterations: list
    converged: list
    failures: int
    status: str  # "goal", "steps" or "diverged"

    @property
    def n_steps(self) -> int:
        return self.controls.shape[0]


def min_pairwise_distance(problem: Problem, X) -> float:
    X = np.atleast_2d(X)
    if problem.n_agents < 2:
        return float("inf")
    P = problem.dynamics.positions(X)
    diff = P[:, :, None, :] - P[:, None, :, :]
    D = np.sqrt(np.sum(diff * diff, axis=-1))
    iu = np.triu_indices(problem.n_agents, k=1)
    return float(D[:, iu[0], iu[1]].min())


def run_receding_horizon(problem: Problem, x0, kind: str = "distributed", n_steps: int = 100,
                         config: Optional[PlannerConfig] = None,
                         divergence_bound: float = 1e4) -> SimulationTrace:
    """Apply the chosen planner step by step until every agent is within the goal
    tolerance, ``n_steps`` have elapsed, or the state diverges."""
    if kind not in PLANNER_KINDS:
        raise ConfigurationError(f"planner must be one of {PLANNER_KINDS}, got {kind!r}")
    if n_steps < 1:
        raise ConfigurationError("n_steps must be at least 1")
    config = config or PlannerConfig()
    distributed = kind == "distributed"
    step = dp_ilqr_step if distributed else centralized_step
    state = initial_state(problem, x0, distributed)
    states = [state.current_state]
    controls: List[np.ndarray] = []
    rec = {k: [] for k in ("solve_times", "graph_times", "min_distances", "costs", "edges",
                           "iterations", "converged")}
    failures = 0
    status = "steps"
    for _ in range(n_steps):
        if np.all(problem.goal_distances(state.current_state) < problem.goal_tolerance):
            status = "goal"
            break
        u, state, info = step(state, problem, config)
        x = state.current_state
        controls.append(u)
        states.append(x)
        rec["solve_times"].append(info.solve_times)
        rec["graph_times"].append(info.graph_time)
        rec["min_distances"].append(min_pairwise_distance(problem, states[-2]))
        rec["costs"].append([r.cost for r in info.reports])
        rec["edges"].append(info.edges)
        rec["iterations"].append([r.iterations for r in info.reports])
        rec["converged"].append([r.converged for r in info.reports])
        failures += sum(r.failed for r in info.reports)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > divergence_bound:
            status = "diverged"
            break
    else:
        if np.all(problem.goal_distances(state.current_state) < problem.goal_tolerance):
            status = "goal"

    m = problem.dynamics.m
    return SimulationTrace(
        states=np.array(states),
        controls=np.array(controls).reshape(-1, m),
        failures=failures,
        status=status,
        **rec,
    )
