"""Scenario files: YAML <-> ScenarioConfig.

A scenario file has up to five top-level sections::

    scenario:  problem geometry and simulation length
    costs:     tracking weights and the proximity penalty
    solver:    iLQR options
    planner:   planner kind, alpha, real-time budget, threads
    campaign:  optional grid (seeds, n_agents, models, planners)
    meta:      written into manifests; ignored on load

Unknown keys anywhere outside ``meta`` are errors.
"""

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import yaml

from .errors import ConfigurationError
from .ilqr import SolverOptions
from .planner import PLANNER_KINDS
from .sim import CostConfig, ScenarioConfig

SCENARIO_KEYS = ("n_agents", "model", "dt", "horizon", "d_prox", "seed", "workspace", "min_separation",
                 "n_steps", "goal_tolerance", "collision_fraction", "x0", "goals")
PLANNER_KEYS = ("kind", "alpha", "budget", "budget_scope", "warm_start", "jobs")
SOLVER_KEYS = tuple(f.name for f in fields(SolverOptions) if f.name != "time_budget")
COST_KEYS = tuple(f.name for f in fields(CostConfig))
CAMPAIGN_KEYS = ("seeds", "n_agents", "models", "planners")
SECTIONS = ("scenario", "costs", "solver", "planner", "campaign", "meta")

PLANNER_ALIASES = {"central": "centralized", "centralized": "centralized", "distributed": "distributed"}


def planner_kind(name: str) -> str:
    try:
        return PLANNER_ALIASES[name]
    except KeyError:
        raise ConfigurationError(f"unknown planner {name!r}; use one of {sorted(PLANNER_ALIASES)}") from None


@dataclass(frozen=True)
class Campaign:
    seeds: tuple = tuple(range(30))
    n_agents: tuple = (3, 4, 5, 6, 7, 8, 9, 10)
    models: Optional[tuple] = None  # None: the scenario's model
    planners: tuple = PLANNER_KINDS


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    planner: str = "distributed"
    jobs: int = 1
    campaign: Optional[Campaign] = None

    def __post_init__(self):
        object.__setattr__(self, "planner", planner_kind(self.planner))
        if self.jobs < 1:
            raise ConfigurationError("jobs must be at least 1")


def _section(doc, name, allowed, where):
    sec = doc.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigurationError(f"{where}: section '{name}' must be a mapping")
    for key in sec:
        if key not in allowed:
            raise ConfigurationError(f"{where}: unknown key '{name}.{key}'")
    return sec


def _tuple_or_none(v, depth=1):
    if v is None:
        return None
    if depth == 1:
        return tuple(v)
    return tuple(tuple(float(c) for c in row) for row in v)


def from_dict(doc, where: str = "<config>") -> RunConfig:
    """Build a :class:`RunConfig` from a parsed document; missing keys take defaults."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{where}: top level must be a mapping")
    for key in doc:
        if key not in SECTIONS:
            raise ConfigurationError(f"{where}: unknown key '{key}'")
    sc = dict(_section(doc, "scenario", SCENARIO_KEYS, where))
    costs = _section(doc, "costs", COST_KEYS, where)
    solver = _section(doc, "solver", SOLVER_KEYS, where)
    pl = dict(_section(doc, "planner", PLANNER_KEYS, where))
    camp = doc.get("campaign")
    try:
        if "workspace" in sc:
            sc["workspace"] = _tuple_or_none(sc["workspace"])
        for key in ("x0", "goals"):
            if key in sc:
                sc[key] = _tuple_or_none(sc[key], depth=2)
        kind = pl.pop("kind", "distributed")
        jobs = pl.pop("jobs", 1)
        scenario = ScenarioConfig(**sc, **pl, costs=CostConfig(**costs), solver=SolverOptions(**solver))
        campaign = None
        if camp is not None:
            camp = _section(doc, "campaign", CAMPAIGN_KEYS, where)
            c = {k: tuple(v) for k, v in camp.items() if v is not None}
            if "planners" in c:
                c["planners"] = tuple(planner_kind(p) for p in c["planners"])
            campaign = Campaign(**c)
        return RunConfig(scenario, kind, jobs, campaign)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None
    except ConfigurationError as exc:
        if str(exc).startswith(where):
            raise
        raise ConfigurationError(f"{where}: {exc}") from None


def loads(text: str, where: str = "<string>") -> RunConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}:{mark.column + 1}" if mark is not None else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigurationError(f"{where}{line}: {problem}") from None
    return from_dict(doc, where)


def load(path) -> RunConfig:
    with open(path) as f:
        return loads(f.read(), str(path))


def to_dict(run: RunConfig, meta: Optional[dict] = None) -> dict:
    """Fully resolved document; ``load(dump(run))`` reproduces ``run``."""
    s = run.scenario
    sc = {k: getattr(s, k) for k in SCENARIO_KEYS}
    sc["workspace"] = list(s.extent)
    for key in ("x0", "goals"):
        if sc[key] is not None:
            sc[key] = [list(map(float, row)) for row in sc[key]]
    doc = {
        "scenario": sc,
        "costs": asdict(s.costs),
        "solver": {k: getattr(s.solver, k) for k in SOLVER_KEYS},
        "planner": {"kind": run.planner, "alpha": s.alpha, "budget": s.budget, "budget_scope": s.budget_scope,
                    "warm_start": s.warm_start, "jobs": run.jobs},
    }
    if run.campaign is not None:
        c = run.campaign
        doc["campaign"] = {"seeds": list(c.seeds), "n_agents": list(c.n_agents),
                           "models": list(c.models) if c.models is not None else None,
                           "planners": list(c.planners)}
    if meta:
        doc["meta"] = dict(meta)
    return doc


def dumps(run: RunConfig, meta: Optional[dict] = None) -> str:
    return yaml.safe_dump(to_dict(run, meta), sort_keys=False, default_flow_style=None)


def override(run: RunConfig, *, planner=None, alpha=None, budget=None, budget_scope=None,
             seed=None, jobs=None) -> RunConfig:
    """Apply command-line overrides; ``None`` leaves a field unchanged."""
    s = run.scenario
    changes = {k: v for k, v in dict(alpha=alpha, budget=budget, budget_scope=budget_scope, seed=seed).items()
               if v is not None}
    if changes:
        s = replace(s, **changes)
    return replace(run, scenario=s,
                   planner=planner if planner is not None else run.planner,
                   jobs=jobs if jobs is not None else run.jobs)
