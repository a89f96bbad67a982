"""Distributed Potential-iLQR: multi-agent trajectory planning by distributed
minimization of a potential function."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .costs import (PotentialSpec, ProximityCost, TrackingCost, agent_cost, centralized_potential,
                    default_tracking, local_potential, potential_value)
from .dynamics import (AgentModel, JointDynamics, JointTrajectory, double_integrator_2d, make_model,
                       quadcopter_6d, rollout, unicycle_2d)
from .errors import ConfigurationError, DpilqrError, InfeasibleScenarioError, SolverError
from .graph import InteractionGraph, build_graph, subproblem_agents
from .ilqr import SolveReport, SolverOptions, nash_stationarity_check, solve
from .planner import PlannerConfig, Problem, centralized_step, dp_ilqr_step, run_receding_horizon
from .sim import CostConfig, MetricsRecord, ScenarioConfig, generate_scenario, run_campaign, run_single
