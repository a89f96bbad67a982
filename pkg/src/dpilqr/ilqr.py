"""Potential-iLQR: iterative LQR on a potential function.

Each iteration linearizes the joint dynamics and quadraticizes the potential
about the current rollout, runs a regularized Riccati backward pass and
accepts a line-searched closed-loop forward pass.
"""

import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels as K
from .costs import PotentialSpec, ProximityCost, StageQuadratic, TrackingCost, agent_cost, potential_value, quadraticize_all
from .dynamics import AgentModel, JointDynamics, JointTrajectory
from .errors import ConfigurationError, SolverError

ARMIJO = 1e-4


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 50
    convergence_tol: float = 1e-4
    mu_init: float = 1e-6
    mu_growth: float = 10.0
    mu_max: float = 1e6
    line_search_steps: int = 11  # alpha = 1, 1/2, ..., 1/2**10
    time_budget: Optional[float] = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be positive")
        if not self.convergence_tol > 0:
            raise ConfigurationError("convergence_tol must be positive")
        if self.mu_init < 0 or not self.mu_growth > 1 or not self.mu_max > 0:
            raise ConfigurationError("invalid regularization schedule")
        if self.line_search_steps < 1:
            raise ConfigurationError("line_search_steps must be positive")
        if self.time_budget is not None and not self.time_budget > 0:
            raise ConfigurationError("time_budget must be positive")

    @property
    def alphas(self) -> np.ndarray:
        return 0.5 ** np.arange(self.line_search_steps)


@dataclass
class SolveReport:
    controls: np.ndarray
    trajectory: JointTrajectory
    cost: float
    iterations: int
    converged: bool
    wall_time: float
    cost_history: list = field(default_factory=list)
    failed: bool = False
    message: str = ""


class BackwardPass(NamedTuple):
    k: np.ndarray  # feedforward, (T, m)
    K: np.ndarray  # feedback, (T, m, n)
    dV1: float
    dV2: float

    def expected_change(self, alpha: float) -> float:
        return alpha * self.dV1 + alpha * alpha * self.dV2


class BackwardPassFailure(SolverError):
    def __init__(self, stage: int, mu: float):
        super().__init__(f"Q_uu + mu*I not positive definite at stage {stage} (mu={mu:.3g})")
        self.stage = stage


def backward_pass(A, B, quad: StageQuadratic, mu: float) -> BackwardPass:
    """Riccati recursion from the terminal stage down to stage 0.

    Raises :class:`BackwardPassFailure` if the regularized control Hessian is
    not positive definite at some stage.
    """
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    T, n, m = B.shape
    kff = np.zeros((T, m))
    Kfb = np.zeros((T, m, n))
    ok, stage, dV1, dV2 = K.riccati(
        A, B,
        np.ascontiguousarray(quad.l_x, dtype=float), np.ascontiguousarray(quad.l_u, dtype=float),
        np.ascontiguousarray(quad.l_xx, dtype=float), np.ascontiguousarray(quad.l_uu, dtype=float),
        np.ascontiguousarray(quad.l_ux, dtype=float), float(mu), kff, Kfb,
    )
    if not ok:
        raise BackwardPassFailure(stage, mu)
    return BackwardPass(kff, Kfb, dV1, dV2)


def _first_nonfinite(traj: JointTrajectory) -> Optional[int]:
    bad = ~np.isfinite(traj.states).all(axis=1)
    return int(np.argmax(bad)) if bad.any() else None


def solve(spec: PotentialSpec, x0, dt: float, horizon: Optional[int] = None, U_init=None,
          options: Optional[SolverOptions] = None) -> SolveReport:
    """Minimize the potential ``spec`` from ``x0``.

    ``U_init`` defaults to zeros of length ``horizon``. With a time budget the
    best iterate found when the budget runs out is returned with
    ``converged=False``; the budget is checked once per iteration.
    """
    opts = options or SolverOptions()
    start = time.perf_counter()
    dyn: JointDynamics = spec.dynamics
    if U_init is None:
        if horizon is None:
            raise ConfigurationError("either horizon or U_init is required")
        U_init = np.zeros((horizon, dyn.m))
    x0, U_init = dyn.check(x0, U_init)

    traj = dyn.rollout(x0, U_init, dt)
    bad = _first_nonfinite(traj)
    if bad is not None:
        raise SolverError(f"initial rollout is not finite at stage {bad}")
    cost = potential_value(spec, traj)
    if not np.isfinite(cost):
        raise SolverError("initial potential is not finite")

    history = [cost]
    mu = opts.mu_init
    converged = False
    message = "iteration limit"
    iterations = 0
    for _ in range(opts.max_iterations):
        if opts.time_budget is not None and time.perf_counter() - start >= opts.time_budget:
            message = "time budget"
            break
        iterations += 1
        A, B = dyn.linearize(traj, dt)
        quad = quadraticize_all(spec, traj)
        try:
            bp = backward_pass(A, B, quad, mu)
        except BackwardPassFailure as exc:
            mu = max(mu * opts.mu_growth, opts.mu_init, 1e-8)
            if mu > opts.mu_max:
                raise SolverError(f"backward pass failed at maximum regularization: {exc}") from exc
            continue

        predicted = -bp.expected_change(1.0)
        if predicted <= opts.convergence_tol * abs(cost) or predicted <= 1e-14:
            converged = True
            message = "predicted decrease below tolerance"
            break

        accepted = None
        for alpha in opts.alphas:
            trial = dyn.forward(x0, traj, bp.k, bp.K, alpha, dt)
            if _first_nonfinite(trial) is not None:
                continue
            trial_cost = potential_value(spec, trial)
            expected = -bp.expected_change(alpha)
            if np.isfinite(trial_cost) and cost - trial_cost >= ARMIJO * expected:
                accepted = (trial, trial_cost)
                break

        if accepted is None:
            mu = max(mu * opts.mu_growth, opts.mu_init, 1e-8)
            if mu > opts.mu_max:
                message = "line search failed at maximum regularization"
                break
            continue

        trial, trial_cost = accepted
        rel = (cost - trial_cost) / max(abs(cost), 1e-300)
        traj, cost = trial, trial_cost
        history.append(cost)
        mu = mu / 2.0
        if rel < opts.convergence_tol:
            converged = True
            message = "relative decrease below tolerance"
            break

    return SolveReport(
        controls=traj.controls,
        trajectory=traj,
        cost=cost,
        iterations=iterations,
        converged=converged,
        wall_time=time.perf_counter() - start,
        cost_history=history,
        message=message,
    )


def nash_stationarity_check(models: Sequence[AgentModel], tracking: Sequence[TrackingCost],
                            proximity: Optional[ProximityCost], x0, U_star, dt: float,
                            eps: float = 1e-4, n_directions: int = 32, seed: int = 0) -> float:
    """Most negative unilateral first-order cost change, divided by ``eps``.

    For each agent, random perturbations of norm ``eps`` are applied to that
    agent's controls only and the change in its own cost is measured. Values
    not below ``-c * eps`` indicate an approximate open-loop Nash equilibrium.
    """
    dyn = JointDynamics(tuple(models))
    U_star = np.asarray(U_star, dtype=float)
    rng = np.random.default_rng(seed)
    base_traj = dyn.rollout(x0, U_star, dt)
    worst = np.inf
    for i in range(len(models)):
        us = dyn.control_slice(i)
        base = agent_cost(i, models, tracking, proximity, base_traj)
        for _ in range(n_directions):
            delta = rng.standard_normal((U_star.shape[0], us.stop - us.start))
            delta *= eps / np.linalg.norm(delta)
            U = U_star.copy()
            U[:, us] += delta
            traj = dyn.rollout(x0, U, dt)
            change = agent_cost(i, models, tracking, proximity, traj) - base
            worst = min(worst, change / eps)
    return float(worst)
