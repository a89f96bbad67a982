"""Tracking and pairwise proximity costs, and potentials built from them.

A potential sums every participating agent's tracking cost with one
proximity penalty per listed pair. The centralized potential lists every
unordered pair; an agent's local potential lists only the pairs between the
agent and its neighbours.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels as K
from .dynamics import AgentModel, JointDynamics, JointTrajectory, position_index, reference_control
from .errors import ConfigurationError

_PSD_TOL = 1e-10


def _check_symmetric(name, M, strict):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, atol=_PSD_TOL, rtol=0):
        raise ConfigurationError(f"{name} must be symmetric")
    low = np.linalg.eigvalsh(M).min()
    if strict and not low > _PSD_TOL:
        raise ConfigurationError(f"{name} must be positive definite (min eigenvalue {low:.3g})")
    if not strict and low < -_PSD_TOL:
        raise ConfigurationError(f"{name} must be positive semidefinite (min eigenvalue {low:.3g})")


@dataclass(frozen=True, eq=False)
class TrackingCost:
    Q: np.ndarray
    R: np.ndarray
    Q_f: np.ndarray
    x_goal: np.ndarray
    u_ref: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R", "Q_f", "x_goal", "u_ref"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        _check_symmetric("Q", self.Q, strict=False)
        _check_symmetric("Q_f", self.Q_f, strict=False)
        _check_symmetric("R", self.R, strict=True)
        n, m = self.Q.shape[0], self.R.shape[0]
        if self.Q_f.shape != (n, n) or self.x_goal.shape != (n,) or self.u_ref.shape != (m,):
            raise ConfigurationError("tracking cost dimensions are inconsistent")


@dataclass(frozen=True)
class ProximityCost:
    beta: float
    d_prox: float

    def __post_init__(self):
        if not self.beta > 0 or not self.d_prox > 0:
            raise ConfigurationError("beta and d_prox must be positive")


def default_tracking(model: AgentModel, x_goal, q_position=1.0, q_other=0.1,
                     r=0.1, qf_scale=100.0, u_ref=None) -> TrackingCost:
    """Diagonal weights: ``q_position`` on position coordinates, ``q_other`` elsewhere."""
    q = np.full(model.n_x, q_other, dtype=float)
    q[list(model.pos_idx)] = q_position
    Q = np.diag(q)
    u_ref = reference_control(model) if u_ref is None else u_ref
    return TrackingCost(Q, r * np.eye(model.n_u), qf_scale * Q, np.asarray(x_goal, float), u_ref)


def tracking_cost(tc: TrackingCost, x, u=None, terminal: bool = False) -> float:
    dx = np.asarray(x, float) - tc.x_goal
    if terminal:
        return float(dx @ tc.Q_f @ dx)
    du = np.asarray(u, float) - tc.u_ref
    return float(dx @ tc.Q @ dx + du @ tc.R @ du)


def _direction(r):
    d = np.linalg.norm(r)
    if d > 0:
        return d, r / d
    e = np.zeros_like(r)
    e[0] = 1.0
    return d, e


def proximity_cost(pc: ProximityCost, p_i, p_j) -> float:
    d = float(np.linalg.norm(np.asarray(p_i, float) - np.asarray(p_j, float)))
    return pc.beta * (d - pc.d_prox) ** 2 if d < pc.d_prox else 0.0


def proximity_gradient(pc: ProximityCost, p_i, p_j) -> np.ndarray:
    """Gradient in ``p_i``; the gradient in ``p_j`` is its negative.

    Coincident positions use the first coordinate axis as the direction.
    """
    d, nhat = _direction(np.asarray(p_i, float) - np.asarray(p_j, float))
    if not d < pc.d_prox:
        return np.zeros_like(nhat)
    return 2.0 * pc.beta * (d - pc.d_prox) * nhat


def proximity_hessian(pc: ProximityCost, p_i, p_j, project: bool = True) -> np.ndarray:
    """Hessian in ``p_i`` (exact, or projected onto the PSD cone)."""
    d, nhat = _direction(np.asarray(p_i, float) - np.asarray(p_j, float))
    dim = nhat.shape[0]
    if not d < pc.d_prox:
        return np.zeros((dim, dim))
    outer = np.outer(nhat, nhat)
    if project or d == 0:
        return 2.0 * pc.beta * outer
    return 2.0 * pc.beta * (outer + (1.0 - pc.d_prox / d) * (np.eye(dim) - outer))


class StageQuadratic(NamedTuple):
    l_x: np.ndarray
    l_u: np.ndarray
    l_xx: np.ndarray
    l_uu: np.ndarray
    l_ux: np.ndarray


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Potential over the agents ``agents`` (global indices, in local order).

    ``pairs`` holds local index pairs ``(a, b)``, each unordered pair at most
    once.
    """

    agents: tuple
    models: tuple
    tracking: tuple
    proximity: Optional[ProximityCost] = None
    pairs: tuple = ()

    def __post_init__(self):
        if not (len(self.agents) == len(self.models) == len(self.tracking)):
            raise ConfigurationError("agents, models and tracking costs must align")
        seen = set()
        for a, b in self.pairs:
            key = (min(a, b), max(a, b))
            if a == b or key in seen or not (0 <= a < len(self.agents) and 0 <= b < len(self.agents)):
                raise ConfigurationError(f"invalid or repeated pair {(a, b)}")
            seen.add(key)
        if self.pairs and self.proximity is None:
            raise ConfigurationError("pairs given without a proximity cost")
        for mdl, tc in zip(self.models, self.tracking):
            if tc.Q.shape[0] != mdl.n_x or tc.R.shape[0] != mdl.n_u:
                raise ConfigurationError("tracking cost does not match the agent model")

    @cached_property
    def dynamics(self) -> JointDynamics:
        return JointDynamics(tuple(self.models))

    @cached_property
    def blocks(self):
        dyn = self.dynamics
        Q = np.zeros((dyn.n, dyn.n))
        Qf = np.zeros((dyn.n, dyn.n))
        R = np.zeros((dyn.m, dyn.m))
        for a, tc in enumerate(self.tracking):
            xs, us = dyn.state_slice(a), dyn.control_slice(a)
            Q[xs, xs] = tc.Q
            Qf[xs, xs] = tc.Q_f
            R[us, us] = tc.R
        x_goal = np.concatenate([tc.x_goal for tc in self.tracking])
        u_ref = np.concatenate([tc.u_ref for tc in self.tracking])
        return Q, R, Qf, x_goal, u_ref

    @cached_property
    def pair_arrays(self):
        pa = np.array([p[0] for p in self.pairs], dtype=np.int64)
        pb = np.array([p[1] for p in self.pairs], dtype=np.int64)
        pos = position_index(self.models, self.dynamics.xoff)
        return pos, pa, pb

    def local_index(self, agent: int) -> int:
        return self.agents.index(agent)


def centralized_potential(models: Sequence[AgentModel], tracking: Sequence[TrackingCost],
                          proximity: Optional[ProximityCost], agents=None) -> PotentialSpec:
    """Every agent's tracking cost plus one proximity term per unordered pair."""
    agents = tuple(range(len(models))) if agents is None else tuple(agents)
    n = len(agents)
    pairs = tuple((a, b) for a in range(n) for b in range(a + 1, n)) if proximity else ()
    return PotentialSpec(agents, tuple(models), tuple(tracking), proximity, pairs)


def local_potential(owner: int, neighbors, models: Sequence[AgentModel],
                    tracking: Sequence[TrackingCost], proximity: Optional[ProximityCost]) -> PotentialSpec:
    """Tracking over ``{owner} | neighbors`` and proximity only on owner-neighbour pairs.

    ``models`` and ``tracking`` are indexed by global agent index.
    """
    members = tuple(sorted(set(neighbors) | {owner}))
    me = members.index(owner)
    pairs = tuple((me, b) for b, j in enumerate(members) if j != owner) if proximity else ()
    return PotentialSpec(members, tuple(models[j] for j in members),
                         tuple(tracking[j] for j in members), proximity, pairs)


def _tracking_value(spec: PotentialSpec, X, U) -> float:
    Q, R, Qf, x_goal, u_ref = spec.blocks
    dx = X - x_goal
    du = U - u_ref
    run = np.einsum("ki,ij,kj->", dx[:-1], Q, dx[:-1]) + np.einsum("ki,ij,kj->", du, R, du)
    return float(run + dx[-1] @ Qf @ dx[-1])


def _proximity_value(spec: PotentialSpec, X) -> float:
    if not spec.pairs:
        return 0.0
    pos, pa, pb = spec.pair_arrays
    pc = spec.proximity
    return K.proximity_value(np.ascontiguousarray(X[:-1]), pos, pa, pb, pc.beta, pc.d_prox)


def potential_value(spec: PotentialSpec, traj: JointTrajectory) -> float:
    """Running potential over stages ``0..T-1`` plus the terminal tracking cost."""
    X, U = np.asarray(traj.states, float), np.asarray(traj.controls, float)
    return _tracking_value(spec, X, U) + _proximity_value(spec, X)


def quadraticize_all(spec: PotentialSpec, traj: JointTrajectory) -> StageQuadratic:
    """Derivatives of the potential at every stage; index ``T`` is the terminal cost.

    ``l_u``, ``l_uu`` and ``l_ux`` have ``T`` stages, the state terms ``T + 1``.
    """
    Q, R, Qf, x_goal, u_ref = spec.blocks
    X, U = traj.states, traj.controls
    T = U.shape[0]
    dx = X - x_goal
    l_x = 2.0 * dx @ Q
    l_x[T] = 2.0 * Qf @ dx[T]
    l_u = 2.0 * (U - u_ref) @ R
    l_xx = np.empty((T + 1,) + Q.shape)
    l_xx[:T] = 2.0 * Q
    l_xx[T] = 2.0 * Qf
    l_uu = np.broadcast_to(2.0 * R, (T,) + R.shape)
    l_ux = np.zeros((T, R.shape[0], Q.shape[0]))
    if spec.pairs:
        pos, pa, pb = spec.pair_arrays
        pc = spec.proximity
        K.proximity_quadraticize(np.ascontiguousarray(X[:T]), pos, pa, pb, pc.beta, pc.d_prox, l_x, l_xx)
    return StageQuadratic(l_x, l_u, l_xx, np.ascontiguousarray(l_uu), l_ux)


def quadraticize(spec: PotentialSpec, traj: JointTrajectory, k: int) -> StageQuadratic:
    """Stage-``k`` derivatives; ``k == T`` gives the terminal cost with zero control terms."""
    T = traj.horizon
    if not 0 <= k <= T:
        raise ConfigurationError(f"stage {k} outside 0..{T}")
    full = quadraticize_all(spec, traj)
    m = traj.controls.shape[1]
    n = traj.states.shape[1]
    if k == T:
        return StageQuadratic(full.l_x[T], np.zeros(m), full.l_xx[T], np.zeros((m, m)), np.zeros((m, n)))
    return StageQuadratic(full.l_x[k], full.l_u[k], full.l_xx[k], full.l_uu[k], full.l_ux[k])


def agent_cost(i: int, models: Sequence[AgentModel], tracking: Sequence[TrackingCost],
               proximity: Optional[ProximityCost], traj: JointTrajectory) -> float:
    """Individual cost of agent ``i``: its own tracking plus all its collision terms."""
    dyn = JointDynamics(tuple(models))
    X, U = traj.states, traj.controls
    xs, us = dyn.state_slice(i), dyn.control_slice(i)
    tc = tracking[i]
    total = 0.0
    for k in range(U.shape[0]):
        total += tracking_cost(tc, X[k, xs], U[k, us])
    total += tracking_cost(tc, X[-1, xs], terminal=True)
    if proximity is not None:
        P = dyn.positions(X[:-1])
        for j in range(len(models)):
            if j == i:
                continue
            d = np.linalg.norm(P[:, i] - P[:, j], axis=-1)
            inside = d < proximity.d_prox
            total += float(np.sum(proximity.beta * (d[inside] - proximity.d_prox) ** 2))
    return total
