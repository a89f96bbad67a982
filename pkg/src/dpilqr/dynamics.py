"""Separable discrete-time agent models and joint rollouts.

Every agent evolves under its own state and control only. Trajectories are
stored time-major: states ``(T + 1, n)`` and controls ``(T, m)`` where ``n``
and ``m`` are the concatenated dimensions of all agents in agent order.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import ConfigurationError

MODEL_KINDS = {
    "double_integrator": K.DOUBLE_INTEGRATOR,
    "unicycle": K.UNICYCLE,
    "quad6d": K.QUAD6D,
}


@dataclass(frozen=True, eq=False)
class AgentModel:
    """Dynamics of a single agent.

    ``pos_idx`` lists the state coordinates holding the workspace position.
    Control bounds are optional; rollouts clamp controls into them.
    """

    kind: str
    n_x: int
    n_u: int
    pos_idx: tuple
    params: tuple = ()
    u_lower: Optional[np.ndarray] = None
    u_upper: Optional[np.ndarray] = None
    id: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if self.n_x <= 0 or self.n_u <= 0:
            raise ConfigurationError("state and control dimensions must be positive")

    @property
    def code(self) -> int:
        return MODEL_KINDS[self.kind]

    @property
    def pos_dim(self) -> int:
        return len(self.pos_idx)

    @cached_property
    def _params(self) -> np.ndarray:
        return np.array(self.params if self.params else (0.0,), dtype=float)

    @cached_property
    def bounds(self) -> tuple:
        lo = np.full(self.n_u, -np.inf) if self.u_lower is None else np.asarray(self.u_lower, float)
        hi = np.full(self.n_u, np.inf) if self.u_upper is None else np.asarray(self.u_upper, float)
        return lo, hi

    def with_id(self, i: int) -> "AgentModel":
        return replace(self, id=i)

    def clamp(self, u):
        lo, hi = self.bounds
        return np.minimum(np.maximum(np.asarray(u, float), lo), hi)

    def step(self, x, u, dt: float) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=float)
        u = np.ascontiguousarray(u, dtype=float)
        out = np.empty(self.n_x)
        K.agent_step(self.code, x, u, self._params, float(dt), out)
        return out

    def jacobians(self, x, u, dt: float):
        """Return ``(A, B)``, the derivatives of :meth:`step` in state and control."""
        x = np.ascontiguousarray(x, dtype=float)
        u = np.ascontiguousarray(u, dtype=float)
        A = np.empty((self.n_x, self.n_x))
        B = np.empty((self.n_x, self.n_u))
        K.agent_jacobians(self.code, x, u, self._params, float(dt), A, B)
        return A, B

    def position_of(self, x) -> np.ndarray:
        return np.asarray(x)[list(self.pos_idx)]


def double_integrator_2d() -> AgentModel:
    """Planar point mass: state ``(px, py, vx, vy)``, control ``(ax, ay)``."""
    return AgentModel("double_integrator", 4, 2, (0, 1))


def unicycle_2d() -> AgentModel:
    """Planar unicycle: state ``(px, py, theta, v)``, control ``(omega, a)``."""
    return AgentModel("unicycle", 4, 2, (0, 1))


def quadcopter_6d(g: float = 9.81, theta_max: float = 0.3) -> AgentModel:
    """Small-angle quadcopter: state ``(p, v)`` in 3D, control ``(pitch, roll, thrust)``.

    Pitch and roll are clamped to ``theta_max`` to stay clear of the tangent
    singularity at pi/2.
    """
    if not g > 0:
        raise ConfigurationError("gravity must be positive")
    if not 0 < theta_max < np.pi / 2:
        raise ConfigurationError("theta_max must lie in (0, pi/2)")
    lo = np.array([-theta_max, -theta_max, -np.inf])
    hi = np.array([theta_max, theta_max, np.inf])
    return AgentModel("quad6d", 6, 3, (0, 1, 2), params=(float(g),), u_lower=lo, u_upper=hi)


def make_model(kind: str, **kwargs) -> AgentModel:
    builders = {
        "double_integrator": double_integrator_2d,
        "unicycle": unicycle_2d,
        "quad6d": quadcopter_6d,
    }
    try:
        return builders[kind](**kwargs)
    except KeyError:
        raise ConfigurationError(
            f"unknown model {kind!r}; expected one of {sorted(builders)}"
        ) from None


def reference_control(model: AgentModel) -> np.ndarray:
    """Control that holds the model at rest: hover thrust for the quadcopter, zero otherwise."""
    u = np.zeros(model.n_u)
    if model.kind == "quad6d":
        u[2] = model.params[0]
    return u


@dataclass(frozen=True)
class JointTrajectory:
    states: np.ndarray  # (T + 1, n)
    controls: np.ndarray  # (T, m)

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


@dataclass(frozen=True, eq=False)
class JointDynamics:
    """Concatenation of separable agent models, with compiled batch routines."""

    models: tuple
    kinds: np.ndarray = field(init=False, repr=False)
    xoff: np.ndarray = field(init=False, repr=False)
    uoff: np.ndarray = field(init=False, repr=False)
    params: np.ndarray = field(init=False, repr=False)
    ulo: np.ndarray = field(init=False, repr=False)
    uhi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise ConfigurationError("at least one agent is required")
        width = max(len(mdl.params) for mdl in models) or 1
        params = np.zeros((len(models), width))
        for a, mdl in enumerate(models):
            params[a, : len(mdl.params)] = mdl.params
        sets = {
            "models": models,
            "kinds": np.array([mdl.code for mdl in models], dtype=np.int64),
            "xoff": np.concatenate([[0], np.cumsum([mdl.n_x for mdl in models])]).astype(np.int64),
            "uoff": np.concatenate([[0], np.cumsum([mdl.n_u for mdl in models])]).astype(np.int64),
            "params": params,
            "ulo": np.concatenate([mdl.bounds[0] for mdl in models]),
            "uhi": np.concatenate([mdl.bounds[1] for mdl in models]),
        }
        for name, value in sets.items():
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return int(self.xoff[-1])

    @property
    def m(self) -> int:
        return int(self.uoff[-1])

    def state_slice(self, a: int) -> slice:
        return slice(int(self.xoff[a]), int(self.xoff[a + 1]))

    def control_slice(self, a: int) -> slice:
        return slice(int(self.uoff[a]), int(self.uoff[a + 1]))

    def check(self, x0, U) -> tuple:
        x0 = np.ascontiguousarray(x0, dtype=float)
        U = np.ascontiguousarray(U, dtype=float)
        if x0.shape != (self.n,):
            raise ConfigurationError(f"initial state has shape {x0.shape}, expected ({self.n},)")
        if U.ndim != 2 or U.shape[1] != self.m or U.shape[0] < 1:
            raise ConfigurationError(f"controls have shape {U.shape}, expected (T>=1, {self.m})")
        return x0, U

    def rollout(self, x0, U, dt: float) -> JointTrajectory:
        x0, U = self.check(x0, U)
        X = np.empty((U.shape[0] + 1, self.n))
        Uc = np.empty_like(U)
        K.joint_rollout(self.kinds, self.xoff, self.uoff, self.params, float(dt),
                        x0, U, self.ulo, self.uhi, X, Uc)
        return JointTrajectory(X, Uc)

    def forward(self, x0, traj: JointTrajectory, kff, Kfb, alpha: float, dt: float) -> JointTrajectory:
        T = traj.horizon
        X = np.empty((T + 1, self.n))
        U = np.empty((T, self.m))
        K.joint_forward(self.kinds, self.xoff, self.uoff, self.params, float(dt), x0,
                        traj.states, traj.controls, kff, Kfb, float(alpha),
                        self.ulo, self.uhi, X, U)
        return JointTrajectory(X, U)

    def linearize(self, traj: JointTrajectory, dt: float) -> tuple:
        T = traj.horizon
        A = np.empty((T, self.n, self.n))
        B = np.empty((T, self.n, self.m))
        K.joint_linearize(self.kinds, self.xoff, self.uoff, self.params, float(dt),
                          traj.states, traj.controls, A, B)
        return A, B

    def split(self, x) -> list:
        """Per-agent views of a joint state (or of the last axis of a trajectory)."""
        x = np.asarray(x)
        return [x[..., self.state_slice(a)] for a in range(len(self.models))]

    def positions(self, X) -> np.ndarray:
        """``(..., N, d)`` agent positions from joint states; all agents must share ``d``."""
        idx = position_index(self.models, self.xoff)
        return np.asarray(X)[..., idx]


def position_index(models: Sequence[AgentModel], xoff=None) -> np.ndarray:
    dims = {mdl.pos_dim for mdl in models}
    if len(dims) != 1:
        raise ConfigurationError("all agents in one problem must share the position dimension")
    if xoff is None:
        xoff = np.concatenate([[0], np.cumsum([mdl.n_x for mdl in models])])
    return np.array([[int(xoff[a]) + p for p in mdl.pos_idx] for a, mdl in enumerate(models)],
                    dtype=np.int64)


def concat_states(per_agent: Sequence) -> np.ndarray:
    return np.concatenate([np.asarray(x, dtype=float) for x in per_agent])


def rollout(models: Sequence[AgentModel], x0, U, dt: float) -> JointTrajectory:
    """Integrate all agents from ``x0`` under controls ``U`` of shape ``(T, m)``."""
    return JointDynamics(tuple(models)).rollout(x0, U, dt)
