"""Interaction graphs from predicted trajectories."""

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .dynamics import AgentModel, position_index
from .errors import ConfigurationError


@dataclass(frozen=True)
class InteractionGraph:
    """Undirected graph over agents ``0..n_agents-1``; edges stored as ``(i, j)`` with ``i < j``."""

    n_agents: int
    edges: frozenset

    def __post_init__(self):
        clean = set()
        for i, j in self.edges:
            if i == j:
                raise ConfigurationError(f"self-loop on agent {i}")
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise ConfigurationError(f"edge {(i, j)} outside 0..{self.n_agents - 1}")
            clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(clean))

    @cached_property
    def neighborhoods(self) -> tuple:
        nbrs = [set() for _ in range(self.n_agents)]
        for i, j in self.edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        return tuple(frozenset(s) for s in nbrs)

    def neighbors(self, i: int) -> frozenset:
        return self.neighborhoods[i]


def subproblem_agents(g: InteractionGraph, i: int) -> tuple:
    """Agent ``i`` together with its neighbours, in increasing index order."""
    if not 0 <= i < g.n_agents:
        raise ConfigurationError(f"agent {i} outside 0..{g.n_agents - 1}")
    return tuple(sorted(g.neighbors(i) | {i}))


def graph_from_positions(P, d_prox: float, alpha: float) -> InteractionGraph:
    """Edges between agents whose positions ``P`` of shape ``(T, N, d)`` ever come
    strictly closer than ``alpha * d_prox``."""
    if alpha < 1:
        raise ConfigurationError(f"alpha must be >= 1, got {alpha}")
    P = np.asarray(P, dtype=float)
    N = P.shape[1]
    if N < 2:
        return InteractionGraph(N, frozenset())
    diff = P[:, :, None, :] - P[:, None, :, :]
    close = (np.sqrt(np.sum(diff * diff, axis=-1)) < alpha * d_prox).any(axis=0)
    ii, jj = np.nonzero(np.triu(close, k=1))
    return InteractionGraph(N, frozenset(zip(ii.tolist(), jj.tolist())))


def build_graph(predicted_states, models: Sequence[AgentModel], d_prox: float,
                alpha: float = 1.5) -> InteractionGraph:
    """Interaction graph from joint predicted states of shape ``(T + 1, n)``.

    Only stages ``0..T-1`` are compared, so the last predicted state does not
    create edges.
    """
    X = np.asarray(getattr(predicted_states, "states", predicted_states), dtype=float)
    idx = position_index(models)
    return graph_from_positions(X[:-1][:, idx], d_prox, alpha)
