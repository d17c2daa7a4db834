"""Standard value iteration on a static transition model."""

from __future__ import annotations

import time

import numpy as np

from ..gridworld import GridWorld
from ..transition import action_pmfs
from .base import Policy, RewardModel, SolveResult, ValueFunction, greedy, q_values, successor_index


def mdp_value_iteration(
    grid: GridWorld,
    pmfs: np.ndarray,
    reward: RewardModel,
    tol: float = 1e-6,
    max_iter: int = 100_000,
    V0=None,
    history: list | None = None,
):
    """Synchronous value iteration until the sup-norm change is at most ``tol``.

    ``pmfs`` is the ``(n_cells, 9, 9)`` action PMF array. If ``history`` is a list,
    every iterate is appended to it.
    """
    succ = successor_index(grid)
    V = np.zeros(grid.n_cells) if V0 is None else np.array(V0, dtype=float)
    mask = None
    k = 0
    for k in range(1, max_iter + 1):
        Q = q_values(grid, pmfs, V, reward, succ)
        V_new, mask = greedy(Q, grid)
        delta = np.max(np.abs(V_new - V))
        V = V_new
        if history is not None:
            history.append(V.copy())
        if delta <= tol:
            break
    return ValueFunction(V, k), Policy(mask)


def solve_mdp(grid, field_, reward, noise, t0=0.0, speed=1.0, tol=1e-6, max_iter=100_000, V0=None):
    """MDP baseline: plan once with the field frozen at ``t0``."""
    start = time.perf_counter()
    pmfs = action_pmfs(grid, field_, t0, noise, speed)
    values, policy = mdp_value_iteration(grid, pmfs, reward, tol, max_iter, V0)
    return SolveResult(
        values, policy, iterations=values.epoch, compute_time=time.perf_counter() - start
    )
