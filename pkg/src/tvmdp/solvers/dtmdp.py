"""Time-layered MDP baseline.

The state space is copied into ``layers`` time layers; layer ``l`` uses the
transition model at ``t0 + l * dt`` with ``dt = horizon / layers``. Landing in
slot ``j`` from layer ``l`` moves to layer ``l + round(t(s, j) / dt)``, at least one
layer for non-idle actions and never backwards. The last layer is absorbing in
time and holds its field.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..gridworld import IDLE, GridWorld
from ..timing import UNREACHABLE_TIME, one_hop_table
from ..transition import action_pmfs, step_duration
from .base import Policy, RewardModel, SolveResult, ValueFunction, greedy, successor_index


class LayerBudgetError(MemoryError):
    pass


@dataclass
class LayeredPolicy:
    """Optimal action sets per ``(layer, state)`` plus the layer clock."""

    mask: np.ndarray  # (layers, n_cells, 9)
    t0: float
    dt: float

    @property
    def layers(self) -> int:
        return self.mask.shape[0]

    def layer_at(self, t: float) -> int:
        k = int(np.floor((t - self.t0) / self.dt + 1e-9))
        return int(min(max(k, 0), self.layers - 1))

    def at_layer(self, layer: int) -> Policy:
        return Policy(self.mask[layer])

    def actions(self, s: int, t: float) -> list[int]:
        return [int(a) for a in np.flatnonzero(self.mask[self.layer_at(t), s])]


def layer_advance(one_hop: np.ndarray, dt: float, layers: int) -> np.ndarray:
    """``(n, 9 actions, 9 slots)`` layer increments from per-slot one-hop times."""
    t = np.where(np.isfinite(one_hop), one_hop, UNREACHABLE_TIME)
    adv = np.rint(np.minimum(t / dt, layers)).astype(np.int64)  # (n, j)
    adv = np.broadcast_to(adv[:, None, :], (t.shape[0], t.shape[1], t.shape[1])).copy()
    moving = np.arange(adv.shape[1]) != IDLE
    adv[:, moving, :] = np.maximum(adv[:, moving, :], 1)
    return adv


def dtmdp_solve(
    grid: GridWorld,
    field_,
    reward: RewardModel,
    noise,
    horizon: float,
    layers: int,
    tol: float = 1e-6,
    t0: float = 0.0,
    speed: float = 1.0,
    max_states: int = 2_000_000,
    max_iter: int = 100_000,
) -> SolveResult:
    """Value iteration on the layered state space.

    ``result.policy`` is a :class:`LayeredPolicy`; ``result.values.values`` has
    shape ``(layers, n_cells)``.
    """
    if layers < 2:
        raise ValueError(f"layers must be >= 2, got {layers}")
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    size = grid.n_states * layers
    if size > max_states:
        raise LayerBudgetError(
            f"{grid.n_states} states x {layers} layers = {size} exceeds the cap of {max_states}"
        )
    start = time.perf_counter()
    n = grid.n_cells
    dt = horizon / layers
    succ = successor_index(grid)
    dwell = step_duration(grid, speed)
    pmfs = np.empty((layers, n, 9, 9))
    target_layer = np.empty((layers, n, 9, 9), dtype=np.int64)
    for layer in range(layers):
        at = t0 + layer * dt
        pmfs[layer] = action_pmfs(grid, field_, at, noise, speed)
        hop = one_hop_table(grid, field_, at, noise, speed)
        hop[:, IDLE] = dwell
        target_layer[layer] = np.minimum(layer + layer_advance(hop, dt, layers), layers - 1)
    succ_b = np.broadcast_to(succ[None, :, None, :], target_layer.shape)

    V = np.zeros((layers, n))
    mask = np.zeros((layers, n, 9), dtype=bool)
    k = 0
    for k in range(1, max_iter + 1):
        target = reward.step_cost + reward.discount * V[target_layer, succ_b]
        Q = np.einsum("lsaj,lsaj->lsa", pmfs, target)
        V_new = np.empty_like(V)
        for layer in range(layers):
            q = np.where(grid.admissible, Q[layer], -np.inf)
            q[grid.goal] = np.where(grid.admissible[grid.goal], reward.goal_reward, -np.inf)
            V_new[layer], mask[layer] = greedy(q, grid)
        delta = float(np.max(np.abs(V_new - V)))
        V = V_new
        if delta <= tol:
            break
    return SolveResult(
        ValueFunction(V, k),
        LayeredPolicy(mask, t0, dt),
        iterations=k,
        compute_time=time.perf_counter() - start,
        info={"layers": layers, "dt": dt, "horizon": horizon},
    )
