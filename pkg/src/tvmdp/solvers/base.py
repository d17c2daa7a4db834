from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..gridworld import N_ACTIONS, GridWorld


@dataclass(frozen=True)
class RewardModel:
    """Goal-reaching rewards.

    The goal is terminal: its value is ``goal_reward`` once backed up, and every
    action there is equally good. Other transitions pay ``step_cost``.
    """

    goal_reward: float = 100.0
    step_cost: float = 0.0
    discount: float = 0.95

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if self.step_cost > 0:
            raise ValueError(f"step_cost must be <= 0, got {self.step_cost}")


@dataclass
class ValueFunction:
    values: np.ndarray
    epoch: int = 0

    def __getitem__(self, s):
        return self.values[s]


@dataclass
class Policy:
    """Optimal action sets, stored as an ``(n_cells, 9)`` boolean mask."""

    mask: np.ndarray

    def actions(self, s: int) -> list[int]:
        return [int(a) for a in np.flatnonzero(self.mask[s])]

    def same_sets(self, other: "Policy", states=None) -> bool:
        a, b = self.mask, other.mask
        if states is not None:
            a, b = a[states], b[states]
        return bool(np.array_equal(a, b))

    def differing_states(self, other: "Policy") -> np.ndarray:
        return np.flatnonzero(np.any(self.mask != other.mask, axis=1))


@dataclass
class SolveResult:
    values: ValueFunction
    policy: Policy
    times: object = None
    iterations: int = 0
    compute_time: float = 0.0
    linear_solve_time: float = 0.0
    info: dict = field(default_factory=dict)


def successor_index(grid: GridWorld) -> np.ndarray:
    """Successor table with inadmissible slots pointing at the state itself."""
    succ = grid.successor_table
    return np.where(succ >= 0, succ, np.arange(grid.n_cells)[:, None])


def q_values(grid: GridWorld, pmfs: np.ndarray, V: np.ndarray, reward: RewardModel, succ=None):
    """``Q[s, a]`` for all states; ``-inf`` for inadmissible actions and blocked cells."""
    if succ is None:
        succ = successor_index(grid)
    target = reward.step_cost + reward.discount * V[succ]  # (n, j)
    Q = np.einsum("saj,sj->sa", pmfs, target)
    Q = np.where(grid.admissible, Q, -np.inf)
    Q[grid.goal] = np.where(grid.admissible[grid.goal], reward.goal_reward, -np.inf)
    return Q


def greedy(Q: np.ndarray, grid: GridWorld, tie_rtol: float = 1e-6):
    """State values and optimal-action mask from Q values.

    Actions within ``tie_rtol * max(1, |max Q|)`` of the best count as tied.
    """
    V = np.max(Q, axis=1)
    V = np.where(np.isfinite(V), V, 0.0)
    tol = tie_rtol * np.maximum(1.0, np.abs(V))
    mask = (Q >= (V - tol)[:, None]) & grid.admissible
    mask[grid.blocked] = False
    return V, mask


def check_policy(policy: Policy, grid: GridWorld):
    valid = grid.states
    if not policy.mask[valid].any(axis=1).all():
        raise AssertionError("empty action set at a valid state")
    if np.any(policy.mask & ~grid.admissible):
        raise AssertionError("inadmissible action in policy")


__all__ = [
    "N_ACTIONS",
    "Policy",
    "RewardModel",
    "SolveResult",
    "ValueFunction",
    "check_policy",
    "greedy",
    "q_values",
    "successor_index",
]
