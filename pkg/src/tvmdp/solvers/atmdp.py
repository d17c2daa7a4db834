"""Approximate time-dependent MDP baseline: prioritized sweeping with greedy times.

Instead of solving linear systems, the time at which each state is reached is
approximated by accumulating one-hop times from ``s0`` along the intended
successors of the current optimal actions (earliest arrival, Dijkstra order).
States the chain does not reach keep the snapshot at ``t0``. Values are
propagated by prioritized sweeping keyed by the Bellman residual; the times are
then re-derived from the new policy, until they move by at most ``time_rtol``.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass

import numpy as np

from ..gridworld import IDLE, GridWorld
from ..timing import one_hop_table
from ..transition import action_pmfs
from .base import Policy, RewardModel, SolveResult, ValueFunction, greedy, q_values, successor_index


@dataclass
class ATMDPOptions:
    tol: float = 1e-6
    time_rtol: float = 0.01
    max_rounds: int = 50
    max_backups: int = 10_000_000


def greedy_times(grid: GridWorld, mask: np.ndarray, s0: int, t0: float, hop_at) -> np.ndarray:
    """Earliest arrival offsets from ``s0`` along policy edges.

    ``hop_at(s, t)`` returns the ``(9,)`` one-hop times out of ``s`` at time ``t``.
    Unreached states get 0 (they are evaluated at ``t0``).
    """
    succ = grid.successor_table
    tau = np.full(grid.n_cells, np.inf)
    tau[s0] = 0.0
    done = np.zeros(grid.n_cells, dtype=bool)
    heap = [(0.0, int(s0))]
    while heap:
        d, s = heapq.heappop(heap)
        if done[s]:
            continue
        done[s] = True
        if s == grid.goal:
            continue
        hop = hop_at(s, t0 + d)
        for a in np.flatnonzero(mask[s]):
            if a == IDLE:
                continue
            nxt = succ[s, a]
            if nxt < 0 or done[nxt] or not np.isfinite(hop[a]):
                continue
            cand = d + float(hop[a])
            if cand < tau[nxt]:
                tau[nxt] = cand
                heapq.heappush(heap, (cand, int(nxt)))
    tau[~np.isfinite(tau)] = 0.0
    tau[grid.blocked] = np.nan
    return tau


def _backup(s, pmfs, V, succ, reward, bias, goal):
    if s == goal:
        return reward.goal_reward
    q = pmfs[s] @ (reward.step_cost + reward.discount * V[succ[s]]) + bias[s]
    return float(q.max())


def prioritized_sweep(grid, pmfs, V, reward, tol, succ=None, max_backups=10_000_000):
    """Prioritized sweeping until no state's Bellman residual exceeds ``tol``.

    Updates ``V`` in place and returns the number of backups. A state's priority
    is an upper bound on its Bellman residual: its exact residual when the queue
    is seeded, then, after a backup changes ``V[s]`` by ``delta``, each
    predecessor ``q`` gains ``discount * max_a P(s | q, a) * |delta|``. So an
    empty queue means every residual is at most ``tol``. States next to the goal
    are seeded first at the largest finite priority.
    """
    if succ is None:
        succ = successor_index(grid)
    bias = np.where(grid.admissible, 0.0, -np.inf)  # rules out inadmissible actions
    goal = grid.goal
    table = grid.successor_table
    # influence[s]: (q, discount * max_a P(s | q, a)) over the states q that can step to s
    reach = reward.discount * pmfs.max(axis=1)  # (n, slot)
    influence = [[] for _ in range(grid.n_cells)]
    for q in grid.states:
        if q == goal:
            continue
        for j in range(table.shape[1]):
            s_next = table[q, j]
            if s_next >= 0 and reach[q, j] > 0:
                influence[s_next].append((int(q), float(reach[q, j])))
    big = np.finfo(float).max
    BV, _ = greedy(q_values(grid, pmfs, V, reward, succ), grid)
    prio = np.abs(BV - V)
    prio[grid.blocked] = 0.0
    for p in table[goal]:
        if p >= 0:
            prio[p] = big
    heap = [(-prio[s], int(s)) for s in grid.states if prio[s] > tol]
    heapq.heapify(heap)
    backups = 0
    while heap and backups < max_backups:
        p, s = heapq.heappop(heap)
        if -p != prio[s]:
            continue  # stale entry
        prio[s] = 0.0
        v = _backup(s, pmfs, V, succ, reward, bias, goal)
        delta = abs(v - V[s])
        V[s] = v
        backups += 1
        if delta == 0.0:
            continue
        for q, w in influence[s]:
            r = prio[q] + w * delta
            prio[q] = r
            if r > tol:
                heapq.heappush(heap, (-r, q))
    return backups


def atmdp_solve(
    grid: GridWorld,
    field_,
    reward: RewardModel,
    noise,
    s0: int,
    t0: float = 0.0,
    speed: float = 1.0,
    options: ATMDPOptions | None = None,
    V0=None,
) -> SolveResult:
    opt = options or ATMDPOptions()
    s0 = grid._check(s0)
    start = time.perf_counter()
    succ = successor_index(grid)
    V = np.zeros(grid.n_cells) if V0 is None else np.array(V0, dtype=float)
    tau = np.zeros(grid.n_cells)
    tau[grid.blocked] = np.nan
    backups = 0
    rounds = 0
    mask = None
    seen = set()
    cycled = False
    for rounds in range(1, opt.max_rounds + 1):
        at = t0 + np.nan_to_num(tau)
        pmfs = action_pmfs(grid, field_, at, noise, speed)
        backups += prioritized_sweep(grid, pmfs, V, reward, opt.tol, succ, opt.max_backups)
        _, mask = greedy(q_values(grid, pmfs, V, reward, succ), grid)
        key = mask.tobytes()
        if key in seen:
            # the policy/time rounds are cycling; keep the current times
            cycled = True
            break
        seen.add(key)

        def hop_at(s, t):
            return one_hop_table(grid, field_, t, noise, speed, states=[s])[0]

        new_tau = greedy_times(grid, mask, s0, t0, hop_at)
        valid = grid.states
        change = np.abs(new_tau[valid] - tau[valid]) / np.maximum(
            np.maximum(np.abs(new_tau[valid]), np.abs(tau[valid])), grid.cell_size / speed
        )
        tau = new_tau
        if np.max(change, initial=0.0) <= opt.time_rtol:
            break
    return SolveResult(
        ValueFunction(V, rounds),
        Policy(mask),
        times=tau,
        iterations=backups,
        compute_time=time.perf_counter() - start,
        info={"rounds": rounds, "backups": backups, "cycled": cycled, "t0": t0, "s0": s0},
    )

