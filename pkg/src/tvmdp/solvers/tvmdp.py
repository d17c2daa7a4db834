"""Time-varying MDP value iteration anchored at the agent's state ``s0``.

Each iteration runs a Bellman sweep in which state ``s`` uses the transition model
evaluated at ``t0 + t(s0, s)``, then re-estimates one-hop and multi-hop transition
times under the updated policy. Iteration stops when the value change is within
``tol``, the last time update moved every estimate by at most ``time_rtol``, and
the policy has not changed since that update.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..gridworld import GridWorld
from ..timing import (
    MultiHopEstimator,
    SolverError,
    SolverOptions,
    TransitionTimeTable,
    one_hop_table,
)
from ..transition import NoiseConfig, action_pmfs, mixture_from_policy, step_duration
from .base import Policy, RewardModel, SolveResult, ValueFunction, greedy, q_values, successor_index

log = logging.getLogger(__name__)


@dataclass
class TVMDPOptions:
    tol: float = 1e-6
    max_iter: int = 5000
    time_rtol: float = 0.01
    # "synergistic" uses action + disturbance PMFs in the time systems, "action" the action alone.
    kolmogorov_model: str = "synergistic"
    # Skip the temporal channel when neither the policy nor the times moved since
    # the last estimate; False runs it on every iteration.
    lazy_time: bool = True
    # After this many time updates the times are frozen and value iteration
    # finishes on the fixed transition model.
    max_time_updates: int = 50
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.max_time_updates < 1:
            raise ValueError(f"max_time_updates must be >= 1, got {self.max_time_updates}")
        if self.kolmogorov_model not in ("synergistic", "action"):
            raise ValueError(f"unknown kolmogorov_model {self.kolmogorov_model!r}")


def _relative_change(new, old, floor):
    valid = np.isfinite(new) & np.isfinite(old)
    denom = np.maximum(np.maximum(np.abs(new), np.abs(old)), floor)
    return float(np.max(np.abs(new - old)[valid] / denom[valid], initial=0.0))


class _ZeroField:
    def query(self, x, t):
        return np.zeros_like(np.asarray(x, dtype=float))


def _action_only(grid, at, noise, speed):
    """PMFs of the commanded motion alone, without the disturbance."""
    cov = noise.action_cov if np.linalg.det(noise.action_cov) > 0 else noise.covariance
    return action_pmfs(grid, _ZeroField(), at, NoiseConfig(cov, np.zeros((2, 2))), speed)


def tvmdp_solve(
    grid: GridWorld,
    field_,
    reward: RewardModel,
    noise: NoiseConfig,
    s0: int,
    t0: float = 0.0,
    speed: float = 1.0,
    options: TVMDPOptions | None = None,
    V0=None,
    estimator: MultiHopEstimator | None = None,
) -> SolveResult:
    """Solve the TVMDP from ``(s0, t0)``.

    Returns a :class:`SolveResult` whose ``times`` is the final
    :class:`TransitionTimeTable`; ``linear_solve_time`` covers the Kolmogorov solves.
    """
    opt = options or TVMDPOptions()
    s0 = grid._check(s0)
    started = time.perf_counter()
    n = grid.n_cells
    succ = successor_index(grid)
    dwell = step_duration(grid, speed)
    if estimator is None:
        estimator = MultiHopEstimator(grid, opt.solver)

    tau = np.zeros(n)
    tau[grid.blocked] = np.nan
    V = np.zeros(n) if V0 is None else np.array(V0, dtype=float)
    pmfs = action_pmfs(grid, field_, t0 + np.nan_to_num(tau), noise, speed)
    one_hop = None
    mask_at_update = None
    last_change = np.inf
    linear_seconds = 0.0
    time_updates = 0
    k = 0
    mask = None
    # policies seen at time updates; a repeat means policy and times are cycling
    seen = set()
    frozen = False
    for k in range(1, opt.max_iter + 1):
        # spatial channel
        Q = q_values(grid, pmfs, V, reward, succ)
        V_new, mask = greedy(Q, grid)
        dv = float(np.max(np.abs(V_new - V)))
        V = V_new

        # temporal channel
        # Rows outside the support cannot change arrival times from s0.
        policy_moved = mask_at_update is None or not np.array_equal(
            mask[estimator.support], mask_at_update[estimator.support]
        )
        key = estimator.support.tobytes() + mask[estimator.support].tobytes()
        if not frozen and policy_moved and mask_at_update is not None and key in seen:
            # Limit cycle between policy and times: keep the current times and
            # let the spatial channel converge on the fixed transition model.
            frozen = True
            log.debug("iter %d: policy repeated, freezing transition times", k)
        elif not frozen and time_updates >= opt.max_time_updates:
            frozen = True
            log.debug("iter %d: %d time updates, freezing transition times", k, time_updates)
        if frozen:
            policy_moved = False
            last_change = 0.0
        elif not opt.lazy_time or policy_moved or last_change > opt.time_rtol:
            seen.add(key)
            at = t0 + np.nan_to_num(tau)
            one_hop = one_hop_table(grid, field_, at, noise, speed)
            model = pmfs if opt.kolmogorov_model == "synergistic" else _action_only(grid, at, noise, speed)
            try:
                new_tau, stats = estimator.estimate(s0, mixture_from_policy(model, mask), one_hop)
            except SolverError as exc:
                raise SolverError(
                    f"TVMDP iteration {k}: {exc}", residual=exc.residual, end_state=exc.end_state
                ) from exc
            linear_seconds += stats.seconds
            time_updates += 1
            last_change = _relative_change(new_tau, tau, dwell)
            tau = new_tau
            mask_at_update = mask.copy()
            pmfs = action_pmfs(grid, field_, t0 + np.nan_to_num(tau), noise, speed)
            log.debug(
                "iter %d: dv=%.3g, time change %.3g, %d solver iterations, %d direct, %.3fs",
                k, dv, last_change, stats.iterations, stats.direct, stats.seconds,
            )
        if dv <= opt.tol and last_change <= opt.time_rtol and not policy_moved:
            break

    table = TransitionTimeTable(s0, one_hop, tau, grid.successor_table)
    return SolveResult(
        ValueFunction(V, k),
        Policy(mask),
        times=table,
        iterations=k,
        compute_time=time.perf_counter() - started,
        linear_solve_time=linear_seconds,
        info={"time_updates": time_updates, "times_frozen": frozen, "t0": t0, "s0": s0, "pmfs": pmfs},
    )
