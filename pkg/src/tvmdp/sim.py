"""Stochastic rollouts of a planner under a time-varying field.

Each step applies one action for the motion duration ``T = cell_size / speed``:
the displacement is drawn from the Gaussian motion model with the field sampled
at the robot's current position and time, the position is clamped to the arena,
and the state is the cell whose center is nearest. Runs end on entering the goal
cell or after ``timeout`` steps.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .gridworld import UNIT_DIRECTIONS, GridWorld
from .solvers.atmdp import ATMDPOptions, atmdp_solve
from .solvers.base import Policy, RewardModel
from .solvers.dtmdp import dtmdp_solve
from .solvers.mdp import solve_mdp
from .solvers.tvmdp import TVMDPOptions, tvmdp_solve
from .timing import MultiHopEstimator
from .transition import NoiseConfig, step_duration

METRIC_FIELDS = ("path_length", "travel_time", "compute_time", "replan_count", "linear_solve_time")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator for one run."""
    return np.random.Generator(np.random.Philox(int(seed)))


# ---------------------------------------------------------------------------
# planners


class Planner:
    """Supplies optimal action sets during a rollout.

    ``start`` is called once at the initial state; ``step`` after every move.
    Subclasses accumulate solver wall-clock in ``compute_time`` and the linear
    solve share in ``linear_solve_time``.
    """

    name = "planner"

    def __init__(self):
        self.compute_time = 0.0
        self.linear_solve_time = 0.0
        self.replan_count = 0
        self.last = None

    def start(self, s: int, t: float):
        self._plan(s, t)

    def step(self, s: int, t: float):
        pass

    def actions(self, s: int, t: float) -> list[int]:
        raise NotImplementedError

    def _record(self, result):
        self.compute_time += result.compute_time
        self.linear_solve_time += result.linear_solve_time
        self.replan_count += 1
        self.last = result

    def _plan(self, s, t):
        raise NotImplementedError


class FixedPolicy(Planner):
    """Executes a given policy; no solving."""

    name = "fixed"

    def __init__(self, policy: Policy):
        super().__init__()
        self.policy = policy

    def _plan(self, s, t):
        pass

    def actions(self, s, t):
        return self.policy.actions(s)


class MDPPlanner(Planner):
    """Plans once with the field frozen at the start time."""

    name = "mdp"

    def __init__(self, grid, field_, reward, noise, speed=1.0, tol=1e-6):
        super().__init__()
        self.args = (grid, field_, reward, noise)
        self.speed, self.tol = speed, tol

    def _plan(self, s, t):
        self._record(solve_mdp(*self.args, t0=t, speed=self.speed, tol=self.tol))

    def actions(self, s, t):
        return self.last.policy.actions(s)


class DTMDPPlanner(Planner):
    """Plans once over time layers; the action set follows the clock's layer."""

    name = "dtmdp"

    def __init__(self, grid, field_, reward, noise, horizon, layers, speed=1.0, tol=1e-6):
        super().__init__()
        self.args = (grid, field_, reward, noise)
        self.horizon, self.layers = horizon, layers
        self.speed, self.tol = speed, tol

    def _plan(self, s, t):
        res = dtmdp_solve(
            *self.args, horizon=self.horizon, layers=self.layers, tol=self.tol, t0=t, speed=self.speed
        )
        self._record(res)

    def actions(self, s, t):
        return self.last.policy.actions(s, t)


class RecedingPlanner(Planner):
    """Re-solves from the current state and time every ``interval`` steps.

    Each re-solve starts value iteration from the previous plan's values.
    """

    def __init__(self, solve, interval=1, warm_start=True):
        super().__init__()
        if interval < 1:
            raise ValueError(f"replan interval must be >= 1, got {interval}")
        self.solve = solve
        self.interval = interval
        self.warm_start = warm_start
        self._since = 0

    def _plan(self, s, t):
        V0 = None
        if self.warm_start and self.last is not None:
            V0 = self.last.values.values
        self._record(self.solve(s, t, V0))
        self._since = 0

    def step(self, s, t):
        self._since += 1
        if self._since >= self.interval:
            self._plan(s, t)

    def actions(self, s, t):
        return self.last.policy.actions(s)


def tvmdp_planner(grid, field_, reward, noise, speed=1.0, options=None, interval=1, warm_start=True):
    opt = options or TVMDPOptions()
    # Shared across replans; earlier solutions are only used as initial guesses.
    estimator = MultiHopEstimator(grid, opt.solver)

    def solve(s, t, V0):
        return tvmdp_solve(grid, field_, reward, noise, s, t, speed, opt, V0=V0, estimator=estimator)

    p = RecedingPlanner(solve, interval, warm_start)
    p.name = "tvmdp"
    return p


def atmdp_planner(grid, field_, reward, noise, speed=1.0, options=None, interval=1, warm_start=True):
    opt = options or ATMDPOptions()

    def solve(s, t, V0):
        return atmdp_solve(grid, field_, reward, noise, s, t, speed, opt, V0=V0)

    p = RecedingPlanner(solve, interval, warm_start)
    p.name = "atmdp"
    return p


def make_planner(name, grid, field_, reward, noise, speed=1.0, **params) -> Planner:
    """Planner by solver name: ``mdp``, ``tvmdp``, ``atmdp`` or ``dtmdp``."""
    tol = params.get("tol", 1e-6)
    interval = params.get("replan_interval", 1)
    warm = params.get("warm_start", True)
    if name == "mdp":
        return MDPPlanner(grid, field_, reward, noise, speed, tol)
    if name == "tvmdp":
        opt = TVMDPOptions(tol=tol, **params.get("tvmdp", {}))
        return tvmdp_planner(grid, field_, reward, noise, speed, opt, interval, warm)
    if name == "atmdp":
        return atmdp_planner(grid, field_, reward, noise, speed, ATMDPOptions(tol=tol), interval, warm)
    if name == "dtmdp":
        return DTMDPPlanner(
            grid, field_, reward, noise, params["horizon"], params["layers"], speed, tol
        )
    raise ValueError(f"unknown solver {name!r}")


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    states: np.ndarray
    # action taken at each sample; -1 on the final sample
    actions: np.ndarray
    outcome: str

    def __len__(self):
        return len(self.times)

    def rows(self):
        for t, (x, y), s, a in zip(self.times, self.positions, self.states, self.actions):
            yield float(t), float(x), float(y), int(s), int(a)


@dataclass
class RunMetrics:
    path_length: float
    travel_time: float
    compute_time: float
    replan_count: int
    linear_solve_time: float
    steps: int = 0
    outcome: str = "reached-goal"
    solver: str = ""
    seed: int = 0

    def to_dict(self, timings=True) -> dict:
        d = asdict(self)
        if not timings:
            d.pop("compute_time")
            d.pop("linear_solve_time")
        return d


def _sqrt_psd(cov) -> np.ndarray:
    w, U = np.linalg.eigh(np.asarray(cov, dtype=float))
    return U * np.sqrt(np.clip(w, 0.0, None))


def rollout(
    planner: Planner,
    grid: GridWorld,
    field_,
    noise: NoiseConfig,
    s0: int,
    t0: float = 0.0,
    seed: int = 0,
    timeout: int | None = None,
    speed: float = 1.0,
):
    """Run one episode; returns ``(Trajectory, RunMetrics)``.

    ``timeout`` is in steps and defaults to ``50 * n_states``.
    """
    s0 = grid._check(s0)
    rng = make_rng(seed)
    if timeout is None:
        timeout = 50 * grid.n_states
    T = step_duration(grid, speed)
    root = _sqrt_psd(noise.covariance)
    x = grid.state_center(s0)
    t = float(t0)
    s = s0
    times, positions, states, actions = [t], [x.copy()], [s], []
    path = 0.0
    outcome = "reached-goal"
    if s != grid.goal:
        planner.start(s, t)
    steps = 0
    while s != grid.goal:
        if steps >= timeout:
            outcome = "timeout"
            break
        options = planner.actions(s, t)
        if not options:
            raise RuntimeError(f"planner {planner.name} returned no action at state {s}")
        a = options[int(rng.integers(len(options)))] if len(options) > 1 else options[0]
        mean = (speed * UNIT_DIRECTIONS[a] + np.asarray(field_.query(x, t), dtype=float)) * T
        disp = mean + root @ rng.standard_normal(2)
        x_new = grid.clamp(x + disp)
        path += float(np.linalg.norm(x_new - x))
        x = x_new
        t = t0 + (steps + 1) * T
        s = grid.locate(x)
        steps += 1
        actions.append(a)
        times.append(t)
        positions.append(x.copy())
        states.append(s)
        if s != grid.goal and steps < timeout:
            planner.step(s, t)
    actions.append(-1)
    traj = Trajectory(
        np.asarray(times), np.asarray(positions), np.asarray(states), np.asarray(actions), outcome
    )
    metrics = RunMetrics(
        path_length=path,
        travel_time=steps * T,
        compute_time=planner.compute_time,
        replan_count=planner.replan_count,
        linear_solve_time=min(planner.linear_solve_time, planner.compute_time),
        steps=steps,
        outcome=outcome,
        solver=planner.name,
        seed=int(seed),
    )
    return traj, metrics


def aggregate(runs) -> dict:
    """Mean, sample standard deviation, min and max of each metric.

    The standard deviation uses ``n - 1`` and is 0 for a single run.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("aggregate needs at least one run")
    out = {"n": len(runs), "timeouts": sum(r.outcome == "timeout" for r in runs)}
    for name in METRIC_FIELDS:
        vals = np.array([float(getattr(r, name)) for r in runs])
        out[name] = {
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
            "min": float(vals.min()),
            "max": float(vals.max()),
        }
    return out


# ---------------------------------------------------------------------------
# export


def _num(x) -> str:
    # 17 significant digits round-trip any double
    return repr(float(x)) if math.isfinite(x) else str(float(x))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "state", "action"])
        for t, x, y, s, a in traj.rows():
            w.writerow([_num(t), _num(x), _num(y), s, a])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trajectory")
    return Trajectory(
        np.array([float(r["t"]) for r in rows]),
        np.array([[float(r["x"]), float(r["y"])] for r in rows]),
        np.array([int(r["state"]) for r in rows]),
        np.array([int(r["action"]) for r in rows]),
        outcome="unknown",
    )


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class Scenario:
    """Everything a rollout needs besides the planner."""

    grid: GridWorld
    field: object
    noise: NoiseConfig = field(default_factory=NoiseConfig.default)
    reward: RewardModel = field(default_factory=RewardModel)
    s0: int = 0
    t0: float = 0.0
    speed: float = 1.0
    timeout: int | None = None

    def planner(self, name, **params) -> Planner:
        return make_planner(name, self.grid, self.field, self.reward, self.noise, self.speed, **params)

    def run(self, name, seed, **params):
        return rollout(
            self.planner(name, **params), self.grid, self.field, self.noise,
            self.s0, self.t0, seed, self.timeout, self.speed,
        )
