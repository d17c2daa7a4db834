import statistics

import numpy as np
import pytest

from tvmdp.disturbance import UniformField, make_vortex
from tvmdp.gridworld import GridWorld
from tvmdp.sim import (
    FixedPolicy,
    RunMetrics,
    Scenario,
    aggregate,
    read_trajectory_csv,
    rollout,
    write_trajectory_csv,
)
from tvmdp.solvers import Policy
from tvmdp.transition import NoiseConfig

E = 2
ZERO = NoiseConfig(np.zeros((2, 2)), np.zeros((2, 2)))


def east_policy(grid):
    mask = np.zeros((grid.n_cells, 9), dtype=bool)
    mask[:, E] = grid.admissible[:, E]
    mask[grid.goal] = grid.admissible[grid.goal]
    return Policy(mask)


@pytest.mark.parametrize("cell, speed", [(1.0, 1.0), (2.0, 0.5)])
def test_straight_strip_kinematics(cell, speed):
    g = GridWorld(5, 1, cell_size=cell, goal=4)
    traj, m = rollout(FixedPolicy(east_policy(g)), g, UniformField(), ZERO, 0, speed=speed)
    assert traj.outcome == "reached-goal"
    assert m.path_length == pytest.approx(4 * cell, rel=1e-12)
    assert m.travel_time == pytest.approx(4 * cell / speed, rel=1e-12)
    assert list(traj.states) == [0, 1, 2, 3, 4]
    assert list(traj.actions) == [E, E, E, E, -1]


def _vortex_scenario(**kw):
    g = GridWorld(6, 6, goal=35)
    return Scenario(g, make_vortex((3, 3), 0.1, angular_rate=0.3, orbit_radius=1.0), s0=0, **kw)


@pytest.mark.parametrize("solver", ["mdp", "tvmdp"])
def test_seed_determinism(solver):
    sc = _vortex_scenario()
    a, ma = sc.run(solver, 7)
    b, mb = sc.run(solver, 7)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.actions, b.actions)
    assert ma.to_dict(timings=False) == mb.to_dict(timings=False)
    c, _ = sc.run(solver, 8)
    assert not np.array_equal(a.positions, c.positions)


def test_trajectory_invariants():
    sc = _vortex_scenario(noise=NoiseConfig.isotropic(0.3, 0.3))
    g = sc.grid
    for seed in range(5):
        traj, m = sc.run("mdp", seed)
        assert traj.times[0] == sc.t0 and traj.states[0] == sc.s0
        assert np.all(np.diff(traj.times) > 0)
        assert np.all(traj.positions >= g.lower_bound) and np.all(traj.positions <= g.upper_bound)
        assert m.travel_time == pytest.approx((len(traj) - 1) * 1.0)
        if traj.outcome == "reached-goal":
            assert traj.states[-1] == g.goal
        for name in ("path_length", "travel_time", "compute_time", "linear_solve_time", "replan_count"):
            assert getattr(m, name) >= 0
        assert m.linear_solve_time <= m.compute_time


def test_timeout_is_reported_not_raised():
    g = GridWorld(5, 1, goal=4)
    mask = np.zeros((5, 9), dtype=bool)
    mask[:, 8] = True  # idle forever
    traj, m = rollout(FixedPolicy(Policy(mask)), g, UniformField(), ZERO, 0, timeout=7)
    assert traj.outcome == "timeout" and m.outcome == "timeout"
    assert m.steps == 7 and m.travel_time == 7.0


def test_zero_noise_follows_deterministic_kinematics():
    g = GridWorld(7, 7, goal=48)
    w = np.array([0.15, 0.0])
    sc = Scenario(g, UniformField(tuple(w)), noise=NoiseConfig.isotropic(0.05, 0.05))
    planner = sc.planner("mdp")
    traj, _ = rollout(planner, g, sc.field, ZERO, 0, seed=3)
    assert traj.outcome == "reached-goal"
    x = g.state_center(0)
    for k, a in enumerate(traj.actions[:-1]):
        assert a in planner.actions(int(traj.states[k]), 0.0)
        d = np.array([np.sin(np.pi / 4 * a), np.cos(np.pi / 4 * a)]) if a < 8 else np.zeros(2)
        x = np.clip(x + d + w, g.lower_bound, g.upper_bound)
        assert np.allclose(traj.positions[k + 1], x, atol=1e-12)


def test_rollout_replans_tvmdp_each_hop():
    sc = _vortex_scenario()
    traj, m = sc.run("tvmdp", 0, replan_interval=1)
    assert m.replan_count == len(traj) - 1
    _, m2 = sc.run("tvmdp", 0, replan_interval=3)
    assert m2.replan_count < m.replan_count


def _metric(length, time=1.0):
    return RunMetrics(length, time, 0.5, 1, 0.1)


def test_aggregate_examples():
    one = aggregate([_metric(10.0)])
    assert one["path_length"]["mean"] == 10.0 and one["path_length"]["std"] == 0.0
    two = aggregate([_metric(10.0), _metric(20.0)])
    assert two["path_length"]["mean"] == 15.0
    assert two["path_length"]["min"] == 10.0 and two["path_length"]["max"] == 20.0
    with pytest.raises(ValueError):
        aggregate([])


def test_aggregate_matches_statistics_module():
    sc = Scenario(GridWorld(5, 5, goal=24), UniformField((0.1, 0.1)))
    runs = [sc.run("mdp", seed)[1] for seed in range(30)]
    summary = aggregate(runs)
    for name in ("path_length", "travel_time"):
        vals = [getattr(r, name) for r in runs]
        assert summary[name]["mean"] == pytest.approx(statistics.fmean(vals), rel=1e-12)
        assert summary[name]["std"] == pytest.approx(statistics.stdev(vals), rel=1e-12)
    assert summary["n"] == 30


def test_trajectory_csv_round_trip(tmp_path):
    sc = _vortex_scenario(noise=NoiseConfig.isotropic(0.3, 0.2))
    traj, _ = sc.run("mdp", 4)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    back = read_trajectory_csv(path)
    assert np.array_equal(back.times, traj.times)
    assert np.array_equal(back.positions, traj.positions)
    assert np.array_equal(back.states, traj.states)
    assert np.array_equal(back.actions, traj.actions)
    assert path.read_text().splitlines()[0] == "t,x,y,state,action"
