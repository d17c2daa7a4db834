import numpy as np
import pytest

from oracles import nearest_center
from tvmdp.gridworld import ACTION_NAMES, IDLE, OPPOSITE, UNIT_DIRECTIONS, GridWorld, make_actions


def test_state_center_examples(grid10):
    assert np.array_equal(grid10.state_center(0), [0.5, 0.5])
    assert np.array_equal(grid10.state_center(11), [1.5, 1.5])
    with pytest.raises(ValueError):
        grid10.state_center(100)


def test_round_trip_every_state(grid10):
    for s in grid10.states:
        assert grid10.locate(grid10.state_center(s)) == s


def test_locate_matches_brute_force(grid10, rng):
    pts = rng.uniform(0.0, 10.0, size=(2000, 2))
    for x in pts:
        assert grid10.locate(x) == nearest_center(grid10.centers, x)
    assert grid10.locate([1.4, 0.6]) == 1


def test_locate_clamps_outside(grid10):
    assert grid10.locate([-5.0, -5.0]) == 0
    assert grid10.locate([50.0, 50.0]) == 99
    assert np.all(grid10.clamp([-5.0, 20.0]) == [0.0, 10.0])


def test_locate_tie_goes_to_smaller_id(grid10):
    # exactly between centers 0 and 1
    assert grid10.locate([1.0, 0.5]) == 0
    assert grid10.locate([1.0, 1.0]) == 0


def test_neighbors_counts(grid10):
    interior = grid10.neighbors(55)
    assert len(interior) == 9
    assert (IDLE, 55) in interior
    corner = dict(grid10.neighbors(0))
    assert {ACTION_NAMES[a] for a in corner} == {"N", "NE", "E", "idle"}


def test_surrounded_state_only_idles():
    g = GridWorld(5, 5, goal=0, obstacles={6, 7, 8, 11, 13, 16, 17, 18})
    assert g.neighbors(12) == [(IDLE, 12)]


def test_neighbor_symmetry():
    g = GridWorld(6, 5, goal=0, obstacles={7, 14, 22})
    table = g.successor_table
    for s in g.states:
        for a in range(8):
            t = table[s, a]
            if t >= 0:
                assert table[t, OPPOSITE[a]] == s


def test_state_count_and_validation():
    g = GridWorld(4, 3, goal=11, obstacles={5})
    assert g.n_states == 11
    assert not g.is_valid(5)
    with pytest.raises(ValueError):
        GridWorld(4, 3, goal=5, obstacles={5})
    with pytest.raises(ValueError):
        GridWorld(0, 3)


def test_action_directions():
    norms = np.linalg.norm(UNIT_DIRECTIONS, axis=1)
    assert np.allclose(norms[:8], 1.0, atol=1e-9)
    assert np.array_equal(UNIT_DIRECTIONS[IDLE], [0.0, 0.0])
    acts = make_actions(2.0)
    assert np.allclose(acts[2].velocity, [2.0, 0.0])
