"""Discrete grid state space with a continuous-coordinate embedding.

States are cell ids in row-major order from the origin cell: ``id = row * width + col``.
Cell centers sit at ``origin + cell_size * (col, row)``. Blocked cells keep their
id slot but are not states.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Compass moves first, idle last. Row index grows with +y, so N is (0, +1).
ACTION_NAMES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW", "idle")
ACTION_OFFSETS = np.array(
    [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 0)],
    dtype=np.int64,
)
IDLE = 8
N_ACTIONS = 9
# opposite[a] reverses the move of a; idle is its own opposite.
OPPOSITE = np.array([4, 5, 6, 7, 0, 1, 2, 3, 8], dtype=np.int64)


@dataclass(frozen=True)
class Action:
    id: int
    unit_direction: np.ndarray
    speed: float

    @property
    def name(self) -> str:
        return ACTION_NAMES[self.id]

    @property
    def velocity(self) -> np.ndarray:
        return self.unit_direction * self.speed


def _unit_directions() -> np.ndarray:
    offs = ACTION_OFFSETS.astype(float)
    norms = np.linalg.norm(offs, axis=1)
    norms[IDLE] = 1.0
    return offs / norms[:, None]


UNIT_DIRECTIONS = _unit_directions()


def make_actions(speed: float = 1.0) -> tuple[Action, ...]:
    return tuple(Action(a, UNIT_DIRECTIONS[a].copy(), float(speed)) for a in range(N_ACTIONS))


@dataclass(frozen=True, eq=False)
class GridWorld:
    """Rectangular grid of ``width x height`` cells.

    Parameters
    ----------
    width, height : int
        Cell counts along x and y.
    cell_size : float
        Edge length of a cell in meters.
    origin : tuple of float
        Continuous coordinate of the center of cell (0, 0).
    goal : int
        Goal state id.
    obstacles : frozenset of int
        Blocked cell ids. Empty by default.
    """

    width: int
    height: int
    cell_size: float = 1.0
    origin: tuple[float, float] = (0.5, 0.5)
    goal: int = 0
    obstacles: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.width}x{self.height}")
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "obstacles", frozenset(int(s) for s in self.obstacles))
        for s in self.obstacles:
            if not 0 <= s < self.n_cells:
                raise ValueError(f"obstacle id {s} outside grid of {self.n_cells} cells")
        if not 0 <= self.goal < self.n_cells or self.goal in self.obstacles:
            raise ValueError(f"goal {self.goal} is not a valid, unblocked state")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @cached_property
    def blocked(self) -> np.ndarray:
        mask = np.zeros(self.n_cells, dtype=bool)
        mask[list(self.obstacles)] = True
        return mask

    @cached_property
    def states(self) -> np.ndarray:
        """Valid (unblocked) state ids, ascending."""
        return np.flatnonzero(~self.blocked)

    @property
    def n_states(self) -> int:
        return int(self.states.size)

    def is_valid(self, s) -> bool:
        return isinstance(s, (int, np.integer)) and 0 <= s < self.n_cells and not self.blocked[s]

    def _check(self, s) -> int:
        if not self.is_valid(s):
            raise ValueError(f"invalid state id {s!r} for a {self.width}x{self.height} grid")
        return int(s)

    def col_row(self, s: int) -> tuple[int, int]:
        s = self._check(s)
        return s % self.width, s // self.width

    def state_id(self, col: int, row: int) -> int:
        return self._check(row * self.width + col)

    @cached_property
    def centers(self) -> np.ndarray:
        """``(n_cells, 2)`` array of cell-center coordinates, blocked cells included."""
        ids = np.arange(self.n_cells)
        cr = np.stack([ids % self.width, ids // self.width], axis=1).astype(float)
        return np.asarray(self.origin) + self.cell_size * cr

    def state_center(self, s: int) -> np.ndarray:
        return self.centers[self._check(s)].copy()

    @property
    def lower_bound(self) -> np.ndarray:
        return np.asarray(self.origin) - 0.5 * self.cell_size

    @property
    def upper_bound(self) -> np.ndarray:
        return np.asarray(self.origin) + self.cell_size * (
            np.array([self.width, self.height]) - 0.5
        )

    def clamp(self, x) -> np.ndarray:
        """Clamp a position into the arena rectangle."""
        return np.clip(np.asarray(x, dtype=float), self.lower_bound, self.upper_bound)

    def locate(self, x) -> int:
        """Nearest cell center to ``x``; ties go to the smaller state id.

        Positions outside the grid clamp to the nearest boundary cell.
        """
        x = np.asarray(x, dtype=float)
        rel = (x - np.asarray(self.origin)) / self.cell_size
        col = self._nearest_index(rel[0], self.width)
        row = self._nearest_index(rel[1], self.height)
        s = row * self.width + col
        if self.blocked[s]:
            valid = self.states
            d2 = np.sum((self.centers[valid] - x) ** 2, axis=1)
            s = int(valid[np.argmin(d2)])
        return int(s)

    @staticmethod
    def _nearest_index(u: float, n: int) -> int:
        # Half-integers round down, which favors the smaller id on exact ties.
        k = int(np.ceil(u - 0.5))
        return min(max(k, 0), n - 1)

    @cached_property
    def successor_table(self) -> np.ndarray:
        """``(n_cells, 9)`` intended successor per action, ``-1`` where inadmissible."""
        ids = np.arange(self.n_cells)
        col = ids % self.width
        row = ids // self.width
        tc = col[:, None] + ACTION_OFFSETS[None, :, 0]
        tr = row[:, None] + ACTION_OFFSETS[None, :, 1]
        inside = (tc >= 0) & (tc < self.width) & (tr >= 0) & (tr < self.height)
        target = np.where(inside, tr * self.width + tc, -1)
        target[target >= 0] = np.where(self.blocked[target[target >= 0]], -1, target[target >= 0])
        target[self.blocked] = -1
        return target

    @cached_property
    def admissible(self) -> np.ndarray:
        return self.successor_table >= 0

    def neighbors(self, s: int) -> list[tuple[int, int]]:
        """``(action id, successor id)`` pairs for every admissible action at ``s``."""
        s = self._check(s)
        row = self.successor_table[s]
        return [(a, int(row[a])) for a in range(N_ACTIONS) if row[a] >= 0]

    def action_distance(self) -> np.ndarray:
        """Center-to-center distance for each action move, in meters."""
        return np.linalg.norm(ACTION_OFFSETS, axis=1) * self.cell_size
