"""Continuous 2-D grid-world navigation with clock-direction moves.

The agent moves inside a ``width x height`` box.  A move that would leave
the box stops on the border.  Entering the goal cell ends the episode with
a bonus; touching an obstacle cell stops the agent at the crossing point and
ends the episode with a penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Optional, Sequence, Tuple

import numpy as np

from ..actions import ParametricActionModel, clock_navigation_model, navigation_operator
from ..errors import ConfigurationError
from ..memory import GridGeometry
from .base import Environment

__all__ = ["NavRewards", "NavWorld", "nav_step", "nav_default_configs", "neighbours"]

Cell = Tuple[int, int]


@dataclass(frozen=True)
class NavRewards:
    step: float = -1.0
    goal: float = 100.0
    obstacle: float = -100.0

    def __post_init__(self):
        if not (self.step < 0 < self.goal and self.obstacle < 0):
            raise ConfigurationError("rewards need step < 0 < goal and obstacle < 0")


class NavWorld(Environment):
    state_dim = 2
    action_dim = 2

    def __init__(self, width: float = 5.0, height: float = 5.0, grid: Cell = (5, 5),
                 start_cell: Cell = (0, 0), goal_cell: Optional[Cell] = None,
                 obstacle_cells: Sequence[Cell] = (), rewards: NavRewards = NavRewards(),
                 max_steps: int = 100, action_model: Optional[ParametricActionModel] = None,
                 name: str = "custom"):
        self.width = float(width)
        self.height = float(height)
        self.grid = (int(grid[0]), int(grid[1]))
        self.start_cell = tuple(int(v) for v in start_cell)
        goal = goal_cell if goal_cell is not None else (self.grid[0] - 1, self.grid[1] - 1)
        self.goal_cell = tuple(int(v) for v in goal)
        self.obstacle_cells: FrozenSet[Cell] = frozenset(tuple(int(v) for v in c) for c in obstacle_cells)
        self.rewards = rewards
        self.max_steps = int(max_steps)
        self.action_model = action_model or clock_navigation_model()
        self.name = name
        self._validate()
        self.geometry = GridGeometry([0.0, 0.0], [self.width, self.height], self.grid)
        self.cell_w = self.width / self.grid[0]
        self.cell_h = self.height / self.grid[1]
        self.last_event = ""

    def _validate(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError("world extents must be positive")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be at least 1")
        if self.action_model.action_dim != 2:
            raise ConfigurationError("navigation needs a (dr, phi) action model")
        cells = [self.start_cell, self.goal_cell, *self.obstacle_cells]
        for c in cells:
            if len(c) != 2 or not (0 <= c[0] < self.grid[0] and 0 <= c[1] < self.grid[1]):
                raise ConfigurationError(f"cell {c} lies outside the {self.grid} grid")
        if self.start_cell == self.goal_cell:
            raise ConfigurationError("start and goal must be different cells")
        if self.goal_cell in self.obstacle_cells or self.start_cell in self.obstacle_cells:
            raise ConfigurationError("start and goal cells cannot be obstacles")

    def cell_at(self, pos) -> Cell:
        return self.geometry.cell_of(pos)

    def cell_center(self, cell: Cell) -> np.ndarray:
        return np.array([(cell[0] + 0.5) * self.cell_w, (cell[1] + 0.5) * self.cell_h])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(2)
        return np.array([(self.start_cell[0] + u[0]) * self.cell_w,
                         (self.start_cell[1] + u[1]) * self.cell_h])

    def step(self, state, x_a, rng=None):
        pos, r, terminal, event = nav_step(state, x_a, self)
        self.last_event = event
        return pos, r, terminal

    def to_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height, "grid": list(self.grid),
            "start_cell": list(self.start_cell), "goal_cell": list(self.goal_cell),
            "obstacle_cells": sorted(list(c) for c in self.obstacle_cells),
            "rewards": {"step": self.rewards.step, "goal": self.rewards.goal,
                        "obstacle": self.rewards.obstacle},
            "max_steps": self.max_steps,
        }


def _ray_exit(p: np.ndarray, d: np.ndarray, hi: np.ndarray) -> float:
    """Largest t in [0, 1] keeping ``p + t d`` inside ``[0, hi]``."""
    t = 1.0
    for k in range(2):
        # divide only when the bound binds, so tiny components cannot overflow
        end = p[k] + t * d[k]
        if end > hi[k]:
            t = (hi[k] - p[k]) / d[k]
        elif end < 0.0:
            t = -p[k] / d[k]
    return max(t, 0.0)


def _crossings(p: np.ndarray, d: np.ndarray, t_end: float, sizes) -> list:
    """Parameters in (0, t_end) where the segment crosses a grid line."""
    ts = []
    for k in range(2):
        if d[k] == 0:
            continue
        a, b = p[k], p[k] + t_end * d[k]
        lo, hi = min(a, b), max(a, b)
        first = math.floor(lo / sizes[k]) + 1
        last = math.ceil(hi / sizes[k]) - 1
        for m in range(first, last + 1):
            t = (m * sizes[k] - p[k]) / d[k]
            if 0.0 < t < t_end:
                ts.append(t)
    return sorted(ts)


def nav_step(pos, x_a, world: NavWorld):
    """Move by the action vector; returns ``(pos, reward, terminal, event)``.

    ``event`` is ``"goal"``, ``"obstacle"`` or ``"move"``.
    """
    p = np.asarray(pos, dtype=float)
    target = navigation_operator(p, x_a)
    d = target - p
    hi = np.array([world.width, world.height])
    t_end = _ray_exit(p, d, hi)
    sizes = (world.cell_w, world.cell_h)
    rw = world.rewards

    # walk the sub-segments between grid-line crossings
    bounds = [0.0] + _crossings(p, d, t_end, sizes) + [t_end]
    for t0, t1 in zip(bounds[:-1], bounds[1:]):
        if t1 <= t0:
            continue
        cell = world.cell_at(p + 0.5 * (t0 + t1) * d)
        if cell in world.obstacle_cells:
            stop = np.clip(p + t0 * d, 0.0, hi)
            return stop, rw.step + rw.obstacle, True, "obstacle"
        if cell == world.goal_cell:
            return np.clip(p + t1 * d, 0.0, hi), rw.step + rw.goal, True, "goal"

    final = np.clip(p + t_end * d, 0.0, hi)
    cell = world.cell_at(final)
    if cell == world.goal_cell:
        return final, rw.step + rw.goal, True, "goal"
    if cell in world.obstacle_cells:
        return final, rw.step + rw.obstacle, True, "obstacle"
    return final, rw.step, False, "move"


def neighbours(cell: Cell, world: NavWorld) -> list:
    """The up-to-eight cells surrounding ``cell``."""
    out = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx == dy == 0:
                continue
            c = (cell[0] + dx, cell[1] + dy)
            if 0 <= c[0] < world.grid[0] and 0 <= c[1] < world.grid[1]:
                out.append(c)
    return out


NAV_9X9_OBSTACLES = (
    (2, 1), (2, 2), (2, 3),
    (4, 4), (5, 4), (6, 4),
    (1, 6), (2, 6),
    (5, 0), (5, 1),
    (7, 6), (7, 7),
    (4, 7), (4, 8),
)


def nav_default_configs() -> Dict[str, NavWorld]:
    """The three stock layouts: open 5x5, 7x5 with two centre obstacles, 9x9 maze."""
    return {
        "nav_5x5": NavWorld(5.0, 5.0, (5, 5), (0, 0), (4, 4), (), max_steps=100, name="nav_5x5"),
        "nav_7x5": NavWorld(7.0, 5.0, (7, 5), (0, 0), (6, 4), ((2, 2), (3, 2)),
                            max_steps=150, name="nav_7x5"),
        "nav_9x9": NavWorld(9.0, 9.0, (9, 9), (0, 0), (8, 8), NAV_9X9_OBSTACLES,
                            max_steps=300, name="nav_9x9"),
    }
