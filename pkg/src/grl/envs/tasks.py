"""Task-to-server assignment with drifting server resources.

Every episode is a single decision: a task arrives, the agent commits to one
server's current resource profile, and the assignment either succeeds or
fails.  A task succeeds only on a server of the same service type that is
available and has enough memory and a free job slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..actions import CoordinateSpec, ParametricActionModel, PrimitiveSpec
from ..errors import ConfigurationError
from ..memory import GridGeometry
from .base import Environment

__all__ = [
    "SERVER_FEATURES",
    "TASK_FEATURES",
    "ServerSpec",
    "TaskServerWorld",
    "default_servers",
    "assign_task",
    "matchmaker_policy",
    "random_policy",
]

TASK_FEATURES = ("task_type", "size", "expected_runtime")
SERVER_FEATURES = ("service_type", "pct_cpu", "memory", "disk", "cpu_speed", "job_slots")
_MEM, _SPEED, _SLOTS = 2, 4, 5


@dataclass(frozen=True)
class ServerSpec:
    index: int
    service_type: int
    features: tuple  # CoordinateSpec per drifting feature, SERVER_FEATURES[1:] order
    availability: float = 0.8

    def __post_init__(self):
        if len(self.features) != len(SERVER_FEATURES) - 1:
            raise ConfigurationError(f"server {self.index} needs {len(SERVER_FEATURES) - 1} drifting features")
        if not 0.0 <= self.availability <= 1.0:
            raise ConfigurationError("availability must be a probability")

    def coords(self) -> tuple:
        t = float(self.service_type)
        return (CoordinateSpec(t, t - 0.25, t + 0.25, 0.0),) + tuple(self.features)


def _server(index: int, stype: int, fast: bool, availability: float = 0.8) -> ServerSpec:
    speed = CoordinateSpec(3.0, 2.6, 3.4, 0.2) if fast else CoordinateSpec(1.8, 1.4, 2.2, 0.2)
    return ServerSpec(index, stype, (
        CoordinateSpec(10.0, 0.0, 30.0, 5.0),    # pct_cpu
        CoordinateSpec(12.0, 2.0, 16.0, 2.0),    # memory
        CoordinateSpec(100.0, 20.0, 200.0, 20.0),  # disk
        speed,                                   # cpu_speed
        CoordinateSpec(4.0, 0.0, 8.0, 1.5),      # job_slots
    ), availability)


def default_servers(availability: float = 0.8) -> List[ServerSpec]:
    """Six servers, two per service type, one fast and one slow in each pair."""
    return [
        _server(1, 1, True, availability), _server(2, 1, False, availability),
        _server(3, 2, True, availability), _server(4, 2, False, availability),
        _server(5, 3, True, availability), _server(6, 3, False, availability),
    ]


@dataclass(frozen=True)
class TaskLaw:
    types: tuple = (1, 2, 3)
    size_sigma: float = 0.15
    runtime_sigma: float = 0.05


@dataclass(frozen=True)
class TaskRewards:
    success_base: float = 100.0
    success_bonus: float = 40.0
    failure: float = -50.0
    memory_per_size: float = 2.0


def assign_task(task, snapshot, available: bool, rewards: TaskRewards = TaskRewards(),
                speed_range: Tuple[float, float] = (1.4, 3.4), memory_max: float = 16.0):
    """Reward of running ``task`` on a server in state ``snapshot``.

    Returns ``(reward, event)`` with ``event`` one of ``"success"``,
    ``"mismatch"``, ``"unavailable"`` or ``"capacity"``.  Every failure earns
    the same penalty.  Success pays ``success_base`` plus a bonus that grows
    with memory headroom and relative CPU speed.
    """
    ttype, size = task[0], task[1]
    stype, memory, speed, slots = snapshot[0], snapshot[_MEM], snapshot[_SPEED], snapshot[_SLOTS]
    if int(round(stype)) != int(round(ttype)):
        return rewards.failure, "mismatch"
    if not available:
        return rewards.failure, "unavailable"
    demand = rewards.memory_per_size * max(size, 0.0)
    if memory < demand or slots < 1.0:
        return rewards.failure, "capacity"
    headroom = np.clip((memory - demand) / max(memory_max - demand, 1e-9), 0.0, 1.0)
    lo, hi = speed_range
    speed_pct = np.clip((speed - lo) / (hi - lo), 0.0, 1.0)
    return float(rewards.success_base + rewards.success_bonus * headroom * speed_pct), "success"


class TaskServerWorld(Environment):
    """One-step episodes: a fresh task against freshly drifted servers."""

    state_dim = 3
    action_dim = 6
    max_steps = 1

    def __init__(self, servers: Optional[Sequence[ServerSpec]] = None, task_law: TaskLaw = TaskLaw(),
                 rewards: TaskRewards = TaskRewards(), yield_threshold: float = 0.95,
                 partition_counts: Tuple[int, int, int] = (3, 1, 1), name: str = "task_assign"):
        self.servers = list(servers) if servers is not None else default_servers()
        if not self.servers:
            raise ConfigurationError("at least one server is required")
        self.task_law = task_law
        self.rewards = rewards
        self.name = name
        self.action_model = ParametricActionModel(
            [PrimitiveSpec(s.index, s.coords(), f"server {s.index}") for s in self.servers],
            yield_threshold,
        )
        self.servers = sorted(self.servers, key=lambda s: s.index)
        self._order = {s.index: k for k, s in enumerate(self.servers)}
        types = task_law.types
        hi_size = max(types) * 1.5
        self.geometry = GridGeometry(
            [min(types) - 0.5, 0.0, 0.0], [max(types) + 0.5, hi_size, hi_size], partition_counts,
        )
        speeds = [s.features[_SPEED - 1] for s in self.servers]
        self.speed_range = (min(c.lo for c in speeds), max(c.hi for c in speeds))
        self.memory_max = max(s.features[_MEM - 1].hi for s in self.servers)
        self.profiles = np.vstack([[c.target for c in s.coords()] for s in self.servers])
        self.available = np.ones(len(self.servers), dtype=bool)
        self.task: Optional[np.ndarray] = None
        self.last_event = ""
        self.last_server: Optional[int] = None

    def task_arrival(self, rng: np.random.Generator) -> np.ndarray:
        law = self.task_law
        ttype = float(law.types[int(rng.integers(len(law.types)))])
        noise = rng.standard_normal(2)
        size = ttype + law.size_sigma * noise[0]
        runtime = ttype * (1.0 + law.runtime_sigma * noise[1])
        return np.array([ttype, size, runtime])

    def server_tick(self, rng: np.random.Generator) -> np.ndarray:
        """Redraw every drifting feature and every availability flag."""
        for k, s in enumerate(self.servers):
            for j, c in enumerate(s.features, start=1):
                v = c.target + c.noise_sigma * rng.standard_normal() if c.noise_sigma > 0 else c.target
                self.profiles[k, j] = min(max(v, c.lo), c.hi)
        self.available = rng.random(len(self.servers)) < np.array([s.availability for s in self.servers])
        return self.profiles.copy()

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.server_tick(rng)
        self.task = self.task_arrival(rng)
        return self.task.copy()

    def action_vector(self, primitive: int, rng=None) -> np.ndarray:
        return self.profiles[self._order[primitive]].copy()

    def action_vectors(self, rng=None) -> np.ndarray:
        return self.profiles.copy()

    def service_types(self) -> np.ndarray:
        return np.array([s.service_type for s in self.servers])

    def step(self, state, x_a, rng=None):
        server = self.action_model.resolve_primitive(x_a)
        k = self._order[server]
        reward, event = assign_task(state, x_a, bool(self.available[k]), self.rewards,
                                    self.speed_range, self.memory_max)
        self.last_event = event
        self.last_server = server
        return np.asarray(state, dtype=float).copy(), reward, True


def matchmaker_policy(env: TaskServerWorld, task, rng: np.random.Generator):
    """Pick uniformly among type-matched servers; returns ``(primitive, fell_back)``."""
    idx = np.flatnonzero(env.service_types() == int(round(task[0])))
    if idx.size == 0:
        return random_policy(env, task, rng)[0], True
    return env.servers[int(idx[rng.integers(idx.size)])].index, False


def random_policy(env: TaskServerWorld, task, rng: np.random.Generator):
    return env.servers[int(rng.integers(len(env.servers)))].index, False
