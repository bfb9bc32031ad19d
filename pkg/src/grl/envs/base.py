"""Interface shared by the learners' environments."""

from __future__ import annotations

import abc

import numpy as np

from ..actions import ParametricActionModel
from ..memory import GridGeometry


class Environment(abc.ABC):
    """Episodic world exposing continuous states and parametric actions.

    ``action_vector`` realises a primitive as an action vector (sampling its
    noise or reading live resource levels), ``step`` applies that vector.
    After each step ``last_event`` names what happened, e.g. ``"goal"``.
    """

    state_dim: int
    action_dim: int
    action_model: ParametricActionModel
    geometry: GridGeometry
    max_steps: int
    last_event: str = ""

    @property
    def primitives(self) -> tuple:
        return self.action_model.indices

    @abc.abstractmethod
    def reset(self, rng: np.random.Generator) -> np.ndarray:
        ...

    def action_vector(self, primitive: int, rng: np.random.Generator) -> np.ndarray:
        return self.action_model.sample_action(primitive, rng)

    def action_vectors(self, rng: np.random.Generator) -> np.ndarray:
        """One realisation per primitive, rows in ``primitives`` order."""
        return np.vstack([self.action_vector(i, rng) for i in self.primitives])

    @abc.abstractmethod
    def step(self, state: np.ndarray, x_a: np.ndarray, rng: np.random.Generator):
        """Return ``(next_state, reward, terminal)``."""
