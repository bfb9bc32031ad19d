"""Parametric action models.

A primitive action is a constrained random vector: every coordinate has a
nominal target, a feasible support ``[lo, hi]`` and Gaussian noise.  The model
provides the two maps between primitive indices and action vectors:

* :meth:`ParametricActionModel.sample_action` resolves a primitive into one
  noisy realisation that lies inside its feasible region.
* :meth:`ParametricActionModel.resolve_primitive` classifies a vector back to
  the primitive whose region contains it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError

__all__ = [
    "CoordinateSpec",
    "PrimitiveSpec",
    "ParametricActionModel",
    "yield_prob",
    "apply_operator",
    "navigation_operator",
    "clock_angle",
    "clock_navigation_model",
]

TWO_PI = 2.0 * math.pi
MAX_RETRIES = 32
_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class CoordinateSpec:
    """One action coordinate: nominal value, feasible support and noise level.

    For wrapping (angular) coordinates the support is an arc ``[lo, hi]`` with
    ``hi - lo <= 2*pi`` and values are compared modulo ``2*pi``.
    """

    target: float
    lo: float
    hi: float
    noise_sigma: float = 0.0
    wraps: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigurationError(f"empty support [{self.lo}, {self.hi}]")
        if not self.lo <= self.target <= self.hi:
            raise ConfigurationError(f"target {self.target} outside [{self.lo}, {self.hi}]")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be non-negative")
        if self.wraps and self.hi - self.lo > TWO_PI:
            raise ConfigurationError("a wrapping support cannot exceed 2*pi")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def to_dict(self) -> dict:
        return {"target": self.target, "support": [self.lo, self.hi],
                "sigma": self.noise_sigma, "wraps": self.wraps}

    @classmethod
    def from_dict(cls, d: dict) -> "CoordinateSpec":
        lo, hi = d["support"]
        return cls(float(d["target"]), float(lo), float(hi),
                   float(d.get("sigma", 0.0)), bool(d.get("wraps", False)))


def _nearest_turn(value: float, c: CoordinateSpec) -> float:
    """Shift an angular value by whole turns so it lies closest to the support centre."""
    centre = 0.5 * (c.lo + c.hi)
    return centre + (value - centre + math.pi) % TWO_PI - math.pi


def yield_prob(value: float, c: CoordinateSpec) -> float:
    """Probability that ``value + w``, ``w ~ N(0, sigma^2)``, lands in the support."""
    if c.wraps:
        value = _nearest_turn(value, c)
    if c.noise_sigma == 0.0:
        return 1.0 if c.lo <= value <= c.hi else 0.0
    return float(ndtr((c.hi - value) / c.noise_sigma) - ndtr((c.lo - value) / c.noise_sigma))


@dataclass(frozen=True)
class PrimitiveSpec:
    index: int
    coords: tuple
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))


class ParametricActionModel:
    """A finite set of primitives sharing one action-parameter space."""

    def __init__(self, primitives: Sequence[PrimitiveSpec], yield_threshold: float = 0.95):
        primitives = sorted(primitives, key=lambda p: p.index)
        if not primitives:
            raise ConfigurationError("an action model needs at least one primitive")
        if not 0.0 <= yield_threshold <= 1.0:
            raise ConfigurationError("yield_threshold must lie in [0, 1]")
        n = len(primitives[0].coords)
        if any(len(p.coords) != n for p in primitives):
            raise ConfigurationError("every primitive needs the same number of coordinates")
        if len({p.index for p in primitives}) != len(primitives):
            raise ConfigurationError("primitive indices must be unique")
        self.primitives = tuple(primitives)
        self.yield_threshold = float(yield_threshold)
        self.action_dim = n
        self.indices = tuple(p.index for p in primitives)
        self._pos = {p.index: k for k, p in enumerate(primitives)}

        self._lo = np.array([[c.lo for c in p.coords] for p in primitives])
        self._hi = np.array([[c.hi for c in p.coords] for p in primitives])
        self._target = np.array([[c.target for c in p.coords] for p in primitives])
        self._sigma = np.array([[c.noise_sigma for c in p.coords] for p in primitives])
        self._wraps = np.array([[c.wraps for c in p.coords] for p in primitives])
        self._check_disjoint()

    def _check_disjoint(self):
        P = len(self.primitives)
        for a in range(P):
            for b in range(a + 1, P):
                separated = False
                for j in range(self.action_dim):
                    ca, cb = self.primitives[a].coords[j], self.primitives[b].coords[j]
                    if ca.wraps:
                        lo_b = _nearest_turn(cb.lo, ca)
                        overlap = min(ca.hi, lo_b + cb.width) - max(ca.lo, lo_b)
                        # the arc may also overlap after one more turn
                        overlap = max(overlap, min(ca.hi, lo_b + cb.width - TWO_PI) - ca.lo,
                                      ca.hi - max(ca.lo, lo_b + TWO_PI))
                    else:
                        overlap = min(ca.hi, cb.hi) - max(ca.lo, cb.lo)
                    if overlap <= _EDGE_TOL:
                        separated = True
                        break
                if not separated:
                    raise ConfigurationError(
                        f"primitives {self.indices[a]} and {self.indices[b]} have "
                        "overlapping feasible regions"
                    )

    def __len__(self) -> int:
        return len(self.primitives)

    def _position(self, index: int) -> int:
        try:
            return self._pos[index]
        except KeyError:
            raise ConfigurationError(f"unknown primitive index {index}") from None

    def spec(self, index: int) -> PrimitiveSpec:
        return self.primitives[self._position(index)]

    def target_vector(self, index: int) -> np.ndarray:
        """The noiseless action vector of a primitive."""
        return self._target[self._position(index)].copy()

    def yield_ok(self) -> bool:
        """True when every nominal target meets the yield threshold."""
        return all(yield_prob(c.target, c) >= self.yield_threshold
                   for p in self.primitives for c in p.coords)

    def sample_action(self, index: int, rng: np.random.Generator) -> np.ndarray:
        """Draw a feasible noisy realisation of primitive ``index``.

        Rejection-resampled up to ``MAX_RETRIES`` times per coordinate, then
        clamped to the nearest support endpoint.
        """
        k = self._position(index)
        target, sigma = self._target[k], self._sigma[k]
        lo, hi, wraps = self._lo[k], self._hi[k], self._wraps[k]
        out = target.copy()
        pending = sigma > 0.0
        tries = 0
        while pending.any() and tries < MAX_RETRIES:
            idx = np.flatnonzero(pending)
            draw = target[idx] + sigma[idx] * rng.standard_normal(idx.size)
            w = wraps[idx]
            draw[w] = lo[idx][w] + np.mod(draw[w] - lo[idx][w], TWO_PI)
            ok = (draw >= lo[idx]) & (draw <= hi[idx])
            out[idx[ok]] = draw[ok]
            pending[idx[ok]] = False
            tries += 1
        if pending.any():
            idx = np.flatnonzero(pending)
            draw = target[idx] + sigma[idx] * rng.standard_normal(idx.size)
            out[idx] = np.clip(draw, lo[idx], hi[idx])
        return out

    def _distances(self, x_a: np.ndarray) -> np.ndarray:
        """Per-primitive, per-coordinate distance to the support in support widths."""
        v = np.broadcast_to(x_a, self._lo.shape)
        width = self._hi - self._lo
        gap = np.maximum(np.maximum(self._lo - v, v - self._hi), 0.0)
        if self._wraps.any():
            u = self._lo + np.mod(v - self._lo, TWO_PI)
            arc_gap = np.where(u <= self._hi + _EDGE_TOL, 0.0,
                               np.minimum(u - self._hi, self._lo + TWO_PI - u))
            gap = np.where(self._wraps, arc_gap, gap)
        return gap / width

    def resolve_primitive(self, x_a) -> int:
        """Index of the primitive whose feasible region contains ``x_a``.

        Ties (shared boundaries) go to the lowest index.  A vector outside
        every region maps to the primitive with the smallest summed normalised
        distance to its support.
        """
        x_a = np.asarray(x_a, dtype=float).ravel()
        if x_a.size != self.action_dim:
            raise ConfigurationError(f"action vector has {x_a.size} coordinates, expected {self.action_dim}")
        d = self._distances(x_a)
        inside = np.all(d <= _EDGE_TOL, axis=1)
        if inside.any():
            return self.indices[int(np.argmax(inside))]
        return self.indices[int(np.argmin(d.sum(axis=1)))]

    def contains(self, index: int, x_a) -> bool:
        d = self._distances(np.asarray(x_a, dtype=float).ravel())[self._position(index)]
        return bool(np.all(d <= _EDGE_TOL))

    def to_dict(self) -> dict:
        return {
            "yield_threshold": self.yield_threshold,
            "primitives": [
                {"index": p.index, "name": p.name, "coords": [c.to_dict() for c in p.coords]}
                for p in self.primitives
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParametricActionModel":
        prims = [
            PrimitiveSpec(int(p["index"]), tuple(CoordinateSpec.from_dict(c) for c in p["coords"]),
                          p.get("name", ""))
            for p in d["primitives"]
        ]
        return cls(prims, float(d.get("yield_threshold", 0.95)))


def apply_operator(state_vec, x_a, dynamics: Callable):
    """Apply the action operator defined by an environment transition hook."""
    return dynamics(np.asarray(state_vec, dtype=float), np.asarray(x_a, dtype=float))


def navigation_operator(state_vec, x_a) -> np.ndarray:
    """Displace a 2-D position by ``(dr cos(phi), dr sin(phi))``."""
    x, y = state_vec
    dr, phi = x_a
    return np.array([x + dr * math.cos(phi), y + dr * math.sin(phi)])


def clock_angle(i: int, n_directions: int = 12) -> float:
    """Direction of clock primitive ``i`` as a counter-clockwise angle from +x.

    Primitive ``n/4`` (3 o'clock for twelve directions) points due east.
    """
    return math.pi / 2 - i * TWO_PI / n_directions


def clock_navigation_model(n_directions: int = 12, step_target: float = 1.0,
                           step_support=(0.8, 1.2), step_sigma: float = 0.1,
                           angle_sigma: float = math.pi / 24,
                           yield_threshold: float = 0.95) -> ParametricActionModel:
    """Clock-direction moves parameterised by ``(dr, phi)``.

    Primitive ``i`` spans the arc ``clock_angle(i) +/- pi/n``.  Arc supports
    are laid out contiguously from primitive 1 down to primitive ``n``, so
    every sampled angle lies in ``[clock_angle(n) - pi/n, clock_angle(1) + pi/n]``.
    """
    half = math.pi / n_directions
    lo_r, hi_r = step_support
    prims = []
    for i in range(1, n_directions + 1):
        phi = clock_angle(i, n_directions)
        prims.append(PrimitiveSpec(i, (
            CoordinateSpec(step_target, lo_r, hi_r, step_sigma),
            CoordinateSpec(phi, phi - half, phi + half, angle_sigma, wraps=True),
        ), name=f"{i} o'clock"))
    return ParametricActionModel(prims, yield_threshold)
