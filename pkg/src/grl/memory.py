"""Working memory of experience particles.

Particles live in the cells of an axis-aligned grid over the state space.
Each cell holds at most ``pos_quota`` positive and ``neg_quota`` negative
particles (polarity is the sign of the TD value recorded at creation).  New
particles are inserted while a cell has room and afterwards compete with
correlated particles of the same polarity through :meth:`WorkingMemory.update`.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, PreconditionError
from .kernels import AugmentedState, KernelHyperparameters, correlation_matrix, stack_joint

__all__ = [
    "GridGeometry",
    "ExperienceParticle",
    "UpdateKind",
    "UpdateOutcome",
    "WorkingMemory",
    "partition_of",
    "make_hypothetical",
    "associate",
    "memory_update",
    "local_candidates",
    "save_snapshot",
    "load_snapshot",
]


class GridGeometry:
    """Half-open grid cells over a box; points outside are clamped to edge cells."""

    def __init__(self, lows: Sequence[float], highs: Sequence[float], counts: Sequence[int]):
        self.lows = np.asarray(lows, dtype=float).ravel()
        self.highs = np.asarray(highs, dtype=float).ravel()
        self.counts = tuple(int(c) for c in counts)
        if not (self.lows.size == self.highs.size == len(self.counts)):
            raise ConfigurationError("grid lows, highs and counts must have equal length")
        if np.any(self.highs <= self.lows):
            raise ConfigurationError("every grid axis needs high > low")
        if any(c < 1 for c in self.counts):
            raise ConfigurationError("every grid axis needs at least one cell")
        self._edges = [np.linspace(lo, hi, c + 1) for lo, hi, c in zip(self.lows, self.highs, self.counts)]

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    def cell_of(self, state_vec) -> tuple:
        x = np.asarray(state_vec, dtype=float).ravel()
        if x.size != self.dim:
            raise ConfigurationError(f"state has {x.size} coordinates, grid expects {self.dim}")
        cell = []
        for v, edges, c in zip(x, self._edges, self.counts):
            # interior edges only: a point on an edge belongs to the upper cell
            k = int(np.searchsorted(edges[1:-1], v, side="right"))
            cell.append(min(max(k, 0), c - 1))
        return tuple(cell)

    def index_of_cell(self, cell: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(cell), self.counts))

    def cell_from_index(self, index: int) -> tuple:
        return tuple(int(v) for v in np.unravel_index(index, self.counts))

    def partition_of(self, state_vec) -> int:
        return self.index_of_cell(self.cell_of(state_vec))

    def cell_bounds(self, index: int):
        cell = self.cell_from_index(index)
        lo = np.array([e[k] for e, k in zip(self._edges, cell)])
        hi = np.array([e[k + 1] for e, k in zip(self._edges, cell)])
        return lo, hi

    def to_dict(self) -> dict:
        return {"lows": self.lows.tolist(), "highs": self.highs.tolist(), "counts": list(self.counts)}

    def __eq__(self, other):
        return (isinstance(other, GridGeometry) and self.counts == other.counts
                and np.array_equal(self.lows, other.lows) and np.array_equal(self.highs, other.highs))


def partition_of(state_vec, geometry: GridGeometry) -> int:
    return geometry.partition_of(state_vec)


@dataclass(eq=False)
class ExperienceParticle:
    """An augmented state with its fitness estimate and creation-time TD."""

    aug: AugmentedState
    fitness: float
    td: float
    partition_id: Optional[int] = None
    cluster_id: Optional[int] = None
    birth_step: int = 0

    def __post_init__(self):
        self.fitness = float(self.fitness)
        self.td = float(self.td)
        if not np.isfinite(self.fitness):
            raise PreconditionError("particle fitness must be finite")

    @property
    def positive(self) -> bool:
        return self.td >= 0.0

    def __repr__(self):
        sign = "+" if self.positive else "-"
        return (f"ExperienceParticle({sign}, x={self.aug.joint.round(3).tolist()}, "
                f"q={self.fitness:.4g}, cell={self.partition_id}, cluster={self.cluster_id})")


def make_hypothetical(state_vec, donor: ExperienceParticle) -> AugmentedState:
    """Graft the donor's action vector onto ``state_vec``."""
    return AugmentedState(state_vec, donor.aug.action_vec)


def associate(query: AugmentedState, candidates: Sequence[ExperienceParticle],
              h: KernelHyperparameters, tau: float):
    """Candidates with correlation ``>= tau`` to ``query``, most correlated first.

    Exact ties keep the older particle (smaller ``birth_step``) in front.
    """
    if not candidates:
        return []
    X = stack_joint([p.aug for p in candidates])
    rho = correlation_matrix(query.joint[None, :], X, h)[0]
    order = sorted(range(len(candidates)), key=lambda i: (-rho[i], candidates[i].birth_step, i))
    return [(candidates[i], float(rho[i])) for i in order if rho[i] >= tau]


class UpdateKind(enum.Enum):
    INSERTED = "inserted"
    REPLACED = "replaced"
    UNCHANGED = "unchanged"


@dataclass
class UpdateOutcome:
    kind: UpdateKind
    removed: Optional[ExperienceParticle] = None

    @property
    def changed(self) -> bool:
        return self.kind is not UpdateKind.UNCHANGED


class WorkingMemory:
    """Grid-partitioned particle store with per-cell, per-polarity quotas."""

    def __init__(self, geometry: GridGeometry, pos_quota: int = 3, neg_quota: int = 3):
        if pos_quota < 0 or neg_quota < 0 or pos_quota + neg_quota == 0:
            raise ConfigurationError("quotas must be non-negative and not both zero")
        self.geometry = geometry
        self.pos_quota = int(pos_quota)
        self.neg_quota = int(neg_quota)
        self._cells: List[List[ExperienceParticle]] = [[] for _ in range(geometry.n_cells)]
        self.version = 0

    @property
    def capacity(self) -> int:
        return self.geometry.n_cells * (self.pos_quota + self.neg_quota)

    def __len__(self) -> int:
        return sum(len(c) for c in self._cells)

    def __iter__(self):
        for cell in self._cells:
            yield from cell

    @property
    def all_particles(self) -> list:
        """Flat view in a deterministic order (cell by cell, slot by slot)."""
        return [p for cell in self._cells for p in cell]

    def snapshot(self) -> tuple:
        return tuple(self.all_particles)

    def cell_particles(self, partition: int) -> list:
        return list(self._cells[partition])

    def count(self, partition: int, positive: bool) -> int:
        return sum(1 for p in self._cells[partition] if p.positive == positive)

    def quota(self, positive: bool) -> int:
        return self.pos_quota if positive else self.neg_quota

    def _check(self, p: ExperienceParticle):
        expected = self.geometry.partition_of(p.aug.state_vec)
        if p.partition_id is None:
            p.partition_id = expected
        elif p.partition_id != expected:
            raise PreconditionError(
                f"particle tagged with partition {p.partition_id} but its state lies in {expected}"
            )

    def insert(self, p: ExperienceParticle) -> bool:
        """Store ``p`` if its cell has room for its polarity."""
        self._check(p)
        if self.count(p.partition_id, p.positive) >= self.quota(p.positive):
            return False
        self._cells[p.partition_id].append(p)
        self.version += 1
        return True

    def update(self, p: ExperienceParticle, h: KernelHyperparameters, tau: float) -> UpdateOutcome:
        """Insert ``p`` or let it replace a correlated same-polarity particle.

        A positive newcomer replaces the most correlated peer with lower
        fitness, a negative one the most correlated peer with higher fitness.
        """
        if self.insert(p):
            return UpdateOutcome(UpdateKind.INSERTED)
        cell = self._cells[p.partition_id]
        peers = [w for w in cell if w.positive == p.positive]
        for w, _ in associate(p.aug, peers, h, tau):
            better = w.fitness < p.fitness if p.positive else w.fitness > p.fitness
            if better:
                cell[cell.index(w)] = p
                self.version += 1
                return UpdateOutcome(UpdateKind.REPLACED, w)
        return UpdateOutcome(UpdateKind.UNCHANGED)

    def clear(self):
        self._cells = [[] for _ in range(self.geometry.n_cells)]
        self.version += 1

    def touch(self):
        """Mark the contents as changed after an in-place edit (e.g. cluster tags)."""
        self.version += 1

    def inputs_targets(self):
        ps = self.all_particles
        if not ps:
            return np.empty((0, 0)), np.empty(0)
        return stack_joint([p.aug for p in ps]), np.array([p.fitness for p in ps])


def memory_update(p: ExperienceParticle, mem: WorkingMemory, h: KernelHyperparameters,
                  tau: float) -> WorkingMemory:
    mem.update(p, h, tau)
    return mem


def local_candidates(state_vec, mem: WorkingMemory) -> list:
    """Particles stored in the cell that contains ``state_vec``."""
    return mem.cell_particles(mem.geometry.partition_of(state_vec))


def _columns(state_dim: int, action_dim: int) -> list:
    return ([f"s{i}" for i in range(state_dim)] + [f"a{i}" for i in range(action_dim)]
            + ["fitness", "td", "partition", "cluster", "birth_step"])


def save_snapshot(particles: Iterable[ExperienceParticle], path, state_dim: int, action_dim: int):
    """Write one tab-separated record per particle; ``cluster`` is -1 when unset."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(_columns(state_dim, action_dim))
        for p in particles:
            w.writerow([repr(float(v)) for v in p.aug.joint]
                       + [repr(p.fitness), repr(p.td), p.partition_id,
                          -1 if p.cluster_id is None else p.cluster_id, p.birth_step])


def load_snapshot(path, state_dim: int) -> list:
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        r = csv.reader(fh, delimiter="\t")
        header = next(r)
        n_vec = len(header) - 5
        if n_vec <= state_dim:
            raise ConfigurationError(f"{path}: snapshot has {n_vec} vector columns for state_dim={state_dim}")
        for row in r:
            vec = [float(v) for v in row[:n_vec]]
            fitness, td = float(row[n_vec]), float(row[n_vec + 1])
            cluster = int(row[n_vec + 3])
            out.append(ExperienceParticle(
                AugmentedState(vec[:state_dim], vec[state_dim:]), fitness, td,
                int(row[n_vec + 2]), None if cluster < 0 else cluster, int(row[n_vec + 4]),
            ))
    return out
