"""Spectral clustering of experience particles on their kernel graph.

The noise-free kernel matrix of the working memory is read as a weighted,
fully connected graph.  Vertices are embedded with the ``p`` smallest
eigenvectors of the random-walk Laplacian ``I - D^-1 W`` (obtained from the
symmetric normalised Laplacian and rescaled by ``D^-1/2``) and the embedding
rows are grouped by k-means.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, Hashable, Mapping, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.cluster.vq import kmeans2

from .errors import DegenerateGraphError, NumericalError, PreconditionError
from .kernels import KernelHyperparameters, cross_kernel, stack_joint

__all__ = [
    "SimilarityGraph",
    "Partitioning",
    "degree_matrix",
    "transition_matrix",
    "sparsify",
    "ncut_value",
    "empty_clusters",
    "spectral_partition",
    "reindex_clusters",
    "apply_reindex",
]


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    weights: np.ndarray
    particle_ids: tuple = ()

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] == 0:
            raise PreconditionError("a similarity graph needs a non-empty square weight matrix")
        if np.any(W < 0) or not np.all(np.isfinite(W)):
            raise PreconditionError("graph weights must be finite and non-negative")
        if not np.allclose(W, W.T, rtol=1e-12, atol=1e-12 * max(W.max(), 1.0)):
            raise PreconditionError("graph weights must be symmetric")
        W = 0.5 * (W + W.T)
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)
        ids = tuple(self.particle_ids) or tuple(range(W.shape[0]))
        if len(ids) != W.shape[0]:
            raise PreconditionError("one particle id per vertex is required")
        object.__setattr__(self, "particle_ids", ids)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_points(cls, X, h: KernelHyperparameters, particle_ids: Sequence = ()) -> "SimilarityGraph":
        """Noise-free kernel graph over joint vectors."""
        X = stack_joint(X)
        return cls(cross_kernel(X, X, h), tuple(particle_ids))

    @classmethod
    def from_particles(cls, particles, h: KernelHyperparameters, particle_ids: Sequence = ()):
        return cls.from_points([p.aug for p in particles], h, particle_ids)


@dataclass(frozen=True, eq=False)
class Partitioning:
    labels: np.ndarray
    p: int
    ncut: float
    empty: tuple = ()

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        if self.p < 1 or np.any(labels < 0) or np.any(labels >= self.p):
            raise PreconditionError("labels must lie in [0, p)")
        object.__setattr__(self, "labels", labels)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.p)


def degree_matrix(g: SimilarityGraph) -> np.ndarray:
    """Vertex degrees ``d_i = sum_j W_ij`` (self weight included)."""
    return g.weights.sum(axis=1)


def _check_degrees(d: np.ndarray):
    if np.any(d <= 0):
        bad = np.flatnonzero(d <= 0)
        raise DegenerateGraphError(f"isolated vertices {bad.tolist()} have zero degree")


def transition_matrix(g: SimilarityGraph) -> np.ndarray:
    """Row-stochastic random-walk matrix ``D^-1 W``."""
    d = degree_matrix(g)
    _check_degrees(d)
    return g.weights / d[:, None]


def sparsify(g: SimilarityGraph, tau_prime: float) -> SimilarityGraph:
    """Zero off-diagonal edges whose normalised similarity falls below ``tau_prime``."""
    if not 0.0 <= tau_prime < 1.0:
        raise PreconditionError("tau_prime must lie in [0, 1)")
    W = np.array(g.weights)
    diag = np.diag(W).copy()
    if np.all(diag > 0):
        s = np.sqrt(diag)
        rho = W / np.outer(s, s)
    else:
        rho = W / W.max() if W.max() > 0 else W
    W[rho < tau_prime] = 0.0
    W[np.diag_indices_from(W)] = diag
    return SimilarityGraph(W, g.particle_ids)


def empty_clusters(labels, p: int) -> tuple:
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=p)
    return tuple(int(i) for i in np.flatnonzero(counts == 0))


def ncut_value(g: SimilarityGraph, labels, p: Optional[int] = None) -> float:
    """Normalised cut ``sum_i cut(A_i, rest) / assoc(A_i, all)``; empty clusters add 0."""
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (g.n,):
        raise PreconditionError("one label per vertex is required")
    p = int(labels.max()) + 1 if p is None else int(p)
    W = g.weights
    onehot = np.zeros((g.n, p))
    onehot[np.arange(g.n), labels] = 1.0
    assoc = onehot.T @ W.sum(axis=1)
    # summing the cross edges directly keeps a zero cut exactly zero
    cut = np.einsum("ik,ij,jk->k", onehot, W, 1.0 - onehot)
    total = 0.0
    for k in range(p):
        if assoc[k] > 0:
            total += cut[k] / assoc[k]
    return float(total)


def _embedding(g: SimilarityGraph, p: int) -> np.ndarray:
    d = degree_matrix(g)
    _check_degrees(d)
    s = 1.0 / np.sqrt(d)
    L = np.eye(g.n) - s[:, None] * g.weights * s[None, :]
    L = 0.5 * (L + L.T)
    try:
        _, vecs = linalg.eigh(L, subset_by_index=[0, p - 1])
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    return vecs * s[:, None]


def spectral_partition(g: SimilarityGraph, p: int, rng: np.random.Generator,
                       restarts: int = 10, max_iter: int = 100) -> Partitioning:
    """Cluster the graph into ``p`` groups; the restart with the lowest NCut wins."""
    if p < 2:
        raise PreconditionError("spectral_partition needs p >= 2")
    if p > g.n:
        raise PreconditionError(f"cannot form {p} clusters from {g.n} vertices")
    U = _embedding(g, p)
    # unit scale per column keeps k-means from ignoring low-variance directions
    scale = U.std(axis=0)
    scale[scale <= 1e-8 * np.abs(U).max(axis=0)] = 1.0  # constant columns
    U = U / scale
    best = None
    for _ in range(restarts):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, labels = kmeans2(U, p, iter=max_iter, minit="++", seed=rng)
        score = ncut_value(g, labels, p)
        if best is None or score < best[0] - 1e-12:
            best = (score, labels)
    score, labels = best
    return Partitioning(labels, p, score, empty_clusters(labels, p))


def reindex_clusters(old_labels: Mapping[Hashable, Optional[int]], new_labels: Mapping[Hashable, int],
                     p: Optional[int] = None) -> Dict[int, int]:
    """Map each new cluster index onto an old one by majority vote of survivors.

    ``old_labels`` and ``new_labels`` map particle ids to cluster indices
    (old entries may be ``None`` for unlabelled particles).  Each new cluster
    claims the old index most common among its surviving members (ties go to
    the lower old index).  Competing claims are settled by overlap count, then
    by lower new index.  New clusters left without an index receive the
    unclaimed indices in ascending order.
    """
    new_ids = sorted(set(int(v) for v in new_labels.values()))
    old_vals = [v for v in old_labels.values() if v is not None]
    if p is None:
        p = max(new_ids + [int(v) for v in old_vals] + [-1]) + 1
    claims = []
    for c in new_ids:
        votes: Dict[int, int] = {}
        for pid, lab in new_labels.items():
            if lab != c:
                continue
            old = old_labels.get(pid)
            if old is not None:
                votes[int(old)] = votes.get(int(old), 0) + 1
        if votes:
            top = max(votes.values())
            choice = min(k for k, v in votes.items() if v == top)
            claims.append((-top, c, choice))
    mapping: Dict[int, int] = {}
    taken = set()
    for _, c, choice in sorted(claims):
        if choice not in taken:
            mapping[c] = choice
            taken.add(choice)
    free = iter(sorted(set(range(p)) - taken))
    for c in range(p):
        if c in new_ids and c not in mapping:
            mapping[c] = next(free)
    # indices with no members still need a slot so the map stays a permutation
    for c in range(p):
        if c not in mapping:
            mapping[c] = next(free)
    return mapping


def apply_reindex(labels, mapping: Mapping[int, int]) -> np.ndarray:
    return np.array([mapping[int(v)] for v in labels], dtype=int)
