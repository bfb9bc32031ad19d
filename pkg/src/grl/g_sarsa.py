"""SARSA over abstract actions formed by spectral clustering of memory.

An abstract action is a cluster of experience particles.  Choosing one means
grafting each member's action vector onto the current state and following
the member whose hypothetical state correlates best with it.  When no member
is correlated enough the agent falls back to a uniformly random primitive.
The clusters are rebuilt periodically and their indices kept stable by
majority vote.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import gpr
from .errors import ConfigurationError, NumericalError, PreconditionError
from .gpsc import SimilarityGraph, reindex_clusters, sparsify, spectral_partition
from .kernels import AugmentedState, KernelHyperparameters, correlation_matrix, paired_correlation, stack_joint
from .memory import ExperienceParticle, WorkingMemory
from .rf_sarsa import (
    BaseQTable,
    EpisodeRecord,
    FitnessField,
    TemperatureSchedule,
    TrainingLog,
    softmax_policy,
    td_update,
)
from .rng import Streams

__all__ = [
    "OUT_OF_CONTEXT",
    "Resolution",
    "AbstractActionSet",
    "GSarsaConfig",
    "GSarsaLog",
    "action_resolution",
    "abstract_policy",
    "g_sarsa_update",
    "assign_cluster",
    "out_of_context_fallback",
    "reformulate",
    "run_g_sarsa",
]

log = logging.getLogger(__name__)


class _OutOfContext:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "OUT_OF_CONTEXT"

    def __bool__(self):
        return False


OUT_OF_CONTEXT = _OutOfContext()


@dataclass(frozen=True)
class Resolution:
    primitive: int
    donor: ExperienceParticle
    correlation: float


class AbstractActionSet:
    """Abstract Q-values, association statistics and cluster bookkeeping.

    Cluster membership lives on the particles themselves (``cluster_id``),
    so the sets always describe the current memory.
    """

    def __init__(self, p: int, alpha: float = 0.5, gamma: float = 0.99):
        if p < 1:
            raise ConfigurationError("at least one abstract action is required")
        self.p = int(p)
        self.q = BaseQTable(alpha, gamma)
        self.primitive_q = BaseQTable(alpha, gamma)
        self.selections = np.zeros(self.p, dtype=int)
        self.successes = np.zeros(self.p, dtype=int)

    def clusters(self, particles: Sequence[ExperienceParticle]) -> List[list]:
        out: List[list] = [[] for _ in range(self.p)]
        for w in particles:
            if w.cluster_id is not None and 0 <= w.cluster_id < self.p:
                out[w.cluster_id].append(w)
        return out

    @property
    def beta(self) -> np.ndarray:
        """Association success rate per abstract action (0 before any selection)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            b = self.successes / self.selections
        return np.where(self.selections > 0, b, 0.0)

    def record(self, index: int, in_context: bool):
        self.selections[index] += 1
        self.successes[index] += int(bool(in_context))

    def q_row(self, partition: int) -> np.ndarray:
        return self.q.row(partition, range(self.p))


def _hypothetical_rho(state_vec, members: Sequence[ExperienceParticle], h) -> np.ndarray:
    X = stack_joint([w.aug for w in members])
    H = X.copy()
    H[:, : h.state_dim] = np.asarray(state_vec, dtype=float).ravel()
    return paired_correlation(H, X, h)


def action_resolution(state_vec, members: Sequence[ExperienceParticle], model,
                      h: KernelHyperparameters, tau: float):
    """Resolve an abstract action (its member particles) at ``state_vec``.

    Returns a :class:`Resolution` naming the primitive of the most correlated
    qualifying donor, or ``OUT_OF_CONTEXT``.  Ties go to the older donor.
    """
    if not members:
        return OUT_OF_CONTEXT
    rho = _hypothetical_rho(state_vec, members, h)
    order = sorted(range(len(members)), key=lambda k: (-rho[k], members[k].birth_step, k))
    best = order[0]
    if rho[best] < tau:
        return OUT_OF_CONTEXT
    donor = members[best]
    return Resolution(model.resolve_primitive(donor.aug.action_vec), donor, float(rho[best]))


def abstract_policy(aset: AbstractActionSet, partition: int, temperature: float,
                    rng: np.random.Generator):
    """Softmax over ``Q(partition, A_i)``; returns ``(index, distribution)``."""
    return softmax_policy(aset.q_row(partition), temperature, rng)


def g_sarsa_update(aset: AbstractActionSet, s, A_i: int, r: float, s2, A_j: Optional[int],
                   primitive: Optional[int] = None, terminal: bool = False):
    """TD update of ``Q(s, A_i)``; the resolved primitive's entry mirrors it."""
    for idx in (A_i, A_j):
        if idx is not None and not 0 <= idx < aset.p:
            raise ConfigurationError(f"abstract index {idx} out of range")
    new, td = td_update(aset.q, s, A_i, r, s2, A_j, terminal)
    if primitive is not None:
        aset.primitive_q[(s, primitive)] = new
    return new, td


def assign_cluster(particle: ExperienceParticle, clusters: Sequence[Sequence[ExperienceParticle]],
                   h: KernelHyperparameters, k: int = 5, tau: float = 0.5) -> int:
    """kNN cluster for a new particle.

    Average correlation to the ``k`` most correlated members of each cluster;
    the best cluster wins if it reaches ``tau``, otherwise the first empty
    cluster, otherwise the best cluster anyway.
    """
    if not clusters:
        raise PreconditionError("assign_cluster needs at least one cluster")
    x = particle.aug.joint[None, :]
    scores = np.full(len(clusters), -np.inf)
    for c, members in enumerate(clusters):
        if members:
            rho = np.sort(correlation_matrix(x, stack_joint([w.aug for w in members]), h)[0])[::-1]
            scores[c] = rho[:k].mean()
    empties = [c for c, m in enumerate(clusters) if not m]
    if np.all(np.isneginf(scores)):
        return empties[0]
    best = int(np.argmax(scores))
    if scores[best] >= tau:
        return best
    if empties:
        return empties[0]
    return best


def out_of_context_fallback(source, rng: np.random.Generator):
    """Uniformly random primitive and one realisation of it.

    ``source`` is an environment (its live action vectors are used) or a bare
    :class:`~grl.actions.ParametricActionModel` (a fresh sample is drawn).
    """
    if hasattr(source, "action_vector"):
        prims = source.primitives
        i = prims[int(rng.integers(len(prims)))]
        return i, source.action_vector(i, rng)
    prims = source.indices
    i = prims[int(rng.integers(len(prims)))]
    return i, source.sample_action(i, rng)


@dataclass
class GSarsaConfig:
    p: int = 10
    alpha: float = 0.5
    gamma: float = 0.99
    temperature: TemperatureSchedule = field(default_factory=TemperatureSchedule)
    tau: float = 0.5
    knn: int = 5
    warmup: int = 200
    period: int = 10
    period_growth: int = 10
    period_cap: Optional[int] = 100
    tau_prime: float = 0.0
    ard: gpr.ArdConfig = field(default_factory=gpr.ArdConfig)
    episodes: int = 500
    step_cap: Optional[int] = None
    pos_quota: int = 3
    neg_quota: int = 3
    snapshot_every: int = 0
    kmeans_restarts: int = 10

    def __post_init__(self):
        if self.p < 2:
            raise ConfigurationError("G-SARSA needs at least two abstract actions")
        if self.period < 1 or self.period_growth < 0:
            raise ConfigurationError("reformulation period must be >= 1 with non-negative growth")
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError("tau must lie in (0, 1)")
        if self.knn < 1 or self.warmup < 0 or self.episodes < 1:
            raise ConfigurationError("knn >= 1, warmup >= 0 and episodes >= 1 are required")

    def next_period(self, T: int) -> int:
        T = T + self.period_growth
        return min(T, self.period_cap) if self.period_cap is not None else T


@dataclass
class GSarsaLog(TrainingLog):
    aset: Optional[AbstractActionSet] = None
    reindex_maps: list = field(default_factory=list)
    cluster_sizes: list = field(default_factory=list)


def reformulate(mem: WorkingMemory, fld: FitnessField, aset: AbstractActionSet, cfg: GSarsaConfig,
                rng: np.random.Generator, run_ard: bool = True) -> Optional[Dict[int, int]]:
    """ARD, then GPSC over memory, then majority-vote reindexing.

    Returns the reindex map, or ``None`` when memory holds fewer than ``p``
    particles (clusters then stay as they are).
    """
    particles = mem.all_particles
    if run_ard and len(particles) >= 2:
        X, q = mem.inputs_targets()
        fld.set_hyper(gpr.ard_optimize(X, q, fld.hyper, cfg.ard).hyper)
    if len(particles) < aset.p:
        for k, w in enumerate(particles):
            if w.cluster_id is None:
                w.cluster_id = k
        mem.touch()
        return None
    g = SimilarityGraph.from_particles(particles, fld.hyper)
    if cfg.tau_prime > 0:
        g = sparsify(g, cfg.tau_prime)
    part = spectral_partition(g, aset.p, rng, restarts=cfg.kmeans_restarts)
    old = {k: w.cluster_id for k, w in enumerate(particles)}
    new = {k: int(part.labels[k]) for k in range(len(particles))}
    mapping = reindex_clusters(old, new, aset.p)
    for k, w in enumerate(particles):
        w.cluster_id = mapping[new[k]]
    mem.touch()
    return mapping


def _choose(env, state, partition, aset, mem, fld, cfg, temp, rng):
    """Abstract selection plus resolution; returns (A, primitive, x_a, in_context)."""
    A, _ = abstract_policy(aset, partition, temp, rng)
    members = aset.clusters(mem.all_particles)[A]
    res = action_resolution(state, members, env.action_model, fld.hyper, cfg.tau)
    if res is OUT_OF_CONTEXT:
        prim, x_a = out_of_context_fallback(env, rng)
        aset.record(A, False)
        return A, prim, x_a, False
    aset.record(A, True)
    return A, res.primitive, env.action_vector(res.primitive, rng), True


def _warmup(env, mem, aset, fld, cfg, env_rng, pol_rng) -> int:
    """Random-policy transitions that seed memory; fitness from primitive-level SARSA."""
    t = 0
    table = aset.primitive_q
    while t < cfg.warmup:
        s = env.reset(env_rng)
        a, x_a = out_of_context_fallback(env, pol_rng)
        for _ in range(cfg.step_cap or env.max_steps):
            s2, r, terminal = env.step(s, x_a, env_rng)
            t += 1
            ps, ps2 = mem.geometry.partition_of(s), mem.geometry.partition_of(s2)
            if terminal:
                a2, x_a2 = None, None
            else:
                a2, x_a2 = out_of_context_fallback(env, pol_rng)
            q, td = td_update(table, ps, a, r, ps2, a2, terminal)
            mem.update(ExperienceParticle(AugmentedState(s, x_a), q, td, ps, birth_step=-cfg.warmup + t),
                       fld.hyper, cfg.tau)
            s, a, x_a = s2, a2, x_a2
            if terminal or t >= cfg.warmup:
                break
    return t


def run_g_sarsa(env, cfg: GSarsaConfig, h0: KernelHyperparameters, seed: int,
                initial_particles=None) -> GSarsaLog:
    """Train G-SARSA with ``cfg.p`` abstract actions."""
    if h0.state_dim != env.state_dim or h0.action_dim != env.action_dim:
        raise ConfigurationError("kernel dimensions do not match the environment")
    streams = Streams(seed)
    env_rng, pol_rng, clu_rng = streams.env, streams.policy, streams.clustering
    mem = WorkingMemory(env.geometry, cfg.pos_quota, cfg.neg_quota)
    fld = FitnessField(mem, h0)
    aset = AbstractActionSet(cfg.p, cfg.alpha, cfg.gamma)
    out = GSarsaLog(memory=mem, fitness_field=fld, q_table=aset.q, aset=aset)
    t = 0
    try:
        for w in initial_particles or ():
            mem.insert(dataclasses.replace(w, partition_id=None, cluster_id=None))
        if len(mem) < max(2, cfg.p) and cfg.warmup:
            _warmup(env, mem, aset, fld, cfg, env_rng, pol_rng)
        mapping = reformulate(mem, fld, aset, cfg, clu_rng)
        out.reindex_maps.append((0, mapping))
        out.ard_events.append(0)

        T, since = cfg.period, 0
        step_cap = cfg.step_cap or env.max_steps
        for ep in range(cfg.episodes):
            temp = cfg.temperature.at(ep)
            s = env.reset(env_rng)
            ps = mem.geometry.partition_of(s)
            A_i, a_i, x_a, ctx = _choose(env, s, ps, aset, mem, fld, cfg, temp, pol_rng)
            first = (A_i, a_i)
            total, steps, n_ctx, n_reindex = 0.0, 0, int(ctx), 0
            outcome = "timeout"
            for _ in range(step_cap):
                if since >= T:
                    mapping = reformulate(mem, fld, aset, cfg, clu_rng)
                    out.reindex_maps.append((t, mapping))
                    out.ard_events.append(t)
                    n_reindex += 1
                    since, T = 0, cfg.next_period(T)
                s2, r, terminal = env.step(s, x_a, env_rng)
                t += 1
                since += 1
                steps += 1
                total += r
                ps2 = mem.geometry.partition_of(s2)
                if terminal:
                    A_j, a_j, x_a2 = None, None, None
                else:
                    A_j, a_j, x_a2, ctx2 = _choose(env, s2, ps2, aset, mem, fld, cfg, temp, pol_rng)
                    n_ctx += int(ctx2)
                q_i, td = g_sarsa_update(aset, ps, A_i, r, ps2, A_j, a_i, terminal)
                w = ExperienceParticle(AugmentedState(s, x_a), q_i, td, ps, birth_step=t)
                w.cluster_id = assign_cluster(w, aset.clusters(mem.all_particles), fld.hyper, cfg.knn, cfg.tau)
                mem.update(w, fld.hyper, cfg.tau)
                s, ps, A_i, a_i, x_a = s2, ps2, A_j, a_j, x_a2
                if terminal:
                    outcome = env.last_event
                    break
            sizes = [len(c) for c in aset.clusters(mem.all_particles)]
            out.cluster_sizes.append(sizes)
            out.rows.append(EpisodeRecord(ep + 1, total, steps, fld.lml(), len(mem), outcome, {
                "abstract_chosen": first[0],
                "resolved_primitive": first[1],
                "in_context": n_ctx,
                "cluster_count": sum(1 for n in sizes if n),
                "reindex_events": n_reindex,
            }))
            if cfg.snapshot_every and (ep + 1) % cfg.snapshot_every == 0:
                out.snapshots.append((ep + 1, tuple(dataclasses.replace(w) for w in mem.all_particles)))
    except (NumericalError, ArithmeticError, ValueError) as exc:
        out.error = f"{type(exc).__name__}: {exc}"
        log.error("G-SARSA run aborted: %s", out.error)
    out.transitions = t
    return out
