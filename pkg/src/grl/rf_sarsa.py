"""Two-tier SARSA in a reinforcement field.

The base tier is tabular SARSA over (grid partition, primitive).  Its updated
Q-values become fitness labels of experience particles, and a GP fitted to
the working memory scores every primitive's realised action vector at the
current state.  Actions are drawn by a softmax over those scores.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.special import softmax

from . import gpr
from .errors import ConfigurationError, NumericalError
from .kernels import AugmentedState, KernelHyperparameters
from .memory import ExperienceParticle, WorkingMemory
from .rng import Streams

__all__ = [
    "BaseQTable",
    "TemperatureSchedule",
    "RfSarsaConfig",
    "EpisodeRecord",
    "TrainingLog",
    "softmax_policy",
    "td_update",
    "evaluate_actions",
    "FitnessField",
    "run_rf_sarsa",
]

log = logging.getLogger(__name__)


class BaseQTable:
    """Sparse Q(s, a) table; unseen entries read as zero."""

    def __init__(self, alpha: float = 0.5, gamma: float = 0.99):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")
        if not 0.0 <= gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")
        self.alpha = float(alpha)
        self.gamma = float(gamma)
        self.values: Dict[tuple, float] = {}

    def __getitem__(self, key) -> float:
        return self.values.get(key, 0.0)

    def __setitem__(self, key, value: float):
        value = float(value)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite Q value for {key}")
        self.values[key] = value

    def row(self, s, actions) -> np.ndarray:
        return np.array([self[(s, a)] for a in actions])


def td_update(table: BaseQTable, s, a, r: float, s2, a2, terminal: bool = False):
    """SARSA step: returns ``(new Q(s, a), td)``.  Terminal successors contribute 0."""
    nxt = 0.0 if terminal or a2 is None else table[(s2, a2)]
    old = table[(s, a)]
    td = float(r) + table.gamma * nxt - old
    new = old + table.alpha * td
    table[(s, a)] = new
    return new, td


def softmax_policy(fitness, temperature: float, rng: np.random.Generator):
    """Sample an index with probability proportional to ``exp(f_i / temperature)``."""
    f = np.asarray(fitness, dtype=float).ravel()
    if f.size == 0:
        raise ConfigurationError("softmax over an empty action set")
    if not temperature > 0:
        raise ConfigurationError("temperature must be positive")
    probs = softmax(f / temperature)
    idx = int(rng.choice(f.size, p=probs))
    return idx, probs


@dataclass(frozen=True)
class TemperatureSchedule:
    initial: float = 5.0
    decay: float = 0.99
    floor: float = 0.05

    def __post_init__(self):
        if not self.floor > 0 or not self.initial > 0:
            raise ConfigurationError("temperatures must be positive")
        if not 0 < self.decay <= 1:
            raise ConfigurationError("temperature decay must lie in (0, 1]")

    def at(self, episode: int) -> float:
        return max(self.floor, self.initial * self.decay ** episode)


class FitnessField:
    """The GP over working memory, refreshed lazily when memory changes."""

    def __init__(self, memory: WorkingMemory, hyper: KernelHyperparameters):
        self.memory = memory
        self.hyper = hyper
        self.model: Optional[gpr.GprModel] = None
        self._version = None
        self.failures = 0

    def set_hyper(self, hyper: KernelHyperparameters):
        self.hyper = hyper
        self._version = None

    def refresh(self) -> Optional[gpr.GprModel]:
        if self._version == self.memory.version:
            return self.model
        X, q = self.memory.inputs_targets()
        if len(q) == 0:
            self.model = None
        else:
            try:
                self.model = gpr.fit(X, q, self.hyper)
            except NumericalError:
                # keep the previous field; the next change will retry
                self.failures += 1
                log.warning("GP refit failed with %d particles", len(q))
        self._version = self.memory.version
        return self.model

    def predict(self, Xs) -> np.ndarray:
        m = self.refresh()
        if m is None:
            return np.zeros(len(Xs))
        return m.mean(Xs)

    def lml(self) -> float:
        m = self.refresh()
        return gpr.log_marginal_likelihood(m) if m is not None else float("nan")


def evaluate_actions(state_vec, env, field_or_model, rng: np.random.Generator):
    """Realise every primitive and score ``(state, action)`` with the GP mean.

    Returns ``(action_vectors, fitness)`` with one row per primitive.  With
    no fitted model every fitness is the zero prior mean.
    """
    vecs = env.action_vectors(rng)
    s = np.asarray(state_vec, dtype=float).ravel()
    X = np.hstack((np.broadcast_to(s, (vecs.shape[0], s.size)), vecs))
    if field_or_model is None:
        return vecs, np.zeros(vecs.shape[0])
    if isinstance(field_or_model, FitnessField):
        return vecs, field_or_model.predict(X)
    return vecs, field_or_model.mean(X)


@dataclass
class RfSarsaConfig:
    alpha: float = 0.5
    gamma: float = 0.99
    temperature: TemperatureSchedule = field(default_factory=TemperatureSchedule)
    tau: float = 0.5
    ard_period: int = 100
    ard_growth: int = 0
    ard_period_cap: Optional[int] = None
    ard: gpr.ArdConfig = field(default_factory=gpr.ArdConfig)
    episodes: int = 500
    step_cap: Optional[int] = None
    pos_quota: int = 3
    neg_quota: int = 3
    snapshot_every: int = 0

    def __post_init__(self):
        if self.ard_period < 1:
            raise ConfigurationError("ard_period must be at least 1")
        if self.ard_growth < 0:
            raise ConfigurationError("ard_growth must be non-negative")
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError("tau must lie in (0, 1)")
        if self.episodes < 1:
            raise ConfigurationError("episodes must be at least 1")

    def next_period(self, T: int) -> int:
        T = T + self.ard_growth
        if self.ard_period_cap is not None:
            T = min(T, self.ard_period_cap)
        return T


@dataclass
class EpisodeRecord:
    episode: int
    total_reward: float
    steps: int
    lml: float
    memory_size: int
    outcome: str
    extra: dict = field(default_factory=dict)


@dataclass
class TrainingLog:
    rows: List[EpisodeRecord] = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    ard_events: list = field(default_factory=list)
    lml_trace: list = field(default_factory=list)
    memory: Optional[WorkingMemory] = None
    fitness_field: Optional[FitnessField] = None
    q_table: Optional[BaseQTable] = None
    error: Optional[str] = None
    transitions: int = 0

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.total_reward for r in self.rows])

    @property
    def hyper(self):
        return self.fitness_field.hyper if self.fitness_field else None


class _ArdClock:
    """Counts transitions and fires every T, growing T after each firing."""

    def __init__(self, period: int, next_period: Callable[[int], int]):
        self.period = period
        self._next = next_period
        self.since = 0

    def tick(self) -> bool:
        if self.since >= self.period:
            self.since = 0
            self.period = self._next(self.period)
            return True
        return False

    def advance(self):
        self.since += 1


def _run_ard(fld: FitnessField, cfg_ard: gpr.ArdConfig, log_: TrainingLog, transition: int):
    X, q = fld.memory.inputs_targets()
    if len(q) < 2:
        return
    res = gpr.ard_optimize(X, q, fld.hyper, cfg_ard)
    fld.set_hyper(res.hyper)
    log_.ard_events.append(transition)
    log_.lml_trace.append(res.lml)


def _copy_particles(mem: WorkingMemory) -> tuple:
    return tuple(dataclasses.replace(p) for p in mem.all_particles)


def run_rf_sarsa(env, cfg: RfSarsaConfig, h0: KernelHyperparameters, seed: int,
                 initial_particles=None) -> TrainingLog:
    """Train RF-SARSA on ``env`` for ``cfg.episodes`` episodes."""
    if h0.state_dim != env.state_dim or h0.action_dim != env.action_dim:
        raise ConfigurationError("kernel dimensions do not match the environment")
    streams = Streams(seed)
    env_rng, pol_rng = streams.env, streams.policy
    mem = WorkingMemory(env.geometry, cfg.pos_quota, cfg.neg_quota)
    fld = FitnessField(mem, h0)
    table = BaseQTable(cfg.alpha, cfg.gamma)
    out = TrainingLog(memory=mem, fitness_field=fld, q_table=table)
    for p in initial_particles or ():
        mem.insert(dataclasses.replace(p, partition_id=None))
    if len(mem) >= 2:
        _run_ard(fld, cfg.ard, out, 0)

    prims = env.primitives
    clock = _ArdClock(cfg.ard_period, cfg.next_period)
    step_cap = cfg.step_cap or env.max_steps
    t = 0
    try:
        for ep in range(cfg.episodes):
            temp = cfg.temperature.at(ep)
            s = env.reset(env_rng)
            vecs, fit = evaluate_actions(s, env, fld, pol_rng)
            i, _ = softmax_policy(fit, temp, pol_rng)
            x_a = vecs[i]
            total, steps, outcome = 0.0, 0, "timeout"
            for _ in range(step_cap):
                if clock.tick():
                    _run_ard(fld, cfg.ard, out, t)
                s2, r, terminal = env.step(s, x_a, env_rng)
                t += 1
                clock.advance()
                steps += 1
                total += r
                ps, ps2 = mem.geometry.partition_of(s), mem.geometry.partition_of(s2)
                if terminal:
                    j, x_a2 = None, None
                else:
                    vecs2, fit2 = evaluate_actions(s2, env, fld, pol_rng)
                    j, _ = softmax_policy(fit2, temp, pol_rng)
                    x_a2 = vecs2[j]
                q_i, td = td_update(table, ps, prims[i], r, ps2,
                                    None if j is None else prims[j], terminal)
                particle = ExperienceParticle(AugmentedState(s, x_a), q_i, td, ps, birth_step=t)
                mem.update(particle, fld.hyper, cfg.tau)
                s, i, x_a = s2, j, x_a2
                if terminal:
                    outcome = env.last_event
                    break
            out.rows.append(EpisodeRecord(ep + 1, total, steps, fld.lml(), len(mem), outcome))
            if cfg.snapshot_every and (ep + 1) % cfg.snapshot_every == 0:
                out.snapshots.append((ep + 1, _copy_particles(mem)))
    except (NumericalError, ArithmeticError, ValueError) as exc:
        out.error = f"{type(exc).__name__}: {exc}"
        log.error("run aborted at transition %d: %s", t, out.error)
    out.transitions = t
    return out
