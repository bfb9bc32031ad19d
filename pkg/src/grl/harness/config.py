"""Run configuration: YAML in, validated :class:`RunConfig` out.

Every block is checked before anything runs.  Problems are collected into a
single :class:`ConfigValidationError` whose ``issues`` list names the offending
key path, so a bad file reports all of its mistakes at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .. import gpr
from ..actions import clock_navigation_model
from ..envs.navigation import NavRewards, NavWorld, nav_default_configs
from ..envs.tasks import TaskLaw, TaskRewards, TaskServerWorld, default_servers
from ..errors import ConfigurationError
from ..g_sarsa import GSarsaConfig
from ..kernels import KernelHyperparameters
from ..rf_sarsa import RfSarsaConfig, TemperatureSchedule

__all__ = [
    "ALGOS",
    "ENVS",
    "ConfigValidationError",
    "RunConfig",
    "load_config",
    "parse_config",
    "default_kernel",
]

ALGOS = ("rf_sarsa", "g_sarsa", "baseline_matchmaker", "baseline_random")
NAV_ENVS = ("nav_5x5", "nav_7x5", "nav_9x9")
ENVS = NAV_ENVS + ("task_assign", "custom")
TOP_KEYS = {"algo", "env", "world", "seeds", "episodes", "step_cap", "kernel", "action_model",
            "memory", "schedule", "output", "task"}


class ConfigValidationError(ConfigurationError):
    def __init__(self, issues: List[str]):
        self.issues = list(issues)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {i}" for i in self.issues))

    def report(self) -> dict:
        return {"status": "invalid", "issues": self.issues}


def default_kernel(env: str) -> dict:
    """Starting kernel per domain (length scales in state-then-action order)."""
    if env == "task_assign":
        return {"kind": "se", "signal_amplitude": 100.0, "noise_scale": 10.0,
                "length_scales": [0.5, 1.0, 1.0, 0.5, 10.0, 4.0, 40.0, 1.0, 3.0],
                "length_bounds": [[0.2, 2], [0.3, 5], [0.3, 5], [0.2, 2], [2, 100],
                                  [1, 40], [10, 400], [0.3, 10], [1, 30]]}
    return {"kind": "se", "signal_amplitude": 100.0, "noise_scale": 10.0,
            "length_scales": [1.0, 1.0, 0.5, 0.5],
            "length_bounds": [[0.5, 1.0], [0.5, 1.0], [0.1, 2.0], [0.3, 2.0]]}


@dataclass
class RunConfig:
    algos: Tuple[str, ...]
    env: str
    seeds: Tuple[int, ...]
    episodes: int
    step_cap: Optional[int]
    kernel: KernelHyperparameters
    rf: RfSarsaConfig
    gs: GSarsaConfig
    world: dict = field(default_factory=dict)
    action_model: dict = field(default_factory=dict)
    task: dict = field(default_factory=dict)
    out_dir: str = "runs"
    snapshot_every: int = 0
    field_resolution: int = 4
    final_window: int = 50
    jobs: int = 1
    raw: dict = field(default_factory=dict)

    @property
    def is_nav(self) -> bool:
        return self.env != "task_assign"

    def build_env(self):
        """A fresh, independent environment instance."""
        if self.env == "task_assign":
            return _build_task(self.task)
        model = clock_navigation_model(**self.action_model)
        if self.env == "custom":
            return _build_world(self.world, model)
        base = nav_default_configs()[self.env].to_dict()
        base.update(self.world)
        base["name"] = self.env
        return _build_world(base, model)


def _build_world(d: dict, model) -> NavWorld:
    rewards = d.get("rewards") or {}
    return NavWorld(
        width=float(d["width"]), height=float(d["height"]), grid=tuple(d["grid"]),
        start_cell=tuple(d["start_cell"]), goal_cell=tuple(d["goal_cell"]),
        obstacle_cells=[tuple(c) for c in d.get("obstacle_cells", ())],
        rewards=NavRewards(**rewards), max_steps=int(d["max_steps"]), action_model=model,
        name=str(d.get("name", "custom")),
    )


def _build_task(d: dict) -> TaskServerWorld:
    availability = float(d.get("availability", 0.8))
    law = TaskLaw(**{k: (tuple(v) if k == "types" else v) for k, v in (d.get("law") or {}).items()})
    rewards = TaskRewards(**(d.get("rewards") or {}))
    counts = tuple(d.get("partition_counts", (3, 1, 1)))
    return TaskServerWorld(default_servers(availability), law, rewards,
                           float(d.get("yield_threshold", 0.95)), counts)


class _Checker:
    def __init__(self):
        self.issues: List[str] = []

    def block(self, raw: dict, key: str, allowed: set) -> dict:
        v = raw.get(key)
        if v is None:
            return {}
        if not isinstance(v, dict):
            self.issues.append(f"{key}: expected a mapping")
            return {}
        for extra in sorted(set(v) - allowed):
            self.issues.append(f"{key}.{extra}: unknown key")
        return v

    def integer(self, d: dict, key: str, path: str, default, lo=None, allow_none=False):
        v = d.get(key, default)
        if v is None and allow_none:
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            self.issues.append(f"{path}: expected an integer, got {v!r}")
            return default
        if lo is not None and v < lo:
            self.issues.append(f"{path}: must be >= {lo}, got {v}")
            return default
        return v

    def number(self, d: dict, key: str, path: str, default, lo=None, hi=None,
               lo_open=False, allow_none=False):
        v = d.get(key, default)
        if v is None and allow_none:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.issues.append(f"{path}: expected a finite number, got {v!r}")
            return default
        if lo is not None and (v < lo or (lo_open and v == lo)):
            self.issues.append(f"{path}: must be {'>' if lo_open else '>='} {lo}, got {v}")
            return default
        if hi is not None and v > hi:
            self.issues.append(f"{path}: must be <= {hi}, got {v}")
            return default
        return float(v)

    def attempt(self, path: str, fn, default=None):
        try:
            return fn()
        except (ConfigurationError, ValueError, TypeError, KeyError) as exc:
            self.issues.append(f"{path}: {exc}")
            return default


def _as_list(v) -> list:
    if v is None:
        return []
    return list(v) if isinstance(v, (list, tuple)) else [v]


def parse_config(raw: Any, base_dir: Optional[Path] = None) -> RunConfig:
    """Validate a decoded config mapping."""
    if not isinstance(raw, dict):
        raise ConfigValidationError(["top level: expected a mapping"])
    ck = _Checker()
    for extra in sorted(set(raw) - TOP_KEYS):
        ck.issues.append(f"{extra}: unknown key")

    algos = tuple(_as_list(raw.get("algo", "rf_sarsa")))
    if not algos:
        ck.issues.append("algo: at least one algorithm is required")
    for a in algos:
        if a not in ALGOS:
            ck.issues.append(f"algo: {a!r} is not one of {', '.join(ALGOS)}")
    env = raw.get("env", "nav_5x5")
    if env not in ENVS:
        ck.issues.append(f"env: {env!r} is not one of {', '.join(ENVS)}")
        env = "nav_5x5"
    if "baseline_matchmaker" in algos and env != "task_assign":
        ck.issues.append("algo: baseline_matchmaker needs env task_assign")

    seeds = _as_list(raw.get("seeds", [0]))
    if not seeds or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in seeds):
        ck.issues.append(f"seeds: expected non-negative integers, got {seeds!r}")
        seeds = [0]
    if len(set(seeds)) != len(seeds):
        ck.issues.append("seeds: duplicates are not allowed")
    episodes = ck.integer(raw, "episodes", "episodes", 500, lo=1)
    step_cap = ck.integer(raw, "step_cap", "step_cap", None, lo=1, allow_none=True)

    # world
    world: dict = {}
    w = raw.get("world")
    if isinstance(w, str):
        p = Path(w) if base_dir is None or Path(w).is_absolute() else base_dir / w
        try:
            world = yaml.safe_load(p.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            ck.issues.append(f"world: cannot read {p}: {exc}")
    elif isinstance(w, dict):
        world = dict(w)
    elif w is not None:
        ck.issues.append("world: expected a mapping or a file path")
    if env == "custom" and not world:
        ck.issues.append("world: env custom needs a world block or file")
    if env == "task_assign" and world:
        ck.issues.append("world: not used by task_assign (use the task block)")
    task = ck.block(raw, "task", {"availability", "law", "rewards", "partition_counts", "yield_threshold"})
    if task and env != "task_assign":
        ck.issues.append("task: only valid with env task_assign")

    am = ck.block(raw, "action_model", {"n_directions", "step_target", "step_support", "step_sigma",
                                        "angle_sigma", "yield_threshold"})
    if am and env == "task_assign":
        ck.issues.append("action_model: task_assign derives its actions from the server roster")
    am = dict(am)
    if "step_support" in am:
        am["step_support"] = tuple(am["step_support"])
    if env != "task_assign":
        ck.attempt("action_model", lambda: clock_navigation_model(**am))

    # kernel
    kb = ck.block(raw, "kernel", {"kind", "signal_amplitude", "noise_scale", "length_scales", "length_bounds"})
    kd = default_kernel(env)
    kd.update(kb)
    sdim, adim = (3, 6) if env == "task_assign" else (2, 2)
    kernel = ck.attempt("kernel", lambda: KernelHyperparameters.from_dict(
        {**kd, "state_dim": sdim, "action_dim": adim}))
    if kernel is None:
        kernel = KernelHyperparameters.from_dict({**default_kernel(env), "state_dim": sdim, "action_dim": adim})

    # memory and schedule
    mb = ck.block(raw, "memory", {"pos_quota", "neg_quota", "tau", "grid"})
    sb = ck.block(raw, "schedule", {"alpha", "gamma", "temperature", "ard_period", "ard_growth",
                                    "ard_period_cap", "ard_max_iters", "clusters", "warmup", "knn",
                                    "tau_prime", "kmeans_restarts"})
    pos_q = ck.integer(mb, "pos_quota", "memory.pos_quota", 10 if env == "task_assign" else 3, lo=1)
    neg_q = ck.integer(mb, "neg_quota", "memory.neg_quota", 10 if env == "task_assign" else 3, lo=1)
    tau = ck.number(mb, "tau", "memory.tau", 0.5 if env == "task_assign" else 0.05, lo=0.0, hi=1.0, lo_open=True)
    if tau >= 1.0:
        ck.issues.append("memory.tau: must be < 1")
        tau = 0.5
    if "grid" in mb:
        grid = mb["grid"]
        if env == "task_assign":
            task = {**task, "partition_counts": grid}
        elif list(grid) != list((world.get("grid") if world else
                                 nav_default_configs().get(env, NavWorld()).grid)):
            ck.issues.append("memory.grid: navigation partitions follow the world grid")

    temp = sb.get("temperature") or {}
    if not isinstance(temp, dict):
        ck.issues.append("schedule.temperature: expected a mapping")
        temp = {}
    schedule_temp = ck.attempt("schedule.temperature", lambda: TemperatureSchedule(**temp),
                               TemperatureSchedule())
    ard = ck.attempt("kernel.length_bounds", lambda: _ard(kd, sb, kernel), gpr.ArdConfig())

    alpha = ck.number(sb, "alpha", "schedule.alpha", 0.5, lo=0.0, hi=1.0)
    gamma = ck.number(sb, "gamma", "schedule.gamma", 0.99, lo=0.0, hi=1.0)
    out = ck.block(raw, "output", {"dir", "snapshot_every", "field_resolution", "final_window", "jobs"})
    snapshot_every = ck.integer(out, "snapshot_every", "output.snapshot_every", 0, lo=0)
    is_task = env == "task_assign"
    rf = ck.attempt("schedule", lambda: RfSarsaConfig(
        alpha=alpha, gamma=gamma, temperature=schedule_temp, tau=tau,
        ard_period=ck.integer(sb, "ard_period", "schedule.ard_period", 10 if is_task else 200, lo=1),
        ard_growth=ck.integer(sb, "ard_growth", "schedule.ard_growth", 10 if is_task else 200, lo=0),
        ard_period_cap=ck.integer(sb, "ard_period_cap", "schedule.ard_period_cap",
                                  100 if is_task else 2000, lo=1, allow_none=True),
        ard=ard, episodes=episodes, step_cap=step_cap, pos_quota=pos_q, neg_quota=neg_q,
        snapshot_every=snapshot_every), RfSarsaConfig())
    gs = ck.attempt("schedule", lambda: GSarsaConfig(
        p=ck.integer(sb, "clusters", "schedule.clusters", 10, lo=2),
        alpha=alpha, gamma=gamma, temperature=schedule_temp, tau=tau,
        knn=ck.integer(sb, "knn", "schedule.knn", 5, lo=1),
        warmup=ck.integer(sb, "warmup", "schedule.warmup", 200, lo=0),
        period=ck.integer(sb, "ard_period", "schedule.ard_period", 10 if is_task else 200, lo=1),
        period_growth=ck.integer(sb, "ard_growth", "schedule.ard_growth", 10 if is_task else 200, lo=0),
        period_cap=ck.integer(sb, "ard_period_cap", "schedule.ard_period_cap",
                              100 if is_task else 2000, lo=1, allow_none=True),
        tau_prime=ck.number(sb, "tau_prime", "schedule.tau_prime", 0.0, lo=0.0, hi=0.999),
        kmeans_restarts=ck.integer(sb, "kmeans_restarts", "schedule.kmeans_restarts", 10, lo=1),
        ard=ard, episodes=episodes, step_cap=step_cap, pos_quota=pos_q, neg_quota=neg_q,
        snapshot_every=snapshot_every), GSarsaConfig())

    out_dir = out.get("dir", "runs")
    if not isinstance(out_dir, str) or not out_dir:
        ck.issues.append("output.dir: expected a non-empty path string")
        out_dir = "runs"
    cfg = RunConfig(
        algos=algos, env=env, seeds=tuple(seeds), episodes=episodes, step_cap=step_cap,
        kernel=kernel, rf=rf, gs=gs, world=world, action_model=am, task=dict(task),
        out_dir=out_dir, snapshot_every=snapshot_every,
        field_resolution=ck.integer(out, "field_resolution", "output.field_resolution", 4, lo=1),
        final_window=ck.integer(out, "final_window", "output.final_window", 50, lo=1),
        jobs=ck.integer(out, "jobs", "output.jobs", 1, lo=1),
        raw=raw,
    )
    if not ck.issues:
        ck.attempt("world" if env != "task_assign" else "task", cfg.build_env)
    if ck.issues:
        raise ConfigValidationError(ck.issues)
    return cfg


def _ard(kd: dict, sb: dict, kernel: KernelHyperparameters) -> gpr.ArdConfig:
    bounds = kd.get("length_bounds", (1e-3, 1e4))
    cfg = gpr.ArdConfig(max_iters=int(sb.get("ard_max_iters", 30)),
                        length_bounds=tuple(tuple(b) for b in bounds)
                        if bounds and isinstance(bounds[0], (list, tuple)) else tuple(bounds))
    cfg.length_box(kernel.dim)
    return cfg


def load_config(path, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Read a YAML file, apply CLI-style overrides, validate."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigValidationError([f"config: cannot read {path}: {exc.strerror}"]) from None
    except yaml.YAMLError as exc:
        raise ConfigValidationError([f"config: not valid YAML: {exc}"]) from None
    raw = dict(raw) if isinstance(raw, dict) else raw
    if isinstance(raw, dict):
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key == "out":
                raw["output"] = {**(raw.get("output") or {}), "dir": value}
            elif key == "seed":
                raw["seeds"] = [value]
            else:
                raw[key] = value
    return parse_config(raw, path.parent)
