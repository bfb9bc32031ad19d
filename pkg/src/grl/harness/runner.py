"""Execute every (algorithm, seed) pair of a run config and write artifacts.

Layout under the output directory::

    summary.json
    <algo>/seed_<n>/learning_curve.csv
    <algo>/seed_<n>/run.json
    <algo>/seed_<n>/snapshots/episode_<k>.tsv, final.tsv     (learners)
    <algo>/seed_<n>/field_plot.csv, field_plot.svg           (learners on navigation)
    <algo>/seed_<n>/clusters.json                            (g_sarsa)
    <algo>/seed_<n>/error.json                               (only after a fault)
"""

from __future__ import annotations

import csv
import json
import logging
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..envs.navigation import NavWorld, neighbours
from ..envs.tasks import TaskServerWorld, matchmaker_policy, random_policy
from ..g_sarsa import run_g_sarsa
from ..memory import save_snapshot
from ..rf_sarsa import EpisodeRecord, TrainingLog, run_rf_sarsa
from ..rng import Streams
from .config import RunConfig
from .fieldplot import field_plot, points_into_obstacle, render_svg, write_field_csv
from .summary import summarize

__all__ = ["BASE_COLUMNS", "G_SARSA_COLUMNS", "OUTPUT_ROOT_ENV", "RunResult", "output_root",
           "run", "run_one", "cluster_report", "run_baseline"]

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "GRL_OUTPUT_ROOT"
BASE_COLUMNS = ("episode", "total_reward", "steps", "lml", "memory_size", "outcome")
G_SARSA_COLUMNS = ("abstract_chosen", "resolved_primitive", "in_context", "cluster_count", "reindex_events")
MATCHMAKER_COLUMNS = ("server", "fallback")


@dataclass
class RunResult:
    algo: str
    seed: int
    directory: str
    rewards: List[float]
    memory_sizes: List[int]
    outcomes: List[str]
    error: Optional[str] = None
    metrics: dict = field(default_factory=dict)


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return v


def write_curve(rows: List[EpisodeRecord], path: Path, extra: tuple = ()):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BASE_COLUMNS + extra)
        for r in rows:
            w.writerow([_fmt(v) for v in (r.episode, r.total_reward, r.steps, r.lml, r.memory_size,
                                          r.outcome)] + [_fmt(r.extra.get(c)) for c in extra])


def _dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def run_baseline(env, policy: str, episodes: int, seed: int, step_cap: Optional[int] = None) -> TrainingLog:
    """Fixed policies: ``matchmaker`` (task domain only) or ``random``."""
    streams = Streams(seed)
    env_rng, pol_rng = streams.env, streams.policy
    out = TrainingLog()
    cap = step_cap or env.max_steps
    try:
        for ep in range(episodes):
            s = env.reset(env_rng)
            total, steps, extra = 0.0, 0, {}
            outcome = "timeout"
            for _ in range(cap):
                if isinstance(env, TaskServerWorld):
                    fn = matchmaker_policy if policy == "matchmaker" else random_policy
                    prim, fell_back = fn(env, s, pol_rng)
                    extra = {"server": prim, "fallback": fell_back}
                else:
                    prims = env.primitives
                    prim = prims[int(pol_rng.integers(len(prims)))]
                s, r, terminal = env.step(s, env.action_vector(prim, pol_rng), env_rng)
                total += r
                steps += 1
                out.transitions += 1
                if terminal:
                    outcome = env.last_event
                    break
            out.rows.append(EpisodeRecord(ep + 1, total, steps, float("nan"), 0, outcome, extra))
    except (ArithmeticError, ValueError) as exc:
        out.error = f"{type(exc).__name__}: {exc}"
    return out


def cluster_report(particles, p: int, task_domain: bool) -> List[dict]:
    """Size and mean fitness per cluster; task domains add the matched-context fraction."""
    groups = defaultdict(list)
    for w in particles:
        groups[w.cluster_id].append(w)
    rows = []
    for c in range(p):
        ws = groups.get(c, [])
        row = {"cluster": c, "size": len(ws),
               "mean_fitness": float(np.mean([w.fitness for w in ws])) if ws else None}
        if task_domain:
            frac = (float(np.mean([round(w.aug.state_vec[0]) == round(w.aug.action_vec[0]) for w in ws]))
                    if ws else None)
            row["matched_fraction"] = frac
            row["matched"] = None if frac is None else frac > 0.5
        rows.append(row)
    return rows


def _ordering(report: List[dict]) -> Optional[bool]:
    matched = [r["mean_fitness"] for r in report if r.get("matched") is True]
    mismatched = [r["mean_fitness"] for r in report if r.get("matched") is False]
    if not matched or not mismatched:
        return None
    return min(matched) > max(mismatched)


def _nav_field_metrics(records, world: NavWorld) -> dict:
    obstacle_adjacent = set()
    for c in world.obstacle_cells:
        obstacle_adjacent.update(n for n in neighbours(c, world) if n not in world.obstacle_cells)
    adj = [r for r in records if world.cell_at((r.x, r.y)) in obstacle_adjacent]
    into = sum(points_into_obstacle(r, world) for r in adj)
    diag = [r for r in records if (lambda c: c[0] == c[1])(world.cell_at((r.x, r.y)))]
    return {
        "records": len(records),
        "degenerate": bool(records and records[0].degenerate),
        "obstacle_adjacent_points": len(adj),
        "points_into_obstacle": int(into),
        "into_obstacle_fraction": (into / len(adj)) if adj else 0.0,
        "diagonal_points": len(diag),
        "diagonal_fraction_1_or_2": (sum(r.best_primitive in (1, 2) for r in diag) / len(diag)) if diag else 0.0,
    }


def run_one(cfg: RunConfig, algo: str, seed: int, out_dir: Path) -> RunResult:
    """Run one pair and write its artifacts; faults leave partial output plus error.json."""
    run_dir = Path(out_dir) / algo / f"seed_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    env = cfg.build_env()
    extra: tuple = ()
    if algo == "rf_sarsa":
        lg = run_rf_sarsa(env, cfg.rf, cfg.kernel, seed)
    elif algo == "g_sarsa":
        lg = run_g_sarsa(env, cfg.gs, cfg.kernel, seed)
        extra = G_SARSA_COLUMNS
    else:
        policy = algo.split("_", 1)[1]
        lg = run_baseline(env, policy, cfg.episodes, seed, cfg.step_cap)
        extra = MATCHMAKER_COLUMNS if isinstance(env, TaskServerWorld) else ()

    write_curve(lg.rows, run_dir / "learning_curve.csv", extra)
    rewards = [r.total_reward for r in lg.rows]
    outcomes = [r.outcome for r in lg.rows]
    window = outcomes[-cfg.final_window:]
    metrics: dict = {"episodes_completed": len(lg.rows), "transitions": lg.transitions}
    if window:
        counts = {k: window.count(k) for k in sorted(set(window))}
        metrics["final_outcomes"] = counts
        metrics["obstacle_hit_rate"] = counts.get("obstacle", 0) / len(window)
    info = {"algo": algo, "seed": seed, "env": cfg.env, "episodes": cfg.episodes,
            "transitions": lg.transitions, "error": lg.error}

    if lg.memory is not None:
        snap_dir = run_dir / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for ep, parts in lg.snapshots:
            save_snapshot(parts, snap_dir / f"episode_{ep:06d}.tsv", env.state_dim, env.action_dim)
        save_snapshot(lg.memory.all_particles, snap_dir / "final.tsv", env.state_dim, env.action_dim)
        info["final_kernel"] = lg.hyper.to_dict()
        info["ard_events"] = list(lg.ard_events)
        metrics["memory_max"] = max((r.memory_size for r in lg.rows), default=0)
        if isinstance(env, NavWorld):
            model = lg.fitness_field.refresh()
            records = field_plot(model, env, cfg.field_resolution)
            write_field_csv(records, run_dir / "field_plot.csv")
            (run_dir / "field_plot.svg").write_text(
                render_svg(records, env, cfg.field_resolution, lg.memory.all_particles))
            metrics["field"] = _nav_field_metrics(records, env)
    if algo == "g_sarsa" and lg.memory is not None:
        aset = lg.aset
        report = cluster_report(lg.memory.all_particles, aset.p, isinstance(env, TaskServerWorld))
        _dump({"beta": aset.beta, "selections": aset.selections, "successes": aset.successes,
               "reindex_maps": [{"transition": t, "map": None if m is None else {str(k): v for k, v in m.items()}}
                                for t, m in lg.reindex_maps],
               "clusters": report}, run_dir / "clusters.json")
        metrics["clusters"] = report
        metrics["cluster_ordering_holds"] = _ordering(report)
    if lg.error:
        _dump({"algo": algo, "seed": seed, "error": lg.error, "episodes_completed": len(lg.rows)},
              run_dir / "error.json")
    _dump(info, run_dir / "run.json")
    return RunResult(algo, seed, str(run_dir), rewards, [r.memory_size for r in lg.rows], outcomes,
                     lg.error, metrics)


def _run_pair(args):
    cfg, algo, seed, out_dir = args
    try:
        return run_one(cfg, algo, seed, out_dir)
    except Exception as exc:  # last-resort guard so sibling runs still finish
        run_dir = Path(out_dir) / algo / f"seed_{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        msg = f"{type(exc).__name__}: {exc}"
        _dump({"algo": algo, "seed": seed, "error": msg}, run_dir / "error.json")
        return RunResult(algo, seed, str(run_dir), [], [], [], msg)


def resolve_out(cfg: RunConfig) -> Path:
    p = Path(cfg.out_dir)
    return p if p.is_absolute() else output_root() / p


def run(cfg: RunConfig, out_dir: Optional[Path] = None):
    """Run everything; returns ``(out_dir, summary, ok)``."""
    out = Path(out_dir) if out_dir is not None else resolve_out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, a, s, out) for a in cfg.algos for s in cfg.seeds]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_pair, jobs))
    else:
        results = [_run_pair(j) for j in jobs]

    curves: Dict[str, Dict[int, list]] = defaultdict(dict)
    memory: Dict[str, Dict[int, list]] = defaultdict(dict)
    for r in results:
        if r.rewards:
            curves[r.algo][r.seed] = r.rewards
            memory[r.algo][r.seed] = r.memory_sizes
    summary = {"env": cfg.env, "algos": list(cfg.algos), "seeds": list(cfg.seeds),
               "episodes": cfg.episodes, "final_window": cfg.final_window,
               "stats": summarize(curves, cfg.final_window, memory) if curves else {},
               "runs": [{"algo": r.algo, "seed": r.seed, "error": r.error, "metrics": r.metrics}
                        for r in results]}
    stats = summary["stats"]
    if "task_assign" == cfg.env and stats:
        ref = {a: stats[a]["mean_of_means"] for a in stats}
        cmp = {}
        for a, v in ref.items():
            if "baseline_matchmaker" in ref and a != "baseline_matchmaker":
                cmp[f"{a}/matchmaker"] = v / ref["baseline_matchmaker"] if ref["baseline_matchmaker"] else None
            if "baseline_random" in ref and a != "baseline_random":
                cmp[f"{a}/random"] = v / ref["baseline_random"] if ref["baseline_random"] else None
        summary["comparison"] = cmp
    ok = all(r.error is None for r in results)
    summary["status"] = "ok" if ok else "failed"
    _dump(summary, out / "summary.json")
    return out, summary, ok
