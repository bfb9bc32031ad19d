"""G-SARSA against the matchmaker and random baselines on the task-to-server world.

Run from the repository root:  python3 demos/task_assignment.py [episodes]
"""
import sys
from pathlib import Path

import numpy as np

from grl.g_sarsa import run_g_sarsa
from grl.harness.config import load_config
from grl.harness.runner import cluster_report, run_baseline

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 1200
cfg = load_config(Path(__file__).parent.parent / "configs" / "task_assign.yaml", {"episodes": episodes})
window = min(cfg.final_window, episodes // 2)

env = cfg.build_env()
log = run_g_sarsa(env, cfg.gs, cfg.kernel, seed=0)
scores = {"g_sarsa": log.rewards[-window:].mean()}
for policy in ("matchmaker", "random"):
    base = run_baseline(cfg.build_env(), policy, episodes, seed=0)
    scores[policy] = base.rewards[-window:].mean()
for name, v in scores.items():
    print(f"{name:>10}: mean reward over the last {window} tasks {v:7.2f}")

print("\nabstract actions learned by spectral clustering of the memory:")
print(" id  size  mean fitness  matched")
for row in cluster_report(log.memory.all_particles, log.aset.p, True):
    fit = "-" if row["mean_fitness"] is None else f"{row['mean_fitness']:.2f}"
    print(f"{row['cluster']:>3} {row['size']:>5} {fit:>13}  {row['matched']}")
print("\nsuccess ratio per abstract action:", np.round(log.aset.beta, 3))
