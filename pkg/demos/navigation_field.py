"""Train RF-SARSA on the open 5x5 world and print its greedy field as arrows.

Run from the repository root:  python3 demos/navigation_field.py [episodes]
"""
import sys
from pathlib import Path

import numpy as np

from grl.harness.config import load_config
from grl.harness.fieldplot import field_plot
from grl.rf_sarsa import run_rf_sarsa

COMPASS = ">/^\\<\\v/"  # east, then counter-clockwise in 45 degree steps


def arrow(dx, dy):
    return COMPASS[int(round(np.arctan2(dy, dx) / (np.pi / 4))) % 8]

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 200
cfg = load_config(Path(__file__).parent.parent / "configs" / "nav_5x5.yaml", {"episodes": episodes})
world = cfg.build_env()
log = run_rf_sarsa(world, cfg.rf, cfg.kernel, seed=0)

rewards = log.rewards
print(f"episodes {len(rewards)}, last-50 median reward {np.median(rewards[-50:]):.1f}, "
      f"memory {len(log.memory.all_particles)} particles")
print("learned length scales:", np.round(log.hyper.length_scales, 3))

# resolution 1 puts a single test point at each cell centre
records = field_plot(log.fitness_field.refresh(), world, resolution=1)
grid = {world.cell_at((r.x, r.y)): arrow(r.dir_x, r.dir_y) for r in records}
nx, ny = world.grid
for j in reversed(range(ny)):
    print(" ".join("G" if (i, j) == world.goal_cell else grid[(i, j)] for i in range(nx)))
