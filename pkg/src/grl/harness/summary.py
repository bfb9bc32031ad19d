"""Final-window statistics and convergence points for learning curves."""

from __future__ import annotations

from typing import Dict, Mapping, Optional, Sequence

import numpy as np

__all__ = ["final_window_stats", "convergence_episode", "summarize"]


def final_window_stats(rewards: Sequence[float], window: int = 50) -> dict:
    """Median, IQR and mean of the last ``window`` rewards (all of them if fewer)."""
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ValueError("an empty curve has no final window")
    tail = r[-window:]
    q1, med, q3 = np.percentile(tail, [25, 50, 75])
    return {"median": float(med), "iqr": float(q3 - q1), "q1": float(q1), "q3": float(q3),
            "mean": float(tail.mean()), "window": int(tail.size)}


def convergence_episode(rewards: Sequence[float], window: int = 50, fraction: float = 0.9) -> Optional[int]:
    """First 1-based episode whose trailing median reaches ``fraction`` of the final median.

    "Reaching" a negative final value means coming within ``1 - fraction`` of
    its magnitude from below.
    """
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        return None
    final = final_window_stats(r, window)["median"]
    target = final - (1.0 - fraction) * abs(final)
    for e in range(1, r.size + 1):
        if np.median(r[max(0, e - window):e]) >= target:
            return e
    return None


def summarize(curves: Mapping[str, Mapping[int, Sequence[float]]], window: int = 50,
              memory: Optional[Mapping[str, Mapping[int, Sequence[int]]]] = None) -> Dict[str, dict]:
    """Per-algorithm statistics over ``{algo: {seed: rewards}}``."""
    if not curves:
        raise ValueError("summarize needs at least one curve")
    out: Dict[str, dict] = {}
    for algo, by_seed in curves.items():
        seeds = {}
        for seed, rewards in sorted(by_seed.items()):
            st = final_window_stats(rewards, window)
            st["convergence_episode"] = convergence_episode(rewards, window)
            st["episodes"] = len(rewards)
            if memory and algo in memory and seed in memory[algo]:
                occ = [int(m) for m in memory[algo][seed]]
                st["memory_trace"] = occ
                st["memory_max"] = max(occ) if occ else 0
            seeds[str(seed)] = st
        medians = np.array([s["median"] for s in seeds.values()])
        means = np.array([s["mean"] for s in seeds.values()])
        out[algo] = {
            "seeds": seeds,
            "median_of_medians": float(np.median(medians)),
            "mean_of_means": float(means.mean()),
        }
    return out
