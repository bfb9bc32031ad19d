"""Greedy-direction field over a navigation world, as records, CSV and SVG."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from ..envs.navigation import NavWorld, nav_step

__all__ = ["FieldPlotRecord", "field_plot", "write_field_csv", "render_svg", "points_into_obstacle",
           "FIELD_COLUMNS"]


@dataclass(frozen=True)
class FieldPlotRecord:
    x: float
    y: float
    dir_x: float
    dir_y: float
    best_primitive: int
    fitness: float
    degenerate: bool = False


FIELD_COLUMNS = tuple(f.name for f in fields(FieldPlotRecord))


def _test_points(world: NavWorld, resolution: int) -> np.ndarray:
    offs = (np.arange(resolution) + 0.5) / resolution
    pts = []
    for cy in range(world.grid[1]):
        for cx in range(world.grid[0]):
            for oy in offs:
                for ox in offs:
                    pts.append(((cx + ox) * world.cell_w, (cy + oy) * world.cell_h))
    return np.array(pts)


def field_plot(model, world: NavWorld, resolution: int = 4, action_model=None) -> List[FieldPlotRecord]:
    """Score every primitive's noiseless target at evenly spaced points.

    ``model`` is a fitted :class:`~grl.gpr.GprModel` or ``None``.  Records
    come cell by cell in row-major order.  Without a model (or when every
    score is zero) records are flagged ``degenerate`` and point along the
    lowest-index primitive.
    """
    if resolution < 1:
        raise ValueError("resolution must be at least 1")
    am = action_model or world.action_model
    targets = np.vstack([am.target_vector(i) for i in am.indices])
    pts = _test_points(world, resolution)
    n, k = len(pts), len(targets)
    X = np.hstack((np.repeat(pts, k, axis=0), np.tile(targets, (n, 1))))
    fit = np.zeros((n, k)) if model is None else model.mean(X).reshape(n, k)
    degenerate = model is None or not np.any(fit)
    best = np.argmax(fit, axis=1)
    out = []
    for (x, y), b, row in zip(pts, best, fit):
        phi = targets[b, 1]
        out.append(FieldPlotRecord(float(x), float(y), math.cos(phi), math.sin(phi),
                                   int(am.indices[b]), float(row[b]), bool(degenerate)))
    return out


def points_into_obstacle(rec: FieldPlotRecord, world: NavWorld, action_model=None) -> bool:
    """Would the noiseless greedy move from this test point touch an obstacle?"""
    am = action_model or world.action_model
    _, _, _, event = nav_step((rec.x, rec.y), am.target_vector(rec.best_primitive), world)
    return event == "obstacle"


def write_field_csv(records: Iterable[FieldPlotRecord], path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_COLUMNS)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else (int(v) if isinstance(v, bool) else v)
                        for v in astuple(r)])


def render_svg(records: Sequence[FieldPlotRecord], world: NavWorld, resolution: int,
               particles: Optional[Sequence] = None, scale: float = 60.0) -> str:
    """Grid, shaded goal and obstacles, one unit arrow per record.

    Arrow length is fixed at 80% of the spacing between test points, so only
    direction is shown.  ``particles`` (optional) are drawn as dots.
    """
    W, H = world.width * scale, world.height * scale
    sx = lambda x: x * scale           # noqa: E731
    sy = lambda y: H - y * scale       # noqa: E731  (y up)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}" '
             f'viewBox="0 0 {W:.0f} {H:.0f}">',
             '<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" '
             'orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="#222"/></marker></defs>',
             f'<rect width="{W:.0f}" height="{H:.0f}" fill="white"/>']

    def cell_rect(c, colour):
        x0, y1 = sx(c[0] * world.cell_w), sy((c[1] + 1) * world.cell_h)
        parts.append(f'<rect x="{x0:.2f}" y="{y1:.2f}" width="{world.cell_w * scale:.2f}" '
                     f'height="{world.cell_h * scale:.2f}" fill="{colour}"/>')

    for c in sorted(world.obstacle_cells):
        cell_rect(c, "#555")
    cell_rect(world.goal_cell, "#9d9")
    cell_rect(world.start_cell, "#ddf")
    for i in range(world.grid[0] + 1):
        x = sx(i * world.cell_w)
        parts.append(f'<line x1="{x:.2f}" y1="0" x2="{x:.2f}" y2="{H:.0f}" stroke="#aaa"/>')
    for j in range(world.grid[1] + 1):
        y = sy(j * world.cell_h)
        parts.append(f'<line x1="0" y1="{y:.2f}" x2="{W:.0f}" y2="{y:.2f}" stroke="#aaa"/>')
    if particles:
        for p in particles:
            s = p.aug.state_vec
            colour = "#c33" if not p.positive else "#36c"
            parts.append(f'<circle cx="{sx(s[0]):.2f}" cy="{sy(s[1]):.2f}" r="2" fill="{colour}" '
                         'fill-opacity="0.5"/>')
    half = 0.4 * min(world.cell_w, world.cell_h) / resolution * scale
    for r in records:
        x0, y0 = sx(r.x) - half * r.dir_x, sy(r.y) + half * r.dir_y
        x1, y1 = sx(r.x) + half * r.dir_x, sy(r.y) - half * r.dir_y
        colour = "#bbb" if r.degenerate else "#222"
        parts.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
                     f'stroke="{colour}" stroke-width="1.2" marker-end="url(#head)"/>')
    if records and records[0].degenerate:
        parts.append(f'<text x="6" y="16" font-size="12" fill="#c33">degenerate: no fitted field</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
