"""Constant-phase (Poincare) surface-of-section sampling and CSV emission.

The drive has period 2*pi, so the section samples a trajectory at
t_n = 2*pi*n.  Classical sources contribute (x, p) verbatim; quantum and
linearized sources contribute the scaled means (beta <Q>, beta <P>), which
puts every beta on the classical attractor's coordinate frame (the scaled
coordinates are documented in the CSV header).

Figure-level claims about attractor structure are checked through a coarse
occupancy grid (32x32 over a reference bounding box) compared by Jaccard
similarity, which is the machine-checkable stand-in for visual fractal
structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .fockspace import MomentSet
from .models import ClassicalState, DRIVE_PERIOD
from .trajectory import TrajectoryRecord

GRID_SIZE = 32
HEADER_PREFIX = "# qsd-lab section v1"


@dataclass(frozen=True)
class SectionPoint:
    n: int
    x: float
    p: float


def section_times(periods: int, t0: float = 0.0) -> list[float]:
    return [t0 + DRIVE_PERIOD * n for n in range(periods + 1)]


def from_classical(state: ClassicalState, n: int) -> SectionPoint:
    _check_on_grid(state.t, n)
    return SectionPoint(n, state.x, state.p)


def from_moments(m: MomentSet, n: int, beta: float, t: float) -> SectionPoint:
    _check_on_grid(t, n)
    return SectionPoint(n, beta * m.q_mean, beta * m.p_mean)


def _check_on_grid(t: float, n: int):
    if abs(t - DRIVE_PERIOD * n) > 1e-6 * max(1.0, abs(t)):
        raise ConfigError(
            f"section point {n} sampled off-grid at t={t} (expected {DRIVE_PERIOD * n})")


def record_to_points(record: TrajectoryRecord, beta: float) -> list[SectionPoint]:
    """Section points from a trajectory record sampled at t = 2*pi*n."""
    points = []
    for t, m in zip(record.times, record.moment_history):
        n = int(round(t / DRIVE_PERIOD))
        points.append(from_moments(m, n, beta, t))
    return points


def emit_section(points: list[SectionPoint], sink, *, model: str,
                 beta: float, gamma: float, g: float, seed: int):
    """Write a section CSV (UTF-8, LF): header, column line, one row per point."""
    close = False
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        sink = open(sink, "w", encoding="utf-8", newline="\n")
        close = True
    try:
        sink.write(f"{HEADER_PREFIX}; model={model}; beta={beta}; "
                   f"gamma={gamma}; g={g}; seed={seed}; coords=scaled\n")
        sink.write("n,x,p\n")
        for pt in sorted(points, key=lambda s: s.n):
            sink.write(f"{pt.n},{pt.x:.17g},{pt.p:.17g}\n")
    finally:
        if close:
            sink.close()


def parse_section(path) -> tuple[dict, list[SectionPoint]]:
    """Round-trip parse of emit_section output."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(HEADER_PREFIX):
            raise ConfigError(f"{path}: not a qsd-lab section file")
        meta = {}
        for item in header[1:].split(";")[1:]:
            key, _, value = item.strip().partition("=")
            meta[key] = value
        columns = fh.readline().rstrip("\n")
        if columns != "n,x,p":
            raise ConfigError(f"{path}: unexpected column line {columns!r}")
        points = []
        for line in fh:
            if not line.strip():
                continue
            n, x, p = line.split(",")
            points.append(SectionPoint(int(n), float(x), float(p)))
    return meta, points


def bounding_box(points: list[SectionPoint]) -> tuple[float, float, float, float]:
    """(x_min, x_max, p_min, p_max) of a point cloud."""
    xs = [pt.x for pt in points]
    ps = [pt.p for pt in points]
    return min(xs), max(xs), min(ps), max(ps)


def occupancy_grid(points: list[SectionPoint],
                   bbox: tuple[float, float, float, float],
                   size: int = GRID_SIZE) -> np.ndarray:
    """Boolean size x size grid of cells visited by the point cloud.

    Points outside the box are ignored (they simply reduce similarity
    against in-box clouds).
    """
    x0, x1, p0, p1 = bbox
    grid = np.zeros((size, size), dtype=bool)
    for pt in points:
        if not (x0 <= pt.x <= x1 and p0 <= pt.p <= p1):
            continue
        i = min(int((pt.x - x0) / (x1 - x0) * size), size - 1)
        j = min(int((pt.p - p0) / (p1 - p0) * size), size - 1)
        grid[i, j] = True
    return grid


def jaccard(grid_a: np.ndarray, grid_b: np.ndarray) -> float:
    """|A n B| / |A u B| of occupied cells; 1.0 when both grids are empty."""
    union = np.count_nonzero(grid_a | grid_b)
    if union == 0:
        return 1.0
    return np.count_nonzero(grid_a & grid_b) / union


def points_in_box(points: list[SectionPoint],
                  bbox: tuple[float, float, float, float]) -> bool:
    x0, x1, p0, p1 = bbox
    return all(x0 <= pt.x <= x1 and p0 <= pt.p <= p1 for pt in points)


def matched_differences(points_a: list[SectionPoint],
                        points_b: list[SectionPoint]):
    """RMS and max |dx|, |dp| over section points matched by period index."""
    by_n = {pt.n: pt for pt in points_b}
    sq, max_dx, max_dp, count = 0.0, 0.0, 0.0, 0
    for pa in points_a:
        pb = by_n.get(pa.n)
        if pb is None:
            continue
        dx, dp = pa.x - pb.x, pa.p - pb.p
        sq += dx * dx + dp * dp
        max_dx = max(max_dx, abs(dx))
        max_dp = max(max_dp, abs(dp))
        count += 1
    if count == 0:
        raise ConfigError("no matching period indices between sections")
    return math.sqrt(sq / count), max_dx, max_dp, count
