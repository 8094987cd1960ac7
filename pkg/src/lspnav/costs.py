"""Geodesic distance fields, paths and primitive-action selection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels
from .gridworld import Action, Pose, cell_center
from .mapping import FREE, OCCUPIED, PartialMap

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Exact 8-connected geodesic distances (meters) to the nearest source.

    Unreachable cells hold ``inf``. ``traversable`` is the mask the field was
    computed over and defines which moves a path may take.
    """

    values: np.ndarray
    sources: tuple
    traversable: np.ndarray
    resolution: float

    def __getitem__(self, cell):
        return self.values[cell]


def _as_cells(sources) -> np.ndarray:
    arr = np.asarray(list(sources) if not isinstance(sources, np.ndarray) else sources,
                     dtype=np.int64)
    return arr.reshape(-1, 2)


def grid_field(trav: np.ndarray, sources, resolution: float, stop=None,
               stop_margin: float = 0.0) -> np.ndarray:
    """Raw Dijkstra array; see ``_kernels.dijkstra`` for the ``stop`` semantics."""
    src = _as_cells(sources)
    sr, sc = (-1, -1) if stop is None else stop
    return _kernels.dijkstra(np.ascontiguousarray(trav, dtype=bool), src[:, 0].copy(),
                             src[:, 1].copy(), resolution, sr, sc, stop_margin)


def distance_field(pmap: PartialMap, sources, traversable=None) -> DistanceField:
    """Distance field over ``traversable`` (default: known free cells).

    ``traversable`` may be a boolean mask or a callable taking the map.
    """
    if traversable is None:
        trav = pmap.occupancy == FREE
    elif callable(traversable):
        trav = np.asarray(traversable(pmap), dtype=bool)
    else:
        trav = np.asarray(traversable, dtype=bool)
    src = _as_cells(sources)
    if len(src) == 0:
        raise ValueError("distance_field needs at least one source")
    if not trav[src[:, 0], src[:, 1]].all():
        raise ValueError("every source cell must be traversable")
    values = grid_field(trav, src, pmap.resolution)
    return DistanceField(values, tuple(map(tuple, src.tolist())), trav, pmap.resolution)


def known_distance(pmap: PartialMap, start, end) -> float:
    """Known-space geodesic between two cells; ``inf`` when unreachable."""
    trav = pmap.occupancy == FREE
    if not trav[tuple(start)] or not trav[tuple(end)]:
        return math.inf
    d = grid_field(trav, [start], pmap.resolution, stop=tuple(end))
    return float(d[tuple(end)])


def pairwise_subgoal_distances(pmap: PartialMap, pose: Pose, frontiers,
                               robot_field: np.ndarray | None = None) -> np.ndarray:
    """(n+1)x(n+1) table of known-space geodesics; index 0 is the robot."""
    trav = pmap.occupancy == FREE
    res = pmap.resolution
    points = [pose.cell(res)] + [f.centroid for f in frontiers]
    n = len(points)
    table = np.zeros((n, n))
    for i in range(n):
        if i == 0 and robot_field is not None:
            field = robot_field
        else:
            # stop once the farthest remaining target is settled
            field = _field_to_targets(trav, points[i], points[i + 1:], res)
        for j in range(i + 1, n):
            table[i, j] = table[j, i] = field[points[j]]
    return table


def _field_to_targets(trav, source, targets, res):
    if not targets:
        return np.zeros(trav.shape)
    if not trav[source]:
        return np.full(trav.shape, np.inf)
    full = grid_field(trav, [source], res)
    return full


def inflated_free(pmap: PartialMap, radius: int = 1) -> np.ndarray:
    """Known free cells at least ``radius`` cells (Chebyshev) from any obstacle."""
    free = pmap.occupancy == FREE
    if radius <= 0:
        return free
    occ = pmap.occupancy == OCCUPIED
    grown = ndimage.binary_dilation(occ, structure=np.ones((3, 3), dtype=bool), iterations=radius)
    return free & ~grown


def extract_path(field: DistanceField, start) -> list[tuple[int, int]]:
    """Descend the field from ``start`` to a source along shortest-path moves.

    Each step goes to a neighbour ``n`` minimising ``field[n] + step(n)``
    (ties: lower ``field[n]``, then neighbour order), so values strictly
    decrease and the path length equals the start value.
    """
    values = field.values
    trav = field.traversable
    res = field.resolution
    r, c = int(start[0]), int(start[1])
    if not np.isfinite(values[r, c]):
        raise ValueError("no path: start is unreachable in this field")
    h, w = values.shape
    path = [(r, c)]
    limit = h * w
    while values[r, c] > 0.0 and len(path) <= limit:
        best = None
        for k in range(8):
            nr = r + int(_kernels.NBR_DR[k])
            nc = c + int(_kernels.NBR_DC[k])
            if not (0 <= nr < h and 0 <= nc < w) or not trav[nr, nc]:
                continue
            if k >= 4:
                if not trav[r, nc] or not trav[nr, c]:
                    continue
                cost = res * SQRT2
            else:
                cost = res
            v = values[nr, nc]
            if not v < values[r, c]:
                continue
            key = (v + cost, v)
            if best is None or key < best[0]:
                best = (key, nr, nc)
        if best is None:
            break
        _, r, c = best
        path.append((r, c))
    return path


def path_length(path, resolution: float) -> float:
    total = 0.0
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        total += resolution * (SQRT2 if r0 != r1 and c0 != c1 else 1.0)
    return total


def angle_diff(a: float, b: float) -> float:
    """``a - b`` wrapped to (-180, 180]."""
    d = (a - b) % 360.0
    return d - 360.0 if d > 180.0 else d


def next_action(path, pose: Pose, lookahead: int = 5, resolution: float = 0.05,
                gate: float = 15.0) -> Action:
    """Turn toward, or move toward, the waypoint ``lookahead`` cells along ``path``.

    Forward when the bearing error is within ``gate`` degrees; otherwise the
    turn that reduces the error, preferring a left turn at exactly 180.
    """
    if not path:
        raise ValueError("next_action needs a nonempty path")
    wx, wy = cell_center(path[min(lookahead, len(path) - 1)], resolution)
    dx, dy = wx - pose.x, wy - pose.y
    if math.hypot(dx, dy) < 1e-12:
        return Action.TURN_LEFT
    bearing = math.degrees(math.atan2(dy, dx))
    err = angle_diff(bearing, pose.heading)
    if abs(err) <= gate + 1e-9:
        return Action.FORWARD
    if err >= 180.0 - 1e-9:
        return Action.TURN_LEFT
    return Action.TURN_RIGHT if err > 0 else Action.TURN_LEFT
