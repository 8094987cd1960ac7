"""The robot's partial occupancy + semantic map."""

from __future__ import annotations

import numpy as np

from . import _kernels
from .gridworld import (
    Observation, Pose, RESOLUTION, NUM_CATEGORIES, dumps_grid, forward_target,
    point_to_cell,
)

UNKNOWN = 0
OCCUPIED = 1
FREE = 2


class PartialMap:
    """Tri-state occupancy belief (0 unknown, 1 occupied, 2 free) plus semantics.

    ``version`` increments whenever integration changes any cell, which lets
    callers cache work per map state.
    """

    def __init__(self, height: int, width: int, resolution: float = RESOLUTION,
                 num_categories: int = NUM_CATEGORIES):
        if height <= 0 or width <= 0:
            raise ValueError("map dimensions must be positive")
        self.occupancy = np.zeros((height, width), dtype=np.uint8)
        self.semantic = np.zeros((height, width), dtype=np.int16)
        self.resolution = resolution
        self.num_categories = num_categories
        self.version = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def free(self) -> np.ndarray:
        return self.occupancy == FREE

    @property
    def unknown(self) -> np.ndarray:
        return self.occupancy == UNKNOWN

    @property
    def known_count(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    def unknown_fraction(self) -> float:
        return 1.0 - self.known_count / self.occupancy.size

    def copy(self) -> "PartialMap":
        out = PartialMap(self.height, self.width, self.resolution, self.num_categories)
        out.occupancy[:] = self.occupancy
        out.semantic[:] = self.semantic
        out.version = self.version
        return out

    def in_bounds(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def __eq__(self, other):
        if not isinstance(other, PartialMap):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.occupancy, other.occupancy)
                and np.array_equal(self.semantic, other.semantic))

    def dumps(self) -> str:
        """Text dump in the world-file layout, ``?`` marking unknown cells."""
        chars = np.array(["?", "#", "."])[self.occupancy]
        return dumps_grid(chars, self.semantic, self.resolution, self.num_categories)


def new_partial_map(dims, resolution: float = RESOLUTION,
                    num_categories: int = NUM_CATEGORIES) -> PartialMap:
    """Fresh all-unknown map. ``dims`` is ``(height, width)`` or an environment."""
    if hasattr(dims, "shape") and hasattr(dims, "resolution"):
        return PartialMap(*dims.shape, dims.resolution, getattr(dims, "num_categories", num_categories))
    height, width = dims
    return PartialMap(height, width, resolution, num_categories)


def integrate(pmap: PartialMap, obs: Observation) -> PartialMap:
    """Write revealed cells into ``pmap`` in place and return it.

    Observations with out-of-bounds cells are rejected whole.
    """
    if len(obs) == 0:
        return pmap
    rows, cols = obs.rows, obs.cols
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= pmap.height or cols.max() >= pmap.width:
        raise ValueError("observation contains cells outside the map")
    changed = (np.any(pmap.occupancy[rows, cols] != obs.occupancy)
               or np.any(pmap.semantic[rows, cols] != obs.semantic))
    if changed:
        pmap.occupancy[rows, cols] = obs.occupancy
        pmap.semantic[rows, cols] = obs.semantic
        pmap.version += 1
    return pmap


def mark_collision(pmap: PartialMap, pose: Pose, env_occupied: np.ndarray) -> bool:
    """Mark the first blocking cell ahead of a failed Forward as occupied.

    Returns True if the map changed. The blocking cell is taken from the
    ground-truth ``env_occupied`` grid, as bump feedback would report it.
    """
    res = pmap.resolution
    x1, y1 = forward_target(pose)
    cap = 64
    rr = np.empty(cap, dtype=np.int64)
    cc = np.empty(cap, dtype=np.int64)
    n = _kernels.segment_cells(pose.x / res, pose.y / res, x1 / res, y1 / res, rr, cc)
    for r, c in zip(rr[:n], cc[:n]):
        if env_occupied[r, c]:
            if pmap.occupancy[r, c] != OCCUPIED:
                pmap.occupancy[r, c] = OCCUPIED
                pmap.version += 1
                return True
            return False
    return False


def free_space_field(pmap: PartialMap, source) -> np.ndarray:
    """Distance field (meters) over known free cells from one ``(row, col)``."""
    trav = pmap.free
    r, c = source
    if not trav[r, c]:
        return np.full(pmap.shape, np.inf)
    return _kernels.dijkstra(trav, np.array([r]), np.array([c]), pmap.resolution, -1, -1, 0.0)


def goal_reachable_known(pmap: PartialMap, pose: Pose, goal) -> bool:
    """True iff known free cells join the robot's cell to the goal's cell.

    Uses 8-connectivity without corner cutting.
    """
    res = pmap.resolution
    start = pose.cell(res)
    target = point_to_cell(goal[0], goal[1], res)
    if not pmap.in_bounds(target) or not pmap.in_bounds(start):
        return False
    trav = pmap.free
    if not trav[start] or not trav[target]:
        return False
    d = _kernels.dijkstra(trav, np.array([start[0]]), np.array([start[1]]), res,
                          target[0], target[1], 0.0)
    return bool(np.isfinite(d[target]))
