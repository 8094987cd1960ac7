"""Frontier extraction: free cells bordering unknown space, grouped 8-connected."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .mapping import FREE, UNKNOWN, PartialMap

_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True, eq=False)
class Frontier:
    """A maximal 8-connected set of frontier cells.

    ``cells`` is an ``(n, 2)`` array of ``(row, col)`` in row-major order;
    ``centroid`` is the member cell nearest the cell mean.
    """

    id: str
    cells: np.ndarray
    centroid: tuple[int, int]

    def __len__(self):
        return len(self.cells)

    def __eq__(self, other):
        return isinstance(other, Frontier) and self.id == other.id

    def __hash__(self):
        return hash(self.id)

    @classmethod
    def from_cells(cls, cells) -> "Frontier":
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        order = np.lexsort((cells[:, 1], cells[:, 0]))
        cells = np.ascontiguousarray(cells[order])
        cells.setflags(write=False)
        digest = hashlib.sha1(cells.tobytes()).hexdigest()[:16]
        return cls(digest, cells, snap_centroid(cells))


def snap_centroid(cells: np.ndarray) -> tuple[int, int]:
    """Member cell nearest the mean; ties go to the lowest ``(row, col)``."""
    mean = cells.mean(axis=0)
    d2 = ((cells - mean) ** 2).sum(axis=1)
    tied = cells[d2 <= d2.min() + 1e-12]
    r, c = min(map(tuple, tied.tolist()))
    return int(r), int(c)


def frontier_mask(pmap: PartialMap) -> np.ndarray:
    """Free cells with at least one unknown 4-neighbour."""
    unknown = pmap.occupancy == UNKNOWN
    touches = ndimage.binary_dilation(unknown, structure=_FOUR)
    return (pmap.occupancy == FREE) & touches


def extract_frontiers(pmap: PartialMap, within: np.ndarray | None = None) -> list[Frontier]:
    """All frontiers of ``pmap``, sorted by id.

    ``within`` optionally restricts frontier cells to a mask, e.g. the free
    cells the robot can actually reach.
    """
    mask = frontier_mask(pmap)
    if within is not None:
        mask &= within
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    rows, cols = np.nonzero(labels)
    lab = labels[rows, cols]
    order = np.argsort(lab, kind="stable")
    rows, cols, lab = rows[order], cols[order], lab[order]
    splits = np.flatnonzero(np.diff(lab)) + 1
    out = [Frontier.from_cells(np.stack([r, c], axis=1))
           for r, c in zip(np.split(rows, splits), np.split(cols, splits))]
    out.sort(key=lambda f: f.id)
    return out


def filter_min_size(frontiers, min_cells: int = 3) -> list[Frontier]:
    return [f for f in frontiers if len(f) >= min_cells]


def filter_reachable(frontiers, pmap: PartialMap, pose=None, robot_field=None) -> list[Frontier]:
    """Keep frontiers whose centroid is known-space reachable from the robot.

    Pass ``robot_field`` (a distance field from the robot cell over known free
    space) to skip recomputing it.
    """
    if robot_field is None:
        from .mapping import free_space_field
        robot_field = free_space_field(pmap, pose.cell(pmap.resolution))
    return [f for f in frontiers if np.isfinite(robot_field[f.centroid])]


def dumps_frontiers(pmap: PartialMap, frontiers) -> str:
    """Map dump with each frontier's cells drawn as a letter (a, b, ...)."""
    from .gridworld import dumps_grid
    chars = np.array(["?", "#", "."])[pmap.occupancy]
    letters = "abcdefghijklmnopqrstuvwxyz"
    for k, f in enumerate(frontiers):
        chars[f.cells[:, 0], f.cells[:, 1]] = letters[k % len(letters)]
    return dumps_grid(chars, pmap.semantic, pmap.resolution, pmap.num_categories)
