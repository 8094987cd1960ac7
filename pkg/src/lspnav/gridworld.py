"""Ground-truth worlds, robot kinematics and the raycast sensor.

Coordinates: ``x`` grows along columns, ``y`` along rows (rows grow "down" in
an image view). A heading of 0 degrees points along +x and headings grow
clockwise in that view, so a left turn subtracts 30 degrees.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _kernels

RESOLUTION = 0.05
NUM_CATEGORIES = 40
FORWARD_STEP = 0.25
TURN_STEP = 30
FREE = 0
OCCUPIED = 1
WALL_CATEGORY = 1


class MapFormatError(ValueError):
    """Raised when a map file or grid violates the world invariants."""


class Action(enum.Enum):
    FORWARD = "forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    STOP = "stop"


@dataclass(frozen=True)
class Pose:
    """Robot pose in meters; heading in integer degrees, a multiple of 30."""

    x: float
    y: float
    heading: int = 0

    def __post_init__(self):
        if self.heading % TURN_STEP != 0 or not 0 <= self.heading < 360:
            raise ValueError(f"heading must be a multiple of 30 in [0, 360), got {self.heading}")

    def cell(self, resolution: float = RESOLUTION) -> tuple[int, int]:
        return point_to_cell(self.x, self.y, resolution)


def point_to_cell(x: float, y: float, resolution: float = RESOLUTION) -> tuple[int, int]:
    """Cell ``(row, col)`` containing a point; boundary points go to the higher cell."""
    return int(math.floor(y / resolution + 1e-9)), int(math.floor(x / resolution + 1e-9))


def cell_center(cell, resolution: float = RESOLUTION) -> tuple[float, float]:
    """Center ``(x, y)`` in meters of a ``(row, col)`` cell."""
    r, c = cell
    return (c + 0.5) * resolution, (r + 0.5) * resolution


@dataclass(frozen=True, eq=False)
class GroundTruthEnvironment:
    """The full world. ``occupancy`` holds FREE/OCCUPIED, ``semantic`` category ids."""

    occupancy: np.ndarray
    semantic: np.ndarray
    resolution: float = RESOLUTION
    num_categories: int = NUM_CATEGORIES
    id: str = "env"
    rooms: tuple = field(default=(), repr=False)

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy, dtype=np.uint8)
        sem = np.ascontiguousarray(self.semantic, dtype=np.int16)
        occ.setflags(write=False)
        sem.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "semantic", sem)
        blocked = occ == OCCUPIED
        blocked.setflags(write=False)
        object.__setattr__(self, "occupied", blocked)
        free = ~blocked
        free.setflags(write=False)
        object.__setattr__(self, "free", free)
        validate_grids(occ, sem, self.num_categories)

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    def is_free_point(self, x: float, y: float) -> bool:
        r, c = point_to_cell(x, y, self.resolution)
        return 0 <= r < self.height and 0 <= c < self.width and bool(self.free[r, c])


def validate_grids(occ: np.ndarray, sem: np.ndarray, num_categories: int) -> None:
    if occ.shape != sem.shape:
        raise MapFormatError(f"occupancy {occ.shape} and semantic {sem.shape} differ")
    if occ.ndim != 2 or min(occ.shape) < 3:
        raise MapFormatError("grids must be 2D and at least 3x3")
    if not np.isin(occ, (FREE, OCCUPIED)).all():
        raise MapFormatError("occupancy values must be 0 (free) or 1 (occupied)")
    if sem.min() < 0 or sem.max() > num_categories:
        raise MapFormatError(f"semantic ids must lie in [0, {num_categories}]")
    border = np.concatenate([occ[0], occ[-1], occ[:, 0], occ[:, -1]])
    if (border != OCCUPIED).any():
        raise MapFormatError("boundary cells must be occupied")


@dataclass(frozen=True)
class Observation:
    """Cells revealed by one sensor reading, as parallel arrays."""

    rows: np.ndarray
    cols: np.ndarray
    occupancy: np.ndarray  # 1 occupied, 2 free (partial-map encoding)
    semantic: np.ndarray
    sensor_pose: Pose

    def __len__(self):
        return len(self.rows)

    @classmethod
    def empty(cls, pose: Pose) -> "Observation":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.astype(np.uint8), z.astype(np.int16), pose)


# ---------------------------------------------------------------- kinematics


def _rotate(heading: int, delta: int) -> int:
    return (heading + delta) % 360


def heading_vector(heading: float) -> tuple[float, float]:
    a = math.radians(heading)
    return math.cos(a), math.sin(a)


def forward_target(pose: Pose, distance: float = FORWARD_STEP) -> tuple[float, float]:
    dx, dy = heading_vector(pose.heading)
    # round away float dust so repeated moves stay reproducible
    return round(pose.x + distance * dx, 12), round(pose.y + distance * dy, 12)


def swept_clear(free: np.ndarray, x0: float, y0: float, x1: float, y1: float,
                resolution: float = RESOLUTION) -> bool:
    """Whether every cell the segment passes through is marked in ``free``."""
    return bool(_kernels.segment_clear(~free, x0 / resolution, y0 / resolution,
                                       x1 / resolution, y1 / resolution, False))


def step(env: GroundTruthEnvironment, pose: Pose, action: Action) -> tuple[Pose, bool]:
    """Apply one primitive action. Returns the new pose and a collision flag."""
    if action is Action.TURN_LEFT:
        return Pose(pose.x, pose.y, _rotate(pose.heading, -TURN_STEP)), False
    if action is Action.TURN_RIGHT:
        return Pose(pose.x, pose.y, _rotate(pose.heading, TURN_STEP)), False
    if action is Action.STOP:
        return pose, False
    x1, y1 = forward_target(pose)
    if swept_clear(env.free, pose.x, pose.y, x1, y1, env.resolution):
        return Pose(x1, y1, pose.heading), False
    return pose, True


# -------------------------------------------------------------------- sensor


def sense(env: GroundTruthEnvironment, pose: Pose, fov: float = 90.0,
          max_range: float = 5.0, ray_spacing: float = 0.5) -> Observation:
    """Noiseless raycast reading over ``fov`` degrees centred on the heading."""
    n_rays = int(math.ceil(fov / ray_spacing)) + 1
    res = env.resolution
    rows, cols = _kernels.raycast(
        env.occupied, pose.x / res, pose.y / res, math.radians(pose.heading),
        math.radians(fov), max_range / res, n_rays,
    )
    occ = np.where(env.occupied[rows, cols], 1, 2).astype(np.uint8)
    return Observation(rows, cols, occ, env.semantic[rows, cols].copy(), pose)


# ----------------------------------------------------------------- generator


@dataclass(frozen=True)
class GeneratorConfig:
    width: int = 128
    height: int = 128
    resolution: float = RESOLUTION
    num_categories: int = NUM_CATEGORIES
    room_count: tuple[int, int] = (4, 7)
    room_size: tuple[int, int] = (22, 40)
    corridor_width: int = 10
    dead_end_density: float = 0.5
    stub_length: tuple[int, int] = (20, 45)
    loop_probability: float = 0.0
    furniture_per_room: tuple[int, int] = (0, 2)

    def __post_init__(self):
        if self.corridor_width < 3:
            raise ValueError("corridor_width must be at least 3 cells")
        if self.dead_end_density < 0:
            raise ValueError("dead_end_density must be non-negative")
        if self.room_size[0] < self.corridor_width + 2:
            raise ValueError("rooms must be wider than the corridors")


# Room types: (floor-object palette, likely to be a leaf room)
_ROOM_PALETTES = (
    ((3, 4, 5, 6), False),      # living areas
    ((7, 8, 9), False),         # kitchen / dining
    ((10, 11, 12, 13), True),   # bedroom
    ((14, 15, 16), True),       # bathroom
    ((17, 18), True),           # closet / storage
    ((19, 20, 21, 22), False),  # office
)
_STUB_CATEGORY = 23


def _rect_cells(r0, c0, r1, c1):
    return slice(r0, r1), slice(c0, c1)


def generate_environment(seed: int, params: GeneratorConfig | None = None,
                         env_id: str | None = None) -> GroundTruthEnvironment:
    """Rooms-and-corridors world.

    Rooms are joined by a minimum spanning tree of L-shaped corridors, so the
    free space is one component. ``dead_end_density`` adds that many
    blind corridor stubs per room (rounded).
    """
    params = params or GeneratorConfig()
    rng = np.random.default_rng(seed)
    for _ in range(50):
        env = _try_generate(rng, params, env_id or f"env_{seed}")
        if env is not None:
            return env
    raise RuntimeError(f"could not generate a world for seed {seed}")


def _try_generate(rng, p: GeneratorConfig, env_id: str):
    h, w = p.height, p.width
    occ = np.ones((h, w), dtype=np.uint8)
    sem = np.zeros((h, w), dtype=np.int16)
    n_rooms = int(rng.integers(p.room_count[0], p.room_count[1] + 1))
    rooms = []
    margin = 3
    for _ in range(n_rooms * 40):
        if len(rooms) == n_rooms:
            break
        rh = int(rng.integers(p.room_size[0], p.room_size[1] + 1))
        rw = int(rng.integers(p.room_size[0], p.room_size[1] + 1))
        if rh + 2 * margin >= h or rw + 2 * margin >= w:
            continue
        r0 = int(rng.integers(margin, h - rh - margin))
        c0 = int(rng.integers(margin, w - rw - margin))
        box = (r0, c0, r0 + rh, c0 + rw)
        if any(_overlap(box, other, 4) for other in rooms):
            continue
        rooms.append(box)
    if len(rooms) < max(2, p.room_count[0]):
        return None
    for r0, c0, r1, c1 in rooms:
        occ[r0:r1, c0:c1] = FREE

    centers = [((r0 + r1) // 2, (c0 + c1) // 2) for r0, c0, r1, c1 in rooms]
    edges = _spanning_tree(centers)
    if p.loop_probability > 0:
        for i in range(len(rooms)):
            for j in range(i + 1, len(rooms)):
                if (i, j) not in edges and rng.random() < p.loop_probability / len(rooms):
                    edges.append((i, j))
    for i, j in edges:
        _carve_l(occ, centers[i], centers[j], p.corridor_width, bool(rng.random() < 0.5))

    n_stubs = int(round(p.dead_end_density * len(rooms)))
    stubs = []
    for _ in range(n_stubs):
        stub = _carve_stub(occ, rng, p)
        if stub is not None:
            stubs.append(stub)

    occ[0, :] = occ[-1, :] = OCCUPIED
    occ[:, 0] = occ[:, -1] = OCCUPIED

    # semantics: walls, room objects, markers at the end of stubs
    wall = occ == OCCUPIED
    sem[wall] = WALL_CATEGORY
    degree = np.zeros(len(rooms), dtype=int)
    for i, j in edges:
        degree[i] += 1
        degree[j] += 1
    for k, (r0, c0, r1, c1) in enumerate(rooms):
        leaf = degree[k] <= 1
        choices = [i for i, (_, is_leaf) in enumerate(_ROOM_PALETTES) if is_leaf == leaf]
        if rng.random() < 0.25:
            choices = list(range(len(_ROOM_PALETTES)))
        palette = _ROOM_PALETTES[int(rng.choice(choices))][0]
        # the wall ring around the room carries the room's first object class
        ring = np.zeros_like(wall)
        ring[max(r0 - 1, 0):r1 + 1, max(c0 - 1, 0):c1 + 1] = True
        ring[r0:r1, c0:c1] = False
        sem[ring & wall & (rng.random(wall.shape) < 0.3)] = palette[0]
        n_obj = int(rng.integers(p.furniture_per_room[0], p.furniture_per_room[1] + 1))
        for _ in range(n_obj):
            _place_object(occ, sem, rng, (r0, c0, r1, c1), palette, p.corridor_width)
    for tip in stubs:
        r, c = tip
        sl = (slice(max(r - 2, 0), r + 3), slice(max(c - 2, 0), c + 3))
        block = occ[sl] == OCCUPIED
        sem[sl][block] = _STUB_CATEGORY

    free = occ == FREE
    labels, n = ndimage.label(free, structure=np.ones((3, 3)))
    if n != 1:
        return None
    return GroundTruthEnvironment(occ, sem, p.resolution, p.num_categories, env_id,
                                  rooms=tuple(rooms))


def _overlap(a, b, pad):
    return not (a[2] + pad <= b[0] or b[2] + pad <= a[0] or a[3] + pad <= b[1] or b[3] + pad <= a[1])


def _spanning_tree(points):
    """Prim's MST over Euclidean distances; deterministic tie-break by index."""
    n = len(points)
    pts = np.asarray(points, dtype=float)
    in_tree = [0]
    edges = []
    while len(in_tree) < n:
        best = None
        for i in in_tree:
            for j in range(n):
                if j in in_tree:
                    continue
                d = float(np.hypot(*(pts[i] - pts[j])))
                if best is None or d < best[0]:
                    best = (d, i, j)
        _, i, j = best
        edges.append((min(i, j), max(i, j)))
        in_tree.append(j)
    return edges


def _carve_l(occ, a, b, width, horizontal_first):
    h, w = occ.shape
    lo = width // 2
    hi = width - lo

    def box(r0, c0, r1, c1):
        occ[max(r0, 1):min(r1, h - 1), max(c0, 1):min(c1, w - 1)] = FREE

    (ra, ca), (rb, cb) = a, b
    if horizontal_first:
        box(ra - lo, min(ca, cb) - lo, ra + hi, max(ca, cb) + hi)
        box(min(ra, rb) - lo, cb - lo, max(ra, rb) + hi, cb + hi)
    else:
        box(min(ra, rb) - lo, ca - lo, max(ra, rb) + hi, ca + hi)
        box(rb - lo, min(ca, cb) - lo, rb + hi, max(ca, cb) + hi)


def _carve_stub(occ, rng, p: GeneratorConfig):
    """Dig a blind corridor out of existing free space into solid rock."""
    h, w = occ.shape
    wd = p.corridor_width
    free_r, free_c = np.nonzero(occ == FREE)
    for _ in range(60):
        k = int(rng.integers(len(free_r)))
        r, c = int(free_r[k]), int(free_c[k])
        dr, dc = [(-1, 0), (1, 0), (0, -1), (0, 1)][int(rng.integers(4))]
        # walk to the wall
        while 0 < r + dr < h - 1 and 0 < c + dc < w - 1 and occ[r + dr, c + dc] == FREE:
            r, c = r + dr, c + dc
        length = int(rng.integers(p.stub_length[0], p.stub_length[1] + 1))
        lo = wd // 2
        hi = wd - lo
        if dr != 0:
            r0, r1 = (r - length, r) if dr < 0 else (r + 1, r + 1 + length)
            c0, c1 = c - lo, c + hi
        else:
            c0, c1 = (c - length, c) if dc < 0 else (c + 1, c + 1 + length)
            r0, r1 = r - lo, r + hi
        # stub plus a 3-cell rock margin must be untouched, except at its root
        pr0, pr1, pc0, pc1 = r0 - 3, r1 + 3, c0 - 3, c1 + 3
        if pr0 < 1 or pc0 < 1 or pr1 > h - 1 or pc1 > w - 1:
            continue
        probe = occ[pr0:pr1, pc0:pc1].copy()
        # ignore the side touching the existing free space
        if dr < 0:
            probe = probe[:-3]
        elif dr > 0:
            probe = probe[3:]
        elif dc < 0:
            probe = probe[:, :-3]
        else:
            probe = probe[:, 3:]
        if (probe == FREE).any():
            continue
        # the mouth must open fully onto free space
        if dr != 0:
            mouth_row = r1 if dr < 0 else r0 - 1
            if (occ[mouth_row, c0:c1] != FREE).any():
                continue
        else:
            mouth_col = c1 if dc < 0 else c0 - 1
            if (occ[r0:r1, mouth_col] != FREE).any():
                continue
        occ[r0:r1, c0:c1] = FREE
        tip_r = r0 if dr < 0 else (r1 - 1 if dr > 0 else (r0 + r1) // 2)
        tip_c = c0 if dc < 0 else (c1 - 1 if dc > 0 else (c0 + c1) // 2)
        if dr < 0:
            tip_r -= 1
        elif dr > 0:
            tip_r += 1
        elif dc < 0:
            tip_c -= 1
        else:
            tip_c += 1
        return tip_r, tip_c
    return None


def _place_object(occ, sem, rng, room, palette, clearance):
    r0, c0, r1, c1 = room
    size_r = int(rng.integers(2, 5))
    size_c = int(rng.integers(2, 5))
    pad = clearance + 2
    if r1 - r0 < 2 * pad + size_r or c1 - c0 < 2 * pad + size_c:
        return
    rr = int(rng.integers(r0 + pad, r1 - pad - size_r + 1))
    cc = int(rng.integers(c0 + pad, c1 - pad - size_c + 1))
    before = occ[rr:rr + size_r, cc:cc + size_c].copy()
    occ[rr:rr + size_r, cc:cc + size_c] = OCCUPIED
    labels, n = ndimage.label(occ == FREE, structure=np.ones((3, 3)))
    if n != 1:
        occ[rr:rr + size_r, cc:cc + size_c] = before
        return
    sem[rr:rr + size_r, cc:cc + size_c] = int(rng.choice(palette))


# ------------------------------------------------------------------ map files


def dumps_grid(occ_chars: np.ndarray, semantic: np.ndarray, resolution: float,
               num_categories: int) -> str:
    h, w = semantic.shape
    lines = [f"{w} {h} {resolution!r} {num_categories}"]
    lines += ["".join(row) for row in occ_chars]
    lines.append("")
    lines += [" ".join(str(int(v)) for v in row) for row in semantic]
    return "\n".join(lines) + "\n"


def dumps_environment(env: GroundTruthEnvironment) -> str:
    chars = np.where(env.occupied, "#", ".")
    return dumps_grid(chars, env.semantic, env.resolution, env.num_categories)


def loads_environment(text: str, env_id: str = "env") -> GroundTruthEnvironment:
    lines = text.splitlines()
    try:
        w, h, res, n = lines[0].split()
        w, h, res, n = int(w), int(h), float(res), int(n)
    except (IndexError, ValueError) as exc:
        raise MapFormatError(f"bad header line: {lines[:1]}") from exc
    if len(lines) < 2 * h + 2 or lines[h + 1].strip() != "":
        raise MapFormatError("expected occupancy rows, a blank line, then semantic rows")
    rows = lines[1:h + 1]
    if any(len(row) != w for row in rows):
        raise MapFormatError("occupancy row width mismatch")
    chars = np.array([list(row) for row in rows])
    if not np.isin(chars, (".", "#")).all():
        raise MapFormatError("occupancy characters must be '.' or '#'")
    occ = (chars == "#").astype(np.uint8)
    try:
        sem = np.array([[int(v) for v in row.split()] for row in lines[h + 2:2 * h + 2]])
    except ValueError as exc:
        raise MapFormatError("semantic rows must be integers") from exc
    if sem.shape != (h, w):
        raise MapFormatError(f"semantic grid has shape {sem.shape}, expected {(h, w)}")
    return GroundTruthEnvironment(occ, sem, res, n, env_id)


def save_environment(env: GroundTruthEnvironment, path) -> None:
    Path(path).write_text(dumps_environment(env))


def load_environment(path) -> GroundTruthEnvironment:
    path = Path(path)
    return loads_environment(path.read_text(), env_id=path.stem)
