import numpy as np
import pytest

from lspnav import gridworld as gw
from lspnav.gridworld import GroundTruthEnvironment, Pose, generate_environment
from lspnav.mapping import FREE, OCCUPIED, new_partial_map
from lspnav.planner import make_belief


def box_world(h, w, walls=()):
    """Closed rectangle of free space with optional interior wall cells."""
    occ = np.zeros((h, w), dtype=np.uint8)
    occ[0, :] = occ[-1, :] = 1
    occ[:, 0] = occ[:, -1] = 1
    for r, c in walls:
        occ[r, c] = 1
    sem = np.where(occ == 1, 1, 0).astype(np.int16)
    return GroundTruthEnvironment(occ, sem, id="box")


def world_from_ascii(rows, env_id="ascii"):
    occ = np.array([[1 if ch == "#" else 0 for ch in row] for row in rows], dtype=np.uint8)
    sem = np.where(occ == 1, 1, 0).astype(np.int16)
    return GroundTruthEnvironment(occ, sem, id=env_id)


def two_corridor_world():
    """Room with a short blind corridor west and a long loop east/south to the goal."""
    occ = np.ones((22, 60), dtype=np.uint8)
    occ[3:11, 20:40] = 0   # room
    occ[5:9, 4:20] = 0     # west stub, dead end
    occ[5:9, 40:56] = 0    # east corridor
    occ[5:19, 52:56] = 0   # down
    occ[15:19, 4:56] = 0   # back west to the goal
    sem = np.where(occ == 1, 1, 0).astype(np.int16)
    return gw.GroundTruthEnvironment(occ, sem, id="two")


def two_corridor_belief():
    env = two_corridor_world()
    m = new_partial_map(env)
    known = (slice(2, 12), slice(18, 42))
    m.occupancy[known] = np.where(env.occupied[known], OCCUPIED, FREE)
    pose = Pose(*gw.cell_center((7, 30)), 0)
    goal = gw.cell_center((16, 8))
    return env, make_belief(m, pose, goal)


@pytest.fixture(scope="session")
def small_corpus():
    return [generate_environment(300 + k, None, f"c{k}") for k in range(4)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
