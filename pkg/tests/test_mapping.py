from collections import deque

import numpy as np
import pytest

from lspnav import gridworld as gw
from lspnav.gridworld import Action, Observation, Pose
from lspnav.mapping import (
    FREE, OCCUPIED, UNKNOWN, PartialMap, goal_reachable_known, integrate, mark_collision,
    new_partial_map,
)

from conftest import box_world, world_from_ascii


def test_fresh_map():
    m = new_partial_map((10, 10))
    assert (m.occupancy == UNKNOWN).sum() == 100
    assert (m.semantic == 0).all()
    assert m.unknown_fraction() == 1.0


def test_fresh_map_from_env():
    env = box_world(12, 9)
    m = new_partial_map(env)
    assert m.shape == env.shape and m.resolution == env.resolution


def test_empty_observation_is_noop():
    m = new_partial_map((10, 10))
    before = m.copy()
    integrate(m, Observation.empty(Pose(0.2, 0.2, 0)))
    assert m == before and m.version == before.version


def test_reveal_five_cells():
    m = new_partial_map((10, 10))
    obs = Observation(np.array([1, 1, 1, 1, 1]), np.arange(1, 6), np.full(5, FREE, np.uint8),
                      np.zeros(5, np.int16), Pose(0.1, 0.1, 0))
    integrate(m, obs)
    assert m.known_count == 5


def test_integrate_idempotent():
    env = gw.generate_environment(2)
    free = np.argwhere(env.free)
    p = Pose(*gw.cell_center(tuple(free[len(free) // 2])), 90)
    obs = gw.sense(env, p)
    once = integrate(new_partial_map(env), obs)
    twice = integrate(integrate(new_partial_map(env), obs), obs)
    assert once == twice and once.version == twice.version == 1


def test_out_of_bounds_observation_rejected():
    m = new_partial_map((5, 5))
    obs = Observation(np.array([1, 7]), np.array([1, 1]), np.full(2, FREE, np.uint8),
                      np.zeros(2, np.int16), Pose(0.1, 0.1, 0))
    with pytest.raises(ValueError):
        integrate(m, obs)
    assert m.known_count == 0


def test_full_coverage_sweep_matches_ground_truth():
    env = gw.generate_environment(5)
    m = new_partial_map(env)
    counts = [0]
    for r, c in np.argwhere(env.free)[::17]:
        for h in range(0, 360, 30):
            integrate(m, gw.sense(env, Pose(*gw.cell_center((r, c)), h)))
            counts.append(m.known_count)
    assert all(a <= b for a, b in zip(counts, counts[1:]))
    # every cell that borders free space must now be known and correct
    pad = np.pad(env.free, 1)
    touches = env.free | pad[:-2, 1:-1] | pad[2:, 1:-1] | pad[1:-1, :-2] | pad[1:-1, 2:]
    expected = np.where(env.occupied, OCCUPIED, FREE)
    assert np.array_equal(m.occupancy[touches], expected[touches])
    known = m.occupancy != UNKNOWN
    assert np.array_equal(m.occupancy[known], expected[known])
    assert np.array_equal(m.semantic[known], env.semantic[known])


def test_known_never_reverts_during_episode():
    env = gw.generate_environment(6)
    free = np.argwhere(env.free)
    p = Pose(*gw.cell_center(tuple(free[0])), 0)
    m = new_partial_map(env)
    rng = np.random.default_rng(0)
    prev = m.occupancy.copy()
    for _ in range(100):
        integrate(m, gw.sense(env, p))
        assert not ((prev != UNKNOWN) & (m.occupancy == UNKNOWN)).any()
        prev = m.occupancy.copy()
        p, _ = gw.step(env, p, list(Action)[rng.integers(3)])


def test_mark_collision_marks_blocking_cell():
    env = box_world(60, 60, walls=[(r, 22) for r in range(1, 59)])
    m = new_partial_map(env)
    p = Pose(1.0, 1.0, 0)
    assert mark_collision(m, p, env.occupied)
    assert m.occupancy[20, 22] == OCCUPIED
    assert not mark_collision(m, p, env.occupied)


def test_goal_reachable_examples():
    env = world_from_ascii([
        "###############",
        "#....#####....#",
        "#....#####....#",
        "#.............#",
        "#....#####....#",
        "###############",
    ])
    m = new_partial_map(env)
    # reveal the two rooms separately, leave the corridor unknown
    m.occupancy[1:5, 1:5] = FREE
    m.occupancy[1:5, 10:14] = FREE
    left = Pose(*gw.cell_center((2, 2)), 0)
    assert goal_reachable_known(m, left, gw.cell_center((3, 3)))
    assert not goal_reachable_known(m, left, gw.cell_center((3, 12)))
    assert not goal_reachable_known(m, left, gw.cell_center((3, 7)))
    m.occupancy[3, 5:10] = FREE
    assert goal_reachable_known(m, left, gw.cell_center((3, 12)))


def _bfs_reachable(free, start, goal):
    h, w = free.shape
    if not free[start] or not free[goal]:
        return False
    seen = {start}
    q = deque([start])
    while q:
        r, c = q.popleft()
        if (r, c) == goal:
            return True
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nr, nc = r + dr, c + dc
                if (dr or dc) and 0 <= nr < h and 0 <= nc < w and free[nr, nc]:
                    if dr and dc and not (free[r, nc] and free[nr, c]):
                        continue
                    if (nr, nc) not in seen:
                        seen.add((nr, nc))
                        q.append((nr, nc))
    return False


def test_goal_reachable_matches_flood_fill(rng):
    for _ in range(1000):
        h, w = rng.integers(4, 16, size=2)
        m = PartialMap(int(h), int(w))
        m.occupancy[:] = rng.choice([UNKNOWN, OCCUPIED, FREE], size=(h, w), p=[0.2, 0.25, 0.55])
        s = (int(rng.integers(h)), int(rng.integers(w)))
        g = (int(rng.integers(h)), int(rng.integers(w)))
        pose = Pose(*gw.cell_center(s), 0)
        assert goal_reachable_known(m, pose, gw.cell_center(g)) == _bfs_reachable(m.free, s, g)


def test_dump_uses_question_marks():
    m = new_partial_map((3, 4))
    m.occupancy[1, 1] = FREE
    text = m.dumps()
    lines = text.splitlines()
    assert lines[0].split()[:2] == ["4", "3"]
    assert lines[2] == "?.??"
