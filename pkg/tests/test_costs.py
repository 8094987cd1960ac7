import math

import numpy as np
import pytest

from lspnav import costs
from lspnav import gridworld as gw
from lspnav.frontier import extract_frontiers
from lspnav.gridworld import Action, Pose
from lspnav.mapping import FREE, OCCUPIED, UNKNOWN, PartialMap, integrate, new_partial_map

from oracles import bellman_ford

SQ2 = math.sqrt(2.0)


def _map_from(trav):
    m = PartialMap(*trav.shape)
    m.occupancy[:] = np.where(trav, FREE, OCCUPIED)
    return m


def test_corridor_distances():
    trav = np.zeros((3, 30), dtype=bool)
    trav[1, :] = True
    f = costs.distance_field(_map_from(trav), [(1, 0)])
    for k in range(30):
        assert f[1, k] == pytest.approx(k * 0.05, abs=1e-12)


def test_diagonal_neighbour():
    trav = np.ones((5, 5), dtype=bool)
    f = costs.distance_field(_map_from(trav), [(2, 2)])
    assert f[3, 3] == pytest.approx(0.05 * SQ2, abs=1e-12)


@pytest.mark.parametrize("size", [8, 20, 32])
def test_dijkstra_matches_bellman_ford(rng, size):
    for _ in range(15 if size == 32 else 30):
        trav = rng.random((size, size)) < 0.7
        free = np.argwhere(trav)
        src = [tuple(free[k]) for k in rng.choice(len(free), size=int(rng.integers(1, 3)), replace=False)]
        got = costs.distance_field(_map_from(trav), src).values
        ref = bellman_ford(trav, src)
        assert np.array_equal(np.isfinite(got), np.isfinite(ref))
        fin = np.isfinite(ref)
        assert np.abs(got[fin] - ref[fin]).max() <= 1e-9


def test_field_invariants(rng):
    trav = rng.random((24, 24)) < 0.75
    free = np.argwhere(trav)
    src = tuple(free[0])
    f = costs.distance_field(_map_from(trav), [src]).values
    assert f[src] == 0
    assert not np.isfinite(f[~trav]).any()
    fin = np.isfinite(f)
    diffs = np.abs(np.diff(np.where(fin, f, 0), axis=1))[fin[:, 1:] & fin[:, :-1]]
    assert (diffs <= 0.05 + 1e-12).all()


def test_bad_sources_rejected():
    trav = np.ones((4, 4), dtype=bool)
    trav[0, 0] = False
    m = _map_from(trav)
    with pytest.raises(ValueError):
        costs.distance_field(m, [(0, 0)])
    with pytest.raises(ValueError):
        costs.distance_field(m, [])


def test_traversable_callable():
    trav = np.ones((6, 6), dtype=bool)
    m = _map_from(trav)
    m.occupancy[3, :] = UNKNOWN
    f = costs.distance_field(m, [(0, 0)], traversable=lambda pm: pm.occupancy != OCCUPIED)
    assert np.isfinite(f[5, 5])
    assert not np.isfinite(costs.distance_field(m, [(0, 0)])[5, 5])


def test_known_distance(rng):
    trav = rng.random((20, 20)) < 0.7
    m = _map_from(trav)
    free = [tuple(x) for x in np.argwhere(trav)]
    a = free[0]
    assert costs.known_distance(m, a, a) == 0.0
    for _ in range(100):
        a = free[rng.integers(len(free))]
        b = free[rng.integers(len(free))]
        d1 = costs.known_distance(m, a, b)
        d2 = costs.known_distance(m, b, a)
        assert d1 == d2 or (math.isinf(d1) and math.isinf(d2))
        full = costs.distance_field(m, [a])[b]
        assert d1 == full or (math.isinf(d1) and math.isinf(full))


def test_known_distance_across_wall():
    trav = np.ones((5, 9), dtype=bool)
    trav[:, 4] = False
    assert math.isinf(costs.known_distance(_map_from(trav), (2, 1), (2, 7)))


def test_pairwise_table(rng):
    env = gw.generate_environment(9)
    m = new_partial_map(env)
    free = np.argwhere(env.free)
    pose = Pose(*gw.cell_center(tuple(free[len(free) // 3])), 0)
    for h in range(0, 360, 30):
        integrate(m, gw.sense(env, Pose(pose.x, pose.y, h)))
    field = costs.distance_field(m, [pose.cell()])
    fr = [f for f in extract_frontiers(m) if np.isfinite(field[f.centroid])]
    assert fr
    table = costs.pairwise_subgoal_distances(m, pose, fr)
    n = len(fr) + 1
    assert table.shape == (n, n)
    assert np.abs(table - table.T).max() <= 1e-12
    assert (np.diag(table) == 0).all()
    points = [pose.cell()] + [f.centroid for f in fr]
    for i, p in enumerate(points):
        ref = costs.distance_field(m, [p])
        for j, q in enumerate(points):
            assert table[i, j] == pytest.approx(ref[q], abs=1e-12)
    single = costs.pairwise_subgoal_distances(m, pose, fr[:1])
    assert single[0, 1] == costs.known_distance(m, pose.cell(), fr[0].centroid)


def test_extract_path_single_cell():
    trav = np.ones((4, 4), dtype=bool)
    f = costs.distance_field(_map_from(trav), [(1, 1)])
    assert costs.extract_path(f, (1, 1)) == [(1, 1)]


def test_extract_path_corridor_length():
    trav = np.zeros((3, 25), dtype=bool)
    trav[1, 1:24] = True
    f = costs.distance_field(_map_from(trav), [(1, 1)])
    path = costs.extract_path(f, (1, 23))
    assert costs.path_length(path, 0.05) == pytest.approx(f[1, 23], abs=1e-12)


def test_extract_path_monotone_and_no_corner_cut(rng):
    for _ in range(100):
        trav = rng.random((16, 16)) < 0.75
        free = np.argwhere(trav)
        f = costs.distance_field(_map_from(trav), [tuple(free[0])])
        fin = np.argwhere(np.isfinite(f.values))
        start = tuple(fin[rng.integers(len(fin))])
        path = costs.extract_path(f, start)
        assert path[-1] == tuple(free[0])
        vals = [f[p] for p in path]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert costs.path_length(path, 0.05) == pytest.approx(f[start], abs=1e-9)
        for (r0, c0), (r1, c1) in zip(path, path[1:]):
            if r0 != r1 and c0 != c1:
                assert trav[r0, c1] and trav[r1, c0]


def test_extract_path_unreachable():
    trav = np.ones((4, 6), dtype=bool)
    trav[:, 3] = False
    f = costs.distance_field(_map_from(trav), [(1, 1)])
    with pytest.raises(ValueError):
        costs.extract_path(f, (1, 5))


def test_next_action_examples():
    pose = Pose(1.025, 1.025, 0)
    ahead = [(20, 20 + k) for k in range(8)]
    assert costs.next_action(ahead, pose) is Action.FORWARD
    # rows grow along +y, which is heading 90: a right turn from heading 0
    below = [(20 + k, 20) for k in range(8)]
    assert costs.next_action(below, pose) is Action.TURN_RIGHT
    above = [(20 - k, 20) for k in range(8)]
    assert costs.next_action(above, pose) is Action.TURN_LEFT
    behind = [(20, 20 - k) for k in range(8)]
    assert costs.next_action(behind, pose) is Action.TURN_LEFT


def test_next_action_gate():
    pose = Pose(1.025, 1.025, 0)
    # waypoint ~11 degrees off axis is inside the 15 degree gate
    path = [(20, 20), (20, 21), (20, 22), (20, 23), (21, 24), (21, 25)]
    assert costs.next_action(path, pose) is Action.FORWARD


def test_angle_diff_range():
    for a in range(-720, 720, 15):
        d = costs.angle_diff(a, 0)
        assert -180 < d <= 180


def test_following_actions_reaches_goal(rng):
    """Replanning each step on a fully known map reaches the goal within 4x."""
    from lspnav.planner import NavConfig, _LocalNavigator
    env = gw.generate_environment(21)
    m = new_partial_map(env)
    m.occupancy[:] = np.where(env.occupied, OCCUPIED, FREE)
    free = np.argwhere(env.free)
    ok = 0
    for _ in range(100):
        s = tuple(free[rng.integers(len(free))])
        g = tuple(free[rng.integers(len(free))])
        d = costs.known_distance(m, s, g)
        pose = Pose(*gw.cell_center(s), int(rng.integers(12)) * 30)
        nav = _LocalNavigator(NavConfig())
        limit = 4 * max(int(math.ceil(d / 0.25)), 1) + 12
        for _ in range(limit):
            if math.dist((pose.x, pose.y), gw.cell_center(g)) <= 0.2:
                break
            a = nav.act(m, pose, g)
            assert a is not None
            pose, hit = gw.step(env, pose, a)
            assert env.free[pose.cell()]
        ok += math.dist((pose.x, pose.y), gw.cell_center(g)) <= 0.2
    assert ok == 100
