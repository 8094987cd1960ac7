"""Ground-truth subgoal properties computed from the hidden world.

For a frontier of the partial map:

* ``p_s`` is 1 when the goal can be reached from the frontier moving only
  through cells that are free in the world but still unknown in the map;
  ``r_s`` is then the length of that path measured from the frontier centroid.
* otherwise ``r_e`` is the length of a closed tour, starting and ending at
  the frontier, over the skeleton of the unknown free region behind it.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, shortest_path
from skimage.morphology import skeletonize as _thin

from . import costs
from .frontier import Frontier
from .gridworld import GroundTruthEnvironment, point_to_cell
from .mapping import UNKNOWN, PartialMap

EXACT_TOUR_LIMIT = 10
_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class LabeledSubgoal:
    frontier_id: str
    p_s: int
    r_s: float | None
    r_e: float | None

    @property
    def mask_ps(self) -> bool:
        return True

    @property
    def mask_rs(self) -> bool:
        return self.p_s == 1

    @property
    def mask_re(self) -> bool:
        return self.p_s == 0


# ------------------------------------------------------------- success label


def success_mask(env: GroundTruthEnvironment, pmap: PartialMap, frontier: Frontier,
                 goal_cell=None) -> np.ndarray:
    """World-free, map-unknown cells plus the frontier's own cells (and the goal)."""
    mask = env.free & (pmap.occupancy == UNKNOWN)
    mask[frontier.cells[:, 0], frontier.cells[:, 1]] = True
    if goal_cell is not None and env.free[goal_cell]:
        mask[goal_cell] = True
    return mask


def label_ps_rs(env: GroundTruthEnvironment, pmap: PartialMap, frontier: Frontier,
                goal) -> tuple[int, float | None]:
    """``(p_s, r_s)`` for one frontier; ``r_s`` is ``None`` when ``p_s`` is 0."""
    res = env.resolution
    goal_cell = point_to_cell(goal[0], goal[1], res)
    if not env.free[goal_cell]:
        raise ValueError("goal lies in an occupied cell")
    mask = success_mask(env, pmap, frontier, goal_cell)
    d = costs.grid_field(mask, [frontier.centroid], res, stop=goal_cell)
    if np.isfinite(d[goal_cell]):
        return 1, float(d[goal_cell])
    # the centroid may be cut off from the rest of its frontier by corner rules
    d = costs.grid_field(mask, frontier.cells, res, stop=goal_cell)
    if not np.isfinite(d[goal_cell]):
        return 0, None
    offsets = (frontier.cells - np.asarray(frontier.centroid)) * res
    return 1, float(d[goal_cell] + np.sqrt((offsets ** 2).sum(axis=1)).max())


# ------------------------------------------------------------ skeleton graph


@dataclass
class SkeletonGraph:
    """Topological graph of a thinned region.

    ``nodes`` are representative cells of endpoints, junction clusters and the
    anchor; ``edges`` hold ``(i, j, length_m)`` for skeleton segments between
    them; ``pixels`` is the thinned skeleton itself.
    """

    nodes: list
    edges: list
    anchor: int
    pixels: np.ndarray = field(repr=False)
    resolution: float = 0.05

    def node_distances(self) -> np.ndarray:
        """All-pairs geodesic lengths along the skeleton (``inf`` if disconnected)."""
        n = len(self.nodes)
        if n == 0:
            return np.zeros((0, 0))
        w = np.full((n, n), np.inf)
        for i, j, length in self.edges:
            if i != j and length < w[i, j]:
                w[i, j] = w[j, i] = length
        rows, cols = np.nonzero(np.isfinite(w))
        graph = coo_matrix((w[rows, cols] + 1e-300, (rows, cols)), shape=(n, n)).tocsr()
        d = shortest_path(graph, method="D", directed=False)
        np.fill_diagonal(d, 0.0)
        return d


def _region_mask(region, shape=None):
    if isinstance(region, np.ndarray) and region.dtype == bool:
        return region
    cells = np.asarray(list(region) if not isinstance(region, np.ndarray) else region,
                       dtype=np.int64).reshape(-1, 2)
    if shape is None:
        shape = tuple(cells.max(axis=0) + 2) if len(cells) else (1, 1)
    mask = np.zeros(shape, dtype=bool)
    if len(cells):
        mask[cells[:, 0], cells[:, 1]] = True
    return mask


def skeleton_adjacency(skel: np.ndarray):
    """Pixel edges of a skeleton, dropping diagonal links that shortcut an L-corner.

    Returns ``(a, b, length_in_cells)`` arrays over flat pixel indices.
    """
    h, w = skel.shape
    pad = np.pad(skel, 1)
    a_list, b_list, l_list = [], [], []
    # each undirected pair once: E, S, SE, SW
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        nb = pad[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        ok = skel & nb
        if dr and dc:
            side_a = pad[1 + dr:1 + dr + h, 1:1 + w]
            side_b = pad[1:1 + h, 1 + dc:1 + dc + w]
            ok &= ~side_a & ~side_b
        r, c = np.nonzero(ok)
        a_list.append(r * w + c)
        b_list.append((r + dr) * w + (c + dc))
        l_list.append(np.full(len(r), math.sqrt(2.0) if dr and dc else 1.0))
    return np.concatenate(a_list), np.concatenate(b_list), np.concatenate(l_list)


def skeletonize(region, anchor_near=None, resolution: float = 0.05) -> SkeletonGraph:
    """Thin ``region`` (boolean mask or cell list) and build its skeleton graph.

    Nodes sit at skeleton endpoints, at junction clusters (adjacent pixels of
    degree >= 3 merge into one node) and at the anchor, the skeleton pixel
    nearest ``anchor_near`` (default: the region's mean cell).
    """
    mask = _region_mask(region)
    if not mask.any():
        anchor_cell = tuple(int(v) for v in anchor_near) if anchor_near is not None else (0, 0)
        return SkeletonGraph([anchor_cell], [], 0, np.zeros((0, 2), dtype=np.int64), resolution)
    h, w = mask.shape
    skel = _thin(np.array(mask, dtype=bool))
    pr, pc = np.nonzero(skel)
    flat = pr * w + pc
    a, b, lengths = skeleton_adjacency(skel)
    pos = np.full(h * w, -1, dtype=np.int64)
    pos[flat] = np.arange(len(flat))
    ia, ib = pos[a], pos[b]
    npx = len(flat)
    degree = np.bincount(ia, minlength=npx) + np.bincount(ib, minlength=npx)
    nbrs = [[] for _ in range(npx)]
    for u, v, ln in zip(ia.tolist(), ib.tolist(), lengths.tolist()):
        nbrs[u].append((v, ln))
        nbrs[v].append((u, ln))

    if anchor_near is None:
        anchor_near = np.argwhere(mask).mean(axis=0)
    d2 = (pr - anchor_near[0]) ** 2 + (pc - anchor_near[1]) ** 2
    anchor_px = int(np.argmin(d2))

    node_of = np.full(npx, -1, dtype=np.int64)
    nodes = []
    junction = degree >= 3
    if junction.any():
        jidx = np.flatnonzero(junction)
        jj = junction[ia] & junction[ib]
        g = coo_matrix((np.ones(int(jj.sum())), (ia[jj], ib[jj])), shape=(npx, npx))
        _, comp = connected_components(g, directed=False)
        for label in sorted(set(comp[jidx].tolist()), key=lambda lab: int(jidx[comp[jidx] == lab][0])):
            members = jidx[comp[jidx] == label]
            centre = np.array([pr[members].mean(), pc[members].mean()])
            rep = members[np.argmin((pr[members] - centre[0]) ** 2 + (pc[members] - centre[1]) ** 2)]
            node_of[members] = len(nodes)
            nodes.append((int(pr[rep]), int(pc[rep])))
    for k in np.flatnonzero(degree <= 1):
        node_of[k] = len(nodes)
        nodes.append((int(pr[k]), int(pc[k])))
    if node_of[anchor_px] < 0:
        node_of[anchor_px] = len(nodes)
        nodes.append((int(pr[anchor_px]), int(pc[anchor_px])))
    anchor = int(node_of[anchor_px])

    edges = []
    seen = set()
    for start in np.flatnonzero(node_of >= 0).tolist():
        i = int(node_of[start])
        for nxt, ln in nbrs[start]:
            if node_of[nxt] == i:
                continue
            prev, cur, total = start, nxt, ln
            while node_of[cur] < 0:
                step = [(v, l2) for v, l2 in nbrs[cur] if v != prev]
                if not step:
                    break
                prev, (cur, l2) = cur, step[0]
                total += l2
            if node_of[cur] < 0:
                continue
            j = int(node_of[cur])
            key = frozenset([(start, nxt), (cur, prev)])
            if key in seen:
                continue
            seen.add(key)
            edges.append((min(i, j), max(i, j), total * resolution))
    pixels = np.stack([pr, pc], axis=1)
    return SkeletonGraph(nodes, edges, anchor, pixels, resolution)


# ----------------------------------------------------------------------- TSP


def tour_length(dist: np.ndarray, tour) -> float:
    return float(sum(dist[tour[k], tour[(k + 1) % len(tour)]] for k in range(len(tour))))


def held_karp(dist: np.ndarray, start: int = 0) -> tuple[float, list]:
    """Exact shortest closed tour through every node, beginning at ``start``."""
    dist = np.asarray(dist, dtype=float)
    n = len(dist)
    if n <= 1:
        return 0.0, [start] if n else []
    others = [k for k in range(n) if k != start]
    m = len(others)
    sub = dist[np.ix_(others, others)]
    from_start = dist[start, others]
    to_start = dist[others, start]
    size = 1 << m
    best = np.full((size, m), np.inf)
    parent = np.full((size, m), -1, dtype=np.int64)
    for j in range(m):
        best[1 << j, j] = from_start[j]
    masks = np.arange(size)
    pop = np.array([bin(s).count("1") for s in range(size)])
    for k in range(2, m + 1):
        for s in masks[pop == k]:
            bits = [j for j in range(m) if s >> j & 1]
            for j in bits:
                prev = s ^ (1 << j)
                cand = best[prev, bits] + sub[bits, j]
                cand[bits.index(j)] = np.inf
                i = int(np.argmin(cand))
                best[s, j] = cand[i]
                parent[s, j] = bits[i]
    full = size - 1
    total = best[full] + to_start
    j = int(np.argmin(total))
    length = float(total[j])
    order = []
    s = full
    while j >= 0:
        order.append(others[j])
        j, s = int(parent[s, j]), s ^ (1 << j)
    return length, [start] + order[::-1]


def _nearest_neighbour(dist, start):
    n = len(dist)
    tour = [start]
    left = set(range(n)) - {start}
    while left:
        here = tour[-1]
        nxt = min(left, key=lambda k: (dist[here, k], k))
        tour.append(nxt)
        left.remove(nxt)
    return tour


def _two_opt(dist, tour):
    tour = np.array(tour)
    n = len(tour)
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            a, b = tour[i], tour[i + 1]
            js = np.arange(i + 2, n if i > 0 else n - 1)
            if len(js) == 0:
                continue
            c = tour[js]
            d = tour[(js + 1) % n]
            delta = dist[a, c] + dist[b, d] - dist[a, b] - dist[c, d]
            k = int(np.argmin(delta))
            if delta[k] < -1e-12:
                j = int(js[k])
                tour[i + 1:j + 1] = tour[i + 1:j + 1][::-1]
                improved = True
    return tour.tolist()


def _or_opt(dist, tour):
    """Move segments of 1-3 nodes elsewhere in the tour while it helps."""
    n = len(tour)
    improved = True
    while improved:
        improved = False
        base = tour_length(dist, tour)
        for seg in (1, 2, 3):
            for i in range(1, n - seg + 1):
                piece = tour[i:i + seg]
                rest = tour[:i] + tour[i + seg:]
                for j in range(1, len(rest) + 1):
                    for chunk in (piece, piece[::-1]):
                        cand = rest[:j] + chunk + rest[j:]
                        if cand == tour:
                            continue
                        if tour_length(dist, cand) < base - 1e-12:
                            tour = cand
                            base = tour_length(dist, tour)
                            improved = True
                            break
                    if improved:
                        break
                if improved:
                    break
            if improved:
                break
    return tour


def heuristic_tour(dist: np.ndarray, start: int = 0, restarts: int = 4) -> tuple[float, list]:
    """Nearest-neighbour construction refined by 2-opt (and or-opt when small)."""
    dist = np.asarray(dist, dtype=float)
    n = len(dist)
    if n <= 1:
        return 0.0, [start] if n else []
    seeds = [start] + [k for k in range(n) if k != start][:max(restarts - 1, 0)]
    best = None
    for seed in seeds:
        tour = _two_opt(dist, _nearest_neighbour(dist, seed))
        if n <= 40:
            tour = _or_opt(dist, tour)
            tour = _two_opt(dist, tour)
        k = tour.index(start)
        tour = tour[k:] + tour[:k]
        length = tour_length(dist, tour)
        if best is None or length < best[0] - 1e-12:
            best = (length, tour)
    return best


def solve_tour(dist: np.ndarray, start: int = 0, exact_limit: int = EXACT_TOUR_LIMIT):
    """Closed tour: exact up to ``exact_limit`` nodes, heuristic beyond."""
    if len(dist) <= exact_limit:
        return held_karp(dist, start)
    return heuristic_tour(dist, start)


def brute_force_tour(dist: np.ndarray, start: int = 0) -> float:
    n = len(dist)
    others = [k for k in range(n) if k != start]
    best = math.inf
    for perm in itertools.permutations(others):
        best = min(best, tour_length(dist, [start, *perm]))
    return 0.0 if n <= 1 else best


# ---------------------------------------------------------- exploration label


def unknown_free_components(env: GroundTruthEnvironment, pmap: PartialMap) -> np.ndarray:
    """8-connected labels of cells free in the world but unknown in the map."""
    labels, _ = ndimage.label(env.free & (pmap.occupancy == UNKNOWN), structure=_EIGHT)
    return labels


def exploration_region(env, pmap, frontier: Frontier, components=None) -> np.ndarray:
    """Frontier cells plus every unknown free component touching them (4-neighbours)."""
    if components is None:
        components = unknown_free_components(env, pmap)
    h, w = components.shape
    r, c = frontier.cells[:, 0], frontier.cells[:, 1]
    touching = set()
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nr, nc = r + dr, c + dc
        ok = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
        touching.update(components[nr[ok], nc[ok]].tolist())
    touching.discard(0)
    region = np.zeros((h, w), dtype=bool)
    if touching:
        region = np.isin(components, sorted(touching))
    region[r, c] = True
    return region, bool(touching)


def label_re(env: GroundTruthEnvironment, pmap: PartialMap, frontier: Frontier,
             components=None) -> float:
    """Closed skeleton-tour length (meters) for exploring beyond ``frontier``."""
    region, any_unknown = exploration_region(env, pmap, frontier, components)
    if not any_unknown:
        return 0.0
    rows, cols = np.nonzero(region)
    r0, c0 = max(rows.min() - 1, 0), max(cols.min() - 1, 0)
    r1, c1 = rows.max() + 2, cols.max() + 2
    crop = region[r0:r1, c0:c1]
    anchor = (frontier.centroid[0] - r0, frontier.centroid[1] - c0)
    graph = skeletonize(crop, anchor_near=anchor, resolution=env.resolution)
    d = graph.node_distances()
    keep = np.flatnonzero(np.isfinite(d[graph.anchor]))
    d = d[np.ix_(keep, keep)]
    start = int(np.flatnonzero(keep == graph.anchor)[0])
    length, _ = solve_tour(d, start)
    return float(length)


def label_frontier(env, pmap, frontier, goal, components=None) -> LabeledSubgoal:
    p_s, r_s = label_ps_rs(env, pmap, frontier, goal)
    r_e = None
    if p_s == 0:
        r_e = label_re(env, pmap, frontier, components)
    return LabeledSubgoal(frontier.id, p_s, r_s, r_e)


# ---------------------------------------------------------------- datasets

DATASET_SCHEMA = 1


def generate_dataset(corpus, episodes_per_env: int, out, seed: int = 0,
                     dist_range=(2.0, 15.0), budget: int = 500, max_records: int = 50000,
                     nav_config=None) -> dict:
    """Label frontiers seen while an optimistic planner runs random episodes.

    A record is written for every frontier at each timestep where the set of
    candidate frontiers changed. Returns a summary dict.
    """
    from .bench import generate_episodes
    from .estimator import FEATURE_NAMES, FEATURE_SCHEMA, featurize, goal_field
    from .planner import NavConfig, OptimisticPolicy, make_belief, navigate_episode

    corpus = list(corpus)
    cfg = nav_config or NavConfig(budget=budget)
    episodes = generate_episodes(corpus, episodes_per_env * len(corpus), seed, dist_range,
                                 per_env=episodes_per_env)
    by_env = {env.id: env for env in corpus}
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_records = 0
    n_pos = 0
    with open(out, "w") as fh:
        header = {"type": "header", "schema_version": DATASET_SCHEMA,
                  "feature_schema": FEATURE_SCHEMA, "feature_names": FEATURE_NAMES,
                  "seed": seed, "episodes_per_env": episodes_per_env,
                  "max_records": max_records}
        fh.write(json.dumps(header) + "\n")
        for ep in episodes:
            if n_records >= max_records:
                break
            env = by_env[ep.env_id]
            last_ids = [None]

            def on_step(t, pmap, pose, env=env, ep=ep):
                nonlocal n_records, n_pos
                belief = make_belief(pmap, pose, ep.goal, cfg.min_frontier_cells)
                ids = tuple(f.id for f in belief.subgoals)
                if ids == last_ids[0] or not ids:
                    return
                last_ids[0] = ids
                comps = unknown_free_components(env, pmap)
                gd = goal_field(pmap, ep.goal)
                for f in belief.subgoals:
                    if n_records >= max_records:
                        return
                    lab = label_frontier(env, pmap, f, ep.goal, comps)
                    feats = featurize(pmap, pose, f, ep.goal, belief.robot_field, gd)
                    rec = record_from_label(lab, feats, env, ep, t)
                    fh.write(json.dumps(rec) + "\n")
                    n_records += 1
                    n_pos += lab.p_s

            navigate_episode(env, ep, OptimisticPolicy(), config=cfg, on_step=on_step)
    return {"records": n_records, "positives": n_pos, "episodes": len(episodes), "path": str(out)}


def record_from_label(lab: LabeledSubgoal, feats, env, episode, t) -> dict:
    diag = math.hypot(*env.shape) * env.resolution
    return {
        "env_id": env.id, "episode": episode.index, "t": t, "frontier_id": lab.frontier_id,
        "features": [float(v) for v in feats], "p_s": lab.p_s,
        "r_s": lab.r_s, "r_e": lab.r_e,
        "mask_ps": True, "mask_rs": lab.mask_rs, "mask_re": lab.mask_re,
        "map_diag": diag,
    }


def load_dataset(path) -> tuple[dict, list]:
    """Header dict and list of record dicts from a JSON-lines dataset."""
    header = None
    records = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("type") == "header":
                header = rec
            else:
                records.append(rec)
    if header is None:
        raise ValueError(f"{path}: missing header record")
    return header, records
