"""Subgoal planning under map uncertainty and the two-stage episode loop.

High-level actions are frontiers. Each carries three estimated properties:
the probability ``p_s`` that the unknown space beyond it leads to the goal,
the expected remaining cost ``r_s`` from the frontier to the goal if it does,
and the expected cost ``r_e`` of exploring beyond it and coming back if it
does not. The expected cost of committing to frontier ``a`` from the robot
position is

    Q(a) = D(robot, a) + p_s(a) r_s(a)
           + (1 - p_s(a)) [r_e(a) + min_b Q'(b)]

where ``Q'`` is the same quantity evaluated from ``a`` over the subgoals not
yet tried. When every subgoal has been tried and failure mass remains, a
fixed terminal penalty is charged.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import costs
from .frontier import Frontier, extract_frontiers, filter_min_size
from .gridworld import (
    Action, GroundTruthEnvironment, Pose, FORWARD_STEP, TURN_STEP, cell_center,
    forward_target, point_to_cell, sense, step,
)
from .mapping import (
    FREE, OCCUPIED, PartialMap, free_space_field, goal_reachable_known, integrate,
    mark_collision, new_partial_map,
)

MAX_EXACT_SUBGOALS = 12
SUCCESS_RADIUS = 0.2


class PlanningFailure(RuntimeError):
    """No subgoal can be selected and the goal is not reachable."""


@dataclass(frozen=True)
class SubgoalProperties:
    p_s: float
    r_s: float
    r_e: float

    def __post_init__(self):
        if not 0.0 <= self.p_s <= 1.0:
            raise ValueError(f"p_s must lie in [0, 1], got {self.p_s}")
        if not (math.isfinite(self.r_s) and math.isfinite(self.r_e)) or self.r_s < 0 or self.r_e < 0:
            raise ValueError(f"r_s and r_e must be finite and non-negative, got {self.r_s}, {self.r_e}")


@dataclass
class Belief:
    """Planner state: partial map, robot pose, candidate subgoals and the goal."""

    map: PartialMap
    pose: Pose
    subgoals: list
    goal: tuple
    robot_field: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def robot_cell(self):
        return self.pose.cell(self.map.resolution)

    @property
    def goal_cell(self):
        return point_to_cell(self.goal[0], self.goal[1], self.map.resolution)


def make_belief(pmap: PartialMap, pose: Pose, goal, min_cells: int = 3,
                exclude=frozenset()) -> Belief:
    """Frontiers of the robot's reachable free space, minus small ones.

    Isolated free cells seen through gaps are not part of any subgoal. Falls
    back to ``min_cells=1`` when the size filter would leave nothing.
    """
    robot_field = free_space_field(pmap, pose.cell(pmap.resolution))
    frontiers = extract_frontiers(pmap, within=np.isfinite(robot_field))
    reachable = [f for f in frontiers if f.id not in exclude]
    subgoals = filter_min_size(reachable, min_cells)
    if not subgoals:
        subgoals = reachable
    return Belief(pmap, pose, subgoals, tuple(goal), robot_field)


@dataclass
class PlannerDecision:
    """Chosen frontier (``None`` means head for the goal) and its cost."""

    chosen: Optional[Frontier]
    expected_cost: float
    per_subgoal_costs: dict = field(default_factory=dict)


# ------------------------------------------------------------ expected cost


@functools.lru_cache(maxsize=None)
def _subset_layers(n: int):
    masks = np.arange(1 << n, dtype=np.int64)
    pop = np.zeros(1 << n, dtype=np.int64)
    for b in range(n):
        pop += (masks >> b) & 1
    return [masks[pop == k] for k in range(n + 1)]


def expected_cost(props, dists, terminal_penalty: float = 0.0) -> np.ndarray:
    """Expected cost of committing to each subgoal first.

    ``props`` lists one :class:`SubgoalProperties` per subgoal; ``dists`` is
    the ``(n+1)x(n+1)`` travel-cost table with the robot at index 0. The
    recursion over remaining subgoals is solved exactly by dynamic
    programming over (remaining set, current subgoal).
    """
    n = len(props)
    if n == 0:
        raise ValueError("expected_cost needs at least one subgoal")
    dists = np.asarray(dists, dtype=float)
    if dists.shape != (n + 1, n + 1):
        raise ValueError(f"distance table must be {(n + 1, n + 1)}, got {dists.shape}")
    if not np.isfinite(dists).all():
        raise ValueError("all pairwise distances must be finite")
    p = np.array([pr.p_s for pr in props])
    c = p * np.array([pr.r_s for pr in props]) + (1 - p) * np.array([pr.r_e for pr in props])
    f = 1 - p
    # value[S, j]: expected cost with subgoals S untried, standing at node j
    value = np.full((1 << n, n + 1), np.inf)
    value[0, :] = terminal_penalty
    layers = _subset_layers(n)
    for k in range(1, n):
        sets = layers[k]
        for a in range(n):
            sel = sets[(sets >> a) & 1 == 1]
            if len(sel) == 0:
                continue
            tail = value[sel ^ (1 << a), a + 1]
            cand = dists[:, a + 1][None, :] + (c[a] + f[a] * tail)[:, None]
            np.minimum(value[sel], cand, out=cand)
            value[sel] = cand
    full = (1 << n) - 1
    q = np.empty(n)
    for a in range(n):
        q[a] = dists[0, a + 1] + c[a] + f[a] * value[full ^ (1 << a), a + 1]
    return q


def brute_force_expected_cost(props, dists, terminal_penalty: float = 0.0) -> np.ndarray:
    """Enumerate every ordering of the subgoals; reference for tests."""
    import itertools
    n = len(props)
    q = np.full(n, np.inf)
    for order in itertools.permutations(range(n)):
        total = terminal_penalty
        for pos in range(n - 1, -1, -1):
            a = order[pos]
            prev = 0 if pos == 0 else order[pos - 1] + 1
            pr = props[a]
            total = dists[prev][a + 1] + pr.p_s * pr.r_s + (1 - pr.p_s) * (pr.r_e + total)
        q[order[0]] = min(q[order[0]], total)
    return q


def myopic_scores(props, dists) -> np.ndarray:
    return np.array([dists[0][i + 1] + pr.p_s * pr.r_s + (1 - pr.p_s) * pr.r_e
                     for i, pr in enumerate(props)])


# ----------------------------------------------------------------- policies


def optimistic_field(pmap: PartialMap, goal_cell) -> np.ndarray:
    """Distance to the goal treating unknown cells as free."""
    trav = pmap.occupancy != OCCUPIED
    if not trav[goal_cell]:
        return np.full(pmap.shape, np.inf)
    return costs.grid_field(trav, [goal_cell], pmap.resolution)


def terminal_penalty(pmap: PartialMap, goal_cell, field_=None) -> float:
    """Twice the largest finite optimistic distance-to-goal on the map."""
    field_ = optimistic_field(pmap, goal_cell) if field_ is None else field_
    finite = field_[np.isfinite(field_)]
    bound = float(finite.max()) if finite.size else 0.0
    return 2.0 * max(bound, pmap.resolution)


def select_subgoal(belief: Belief, estimator) -> PlannerDecision:
    """Pick the frontier with the lowest expected cost (ties: lowest id)."""
    subgoals = sorted(belief.subgoals, key=lambda f: f.id)
    if not subgoals:
        raise PlanningFailure("no reachable frontier")
    if belief.robot_field is None:
        belief.robot_field = free_space_field(belief.map, belief.robot_cell)
    props = list(estimator.estimate(belief, subgoals))
    if len(subgoals) == 1:
        only = subgoals[0]
        d = float(belief.robot_field[only.centroid])
        pr = props[0]
        pen = terminal_penalty(belief.map, belief.goal_cell)
        q = d + pr.p_s * pr.r_s + (1 - pr.p_s) * (pr.r_e + pen)
        return PlannerDecision(only, q, {only.id: q})
    dists = costs.pairwise_subgoal_distances(belief.map, belief.pose, subgoals,
                                             robot_field=belief.robot_field)
    keep = list(range(len(subgoals)))
    if len(subgoals) > MAX_EXACT_SUBGOALS:
        score = myopic_scores(props, dists)
        keep = sorted(np.argsort(score, kind="stable")[:MAX_EXACT_SUBGOALS].tolist())
        idx = [0] + [k + 1 for k in keep]
        dists = dists[np.ix_(idx, idx)]
        subgoals = [subgoals[k] for k in keep]
        props = [props[k] for k in keep]
    pen = terminal_penalty(belief.map, belief.goal_cell)
    q = expected_cost(props, dists, pen)
    best = int(np.argmin(q))
    return PlannerDecision(subgoals[best], float(q[best]),
                           {f.id: float(v) for f, v in zip(subgoals, q)})


def optimistic_select(belief: Belief) -> PlannerDecision:
    """Frontier minimising known distance to it plus optimistic distance to goal."""
    subgoals = sorted(belief.subgoals, key=lambda f: f.id)
    if belief.robot_field is None:
        belief.robot_field = free_space_field(belief.map, belief.robot_cell)
    opt = optimistic_field(belief.map, belief.goal_cell)
    scores = {f.id: float(belief.robot_field[f.centroid] + opt[f.centroid]) for f in subgoals}
    finite = [f for f in subgoals if math.isfinite(scores[f.id])]
    if not finite:
        raise PlanningFailure("goal unreachable even through unknown space")
    best = min(finite, key=lambda f: (scores[f.id], f.id))
    return PlannerDecision(best, scores[best.id], scores)


class OptimisticPolicy:
    name = "optimistic"

    def select(self, belief: Belief) -> PlannerDecision:
        return optimistic_select(belief)


class LSPPolicy:
    def __init__(self, estimator, name: str = "lsp"):
        self.estimator = estimator
        self.name = name

    def select(self, belief: Belief) -> PlannerDecision:
        return select_subgoal(belief, self.estimator)


# ---------------------------------------------------------------- episodes


@dataclass(frozen=True)
class Episode:
    env_id: str
    start: Pose
    goal: tuple
    geodesic_length: float
    index: int = 0

    def to_dict(self) -> dict:
        return {"index": self.index, "env_id": self.env_id,
                "start": [self.start.x, self.start.y, self.start.heading],
                "goal": list(self.goal), "geodesic_length": self.geodesic_length}

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        x, y, h = d["start"]
        return cls(d["env_id"], Pose(float(x), float(y), int(h)), tuple(map(float, d["goal"])),
                   float(d["geodesic_length"]), int(d.get("index", 0)))


@dataclass
class EpisodeResult:
    episode: Episode
    policy: str
    success: bool
    path_length: float
    final_goal_distance: float
    initial_goal_distance: float
    steps: int
    failure_mode: Optional[str] = None
    trajectory: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"index": self.episode.index, "env_id": self.episode.env_id,
                "policy": self.policy, "success": self.success,
                "path_length": self.path_length,
                "final_goal_distance": self.final_goal_distance,
                "initial_goal_distance": self.initial_goal_distance,
                "geodesic_length": self.episode.geodesic_length,
                "steps": self.steps, "failure_mode": self.failure_mode}


@dataclass(frozen=True)
class NavConfig:
    budget: int = 500
    fov: float = 90.0
    max_range: float = 5.0
    lookahead: int = 5
    inflation: int = 1
    min_frontier_cells: int = 3
    stop_radius: float = SUCCESS_RADIUS
    arrive_radius: float = 0.25
    stall_limit: int = 60
    record_trajectory: bool = False


def _dist(pose: Pose, point) -> float:
    return math.hypot(pose.x - point[0], pose.y - point[1])


def _forward_safe(pmap: PartialMap, pose: Pose) -> bool:
    x1, y1 = forward_target(pose)
    free = pmap.occupancy == FREE
    from .gridworld import swept_clear
    return swept_clear(free, pose.x, pose.y, x1, y1, pmap.resolution)


def _turn_toward(heading: int, target: int) -> Action:
    err = costs.angle_diff(target, heading)
    if err >= 180.0 - 1e-9 or err < 0:
        return Action.TURN_LEFT
    return Action.TURN_RIGHT


class _LocalNavigator:
    """Follows distance-field paths with the discrete action set.

    The primary rule is :func:`costs.next_action`. When its Forward would leave
    known free space, or the robot is revisiting a state without progress, the
    navigator instead commits to the heading whose Forward landing cell has
    the smallest remaining distance.
    """

    def __init__(self, cfg: NavConfig):
        self.cfg = cfg
        self.committed: Optional[int] = None
        self.seen: set = set()

    def reset(self):
        self.committed = None
        self.seen.clear()

    def act(self, pmap: PartialMap, pose: Pose, target) -> Optional[Action]:
        res = pmap.resolution
        rc = pose.cell(res)
        free = pmap.occupancy == FREE
        trav = costs.inflated_free(pmap, self.cfg.inflation)
        trav[target] = free[target]
        trav[rc] = free[rc]
        values = costs.grid_field(trav, [target], res, stop=rc, stop_margin=0.6)
        if not np.isfinite(values[rc]):
            trav = free
            values = costs.grid_field(trav, [target], res, stop=rc, stop_margin=0.6)
            if not np.isfinite(values[rc]):
                return None
        raw = costs.grid_field(free, [target], res, stop=rc, stop_margin=0.6)

        if self.committed is not None:
            if pose.heading == self.committed:
                self.committed = None
                if _forward_safe(pmap, pose):
                    return Action.FORWARD
            else:
                return _turn_toward(pose.heading, self.committed)

        key = (rc, pose.heading, pmap.version, target)
        revisit = key in self.seen
        self.seen.add(key)
        if not revisit:
            field_ = costs.DistanceField(values, (target,), trav, res)
            path = costs.extract_path(field_, rc)
            action = costs.next_action(path, pose, self.cfg.lookahead, res)
            if action is not Action.FORWARD or _forward_safe(pmap, pose):
                return action
        heading = self._best_heading(pmap, pose, raw, free)
        if heading is None:
            return Action.TURN_LEFT
        if heading == pose.heading:
            return Action.FORWARD
        self.committed = heading
        return _turn_toward(pose.heading, heading)

    def _best_heading(self, pmap, pose, raw, free):
        res = pmap.resolution
        here = raw[pose.cell(res)]
        best = None
        for k in range(360 // TURN_STEP):
            h = k * TURN_STEP
            probe = Pose(pose.x, pose.y, h)
            x1, y1 = forward_target(probe)
            from .gridworld import swept_clear
            if not swept_clear(free, pose.x, pose.y, x1, y1, res):
                continue
            v = raw[point_to_cell(x1, y1, res)]
            if not v < here - 1e-9:
                continue
            turns = abs(costs.angle_diff(h, pose.heading)) / TURN_STEP
            key = (v, turns, h)
            if best is None or key < best:
                best = key
        return None if best is None else best[2]


def ground_truth_field(env: GroundTruthEnvironment, cell) -> np.ndarray:
    return costs.grid_field(env.free, [cell], env.resolution)


def navigate_episode(env: GroundTruthEnvironment, episode: Episode, policy,
                     budget: int = 500, config: NavConfig | None = None,
                     on_step=None) -> EpisodeResult:
    """Run one episode: explore via subgoals until the goal is known-reachable,
    then drive to it and stop inside the success radius.

    ``on_step(t, pmap, pose)`` is called after each map update, before acting.
    """
    cfg = config or NavConfig(budget=budget)
    budget = cfg.budget if config is not None else budget
    res = env.resolution
    pmap = new_partial_map(env)
    pose = episode.start
    goal = tuple(episode.goal)
    goal_cell = point_to_cell(goal[0], goal[1], res)
    nav = _LocalNavigator(cfg)
    decision: Optional[PlannerDecision] = None
    decided_version = -1
    blacklist: set = set()
    spins = 0
    traveled = 0.0
    failure = None
    success = False
    trajectory = []
    last_target = None
    stall = 0
    watch = (-1, None, math.inf)
    steps = 0

    for t in range(budget):
        integrate(pmap, sense(env, pose, cfg.fov, cfg.max_range))
        if on_step is not None:
            on_step(t, pmap, pose)
        chosen_id = None
        if goal_reachable_known(pmap, pose, goal):
            target = goal_cell
            if _dist(pose, goal) <= cfg.stop_radius:
                action = Action.STOP
            else:
                action = nav.act(pmap, pose, target)
        else:
            if decision is None or pmap.version != decided_version:
                belief = make_belief(pmap, pose, goal, cfg.min_frontier_cells, blacklist)
                try:
                    decision = policy.select(belief)
                except PlanningFailure:
                    failure = "no-frontier"
                    steps = t
                    break
                decided_version = pmap.version
            chosen_id = decision.chosen.id
            target = decision.chosen.centroid
            if target != last_target:
                spins = 0
            if _dist(pose, cell_center(target, res)) <= cfg.arrive_radius:
                # at the frontier: look around before giving up on it
                action = Action.TURN_LEFT
                spins += 1
                if spins > 360 // TURN_STEP:
                    blacklist.add(decision.chosen.id)
                    decision = None
                    spins = 0
            else:
                action = nav.act(pmap, pose, target)
        if target != last_target:
            nav.reset()
            last_target = target
        if action is None:
            failure = "stuck"
            steps = t
            break

        if cfg.record_trajectory:
            trajectory.append({
                "t": t, "pose": [pose.x, pose.y, pose.heading], "action": action.value,
                "chosen_subgoal_id": chosen_id,
                "q_values": dict(decision.per_subgoal_costs) if (decision and chosen_id) else {},
            })
        steps = t + 1
        if action is Action.STOP:
            success = _dist(pose, goal) <= cfg.stop_radius
            break
        new_pose, collided = step(env, pose, action)
        if action is Action.FORWARD and not collided:
            traveled += FORWARD_STEP
        if collided:
            mark_collision(pmap, pose, env.occupied)
        pose = new_pose

        # progress watchdog: map growth or a new closest approach to the target
        d_target = _dist(pose, cell_center(target, res))
        if pmap.version != watch[0] or target != watch[1] or d_target < watch[2] - 1e-9:
            watch = (pmap.version, target, d_target)
            stall = 0
        else:
            stall += 1
            if stall >= cfg.stall_limit:
                failure = "stuck"
                break
    else:
        failure = "timeout"

    if not success and failure is None:
        failure = "wrong-stop"
    gt = ground_truth_field(env, goal_cell)
    d_final = _dist(pose, goal)
    if d_final > cfg.stop_radius:
        d_final = float(gt[pose.cell(res)])
    return EpisodeResult(episode, getattr(policy, "name", "policy"), success, traveled,
                         d_final, float(episode.geodesic_length), steps, failure, trajectory)


def dump_trajectory(result: EpisodeResult, path) -> None:
    """JSON-lines trajectory, one record per timestep."""
    with open(path, "w") as fh:
        for rec in result.trajectory:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
