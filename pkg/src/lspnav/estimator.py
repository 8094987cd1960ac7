"""Subgoal-property estimators: frontier features, a small trainable model
and a ground-truth oracle.

Every estimator exposes ``estimate(belief, subgoals)`` returning one
:class:`~lspnav.planner.SubgoalProperties` per subgoal, which is what the
planner consumes.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, costs, labels
from .frontier import Frontier
from .gridworld import NUM_CATEGORIES, Pose, point_to_cell
from .mapping import OCCUPIED, UNKNOWN, PartialMap, free_space_field
from .planner import SubgoalProperties, optimistic_field, terminal_penalty

log = logging.getLogger(__name__)

HIST_RADIUS = 0.5
FEATURE_NAMES = (
    ["frontier_cells", "robot_distance", "goal_distance", "goal_bearing",
     "unknown_fraction"]
    + [f"semantic_{k}" for k in range(1, NUM_CATEGORIES + 1)]
    + ["boundary_distance", "optimistic_goal_distance", "optimistic_detour",
       "goal_behind", "behind_distance"]
)
FEATURE_SCHEMA = "v3-" + hashlib.sha1(",".join(FEATURE_NAMES).encode()).hexdigest()[:10]
NUM_FEATURES = len(FEATURE_NAMES)
PROB_EPS = 1e-6


class SchemaError(ValueError):
    pass


# ----------------------------------------------------------------- features


def outward_normal(pmap: PartialMap, frontier: Frontier) -> np.ndarray:
    """Unit (row, col) vector from the centroid toward the unknown cells it borders."""
    h, w = pmap.shape
    r, c = frontier.cells[:, 0], frontier.cells[:, 1]
    acc = []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nr, nc = r + dr, c + dc
        ok = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
        nr, nc = nr[ok], nc[ok]
        unk = pmap.occupancy[nr, nc] == UNKNOWN
        acc.append(np.stack([nr[unk], nc[unk]], axis=1))
    pts = np.concatenate(acc)
    if len(pts) == 0:
        return np.zeros(2)
    v = pts.mean(axis=0) - np.asarray(frontier.centroid, dtype=float)
    n = np.hypot(*v)
    return v / n if n > 1e-12 else np.zeros(2)


def _segment_unknown_fraction(pmap: PartialMap, start_cell, goal) -> float:
    res = pmap.resolution
    x0, y0 = start_cell[1] + 0.5, start_cell[0] + 0.5
    x1, y1 = goal[0] / res, goal[1] / res
    cap = int(abs(x1 - x0) + abs(y1 - y0)) + 4
    rr = np.empty(cap, dtype=np.int64)
    cc = np.empty(cap, dtype=np.int64)
    n = _kernels.segment_cells(x0, y0, x1, y1, rr, cc)
    rr, cc = rr[:n], cc[:n]
    h, w = pmap.shape
    ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    if not ok.any():
        return 0.0
    return float(np.mean(pmap.occupancy[rr[ok], cc[ok]] == UNKNOWN))


def semantic_histogram(pmap: PartialMap, cell, radius: float = HIST_RADIUS) -> np.ndarray:
    """Normalized counts of detected categories within ``radius`` of ``cell``."""
    k = int(round(radius / pmap.resolution))
    r, c = cell
    h, w = pmap.shape
    r0, r1, c0, c1 = max(r - k, 0), min(r + k + 1, h), max(c - k, 0), min(c + k + 1, w)
    rr, cc = np.mgrid[r0:r1, c0:c1]
    disk = (rr - r) ** 2 + (cc - c) ** 2 <= k * k
    ids = pmap.semantic[r0:r1, c0:c1][disk]
    ids = ids[(ids > 0) & (ids <= pmap.num_categories)]
    hist = np.bincount(ids, minlength=NUM_CATEGORIES + 1)[1:NUM_CATEGORIES + 1].astype(float)
    total = hist.sum()
    return hist / total if total > 0 else hist


def behind_distance(pmap: PartialMap, frontier: Frontier, goal) -> float:
    """Distance from the centroid to the goal through unknown cells only.

    The map-side counterpart of the success label: if this is infinite, no
    world can let the goal be reached by crossing this frontier.
    """
    goal_cell = point_to_cell(goal[0], goal[1], pmap.resolution)
    mask = pmap.occupancy == UNKNOWN
    mask[frontier.cells[:, 0], frontier.cells[:, 1]] = True
    mask[goal_cell] = pmap.occupancy[goal_cell] != OCCUPIED
    d = costs.grid_field(mask, [frontier.centroid], pmap.resolution, stop=goal_cell)
    return float(d[goal_cell])


def goal_field(pmap: PartialMap, goal) -> np.ndarray:
    """Distance to the goal with unknown cells treated as free."""
    return optimistic_field(pmap, point_to_cell(goal[0], goal[1], pmap.resolution))


def featurize(pmap: PartialMap, pose: Pose, frontier: Frontier, goal,
              robot_field: np.ndarray | None = None,
              goal_dist: np.ndarray | None = None) -> np.ndarray:
    """Fixed-length feature vector for one frontier (see ``FEATURE_NAMES``).

    ``robot_field`` and ``goal_dist`` may be passed in to share the two
    distance fields across the frontiers of one map.
    """
    res = pmap.resolution
    if robot_field is None:
        robot_field = free_space_field(pmap, pose.cell(res))
    if goal_dist is None:
        goal_dist = goal_field(pmap, goal)
    cr, cc = frontier.centroid
    cx, cy = (cc + 0.5) * res, (cr + 0.5) * res
    gx, gy = float(goal[0]), float(goal[1])
    d_robot = float(robot_field[cr, cc])
    if not math.isfinite(d_robot):
        raise ValueError("frontier is not reachable from the robot")
    d_goal = math.hypot(gx - cx, gy - cy)
    normal = outward_normal(pmap, frontier)
    bearing = 0.0
    if d_goal > 1e-12 and normal.any():
        to_goal = math.atan2(gy - cy, gx - cx)
        out = math.atan2(normal[0], normal[1])
        bearing = (to_goal - out + math.pi) % (2 * math.pi) - math.pi
    h, w = pmap.shape
    boundary = min(cr, cc, h - 1 - cr, w - 1 - cc) * res
    d_opt = float(goal_dist[cr, cc])
    if not math.isfinite(d_opt):
        d_opt = d_goal
    # extra length of going through this frontier versus the best optimistic route
    here = float(goal_dist[pose.cell(res)])
    detour = max(d_robot + d_opt - here, 0.0) if math.isfinite(here) else 0.0
    d_behind = behind_distance(pmap, frontier, goal)
    behind = math.isfinite(d_behind)
    return np.concatenate([
        [len(frontier), d_robot, d_goal, bearing,
         _segment_unknown_fraction(pmap, frontier.centroid, goal)],
        semantic_histogram(pmap, frontier.centroid),
        [boundary, d_opt, detour, float(behind), d_behind if behind else 0.0],
    ])


# -------------------------------------------------------------------- model


@dataclass
class TrainConfig:
    lam: float = 1e-2
    lr: float = 1e-3
    lr_decay: float = 0.1
    decay_every: int = 2
    epochs: int = 6
    batch_size: int = 32
    hidden: int = 64
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")


@dataclass
class ModelParams:
    """One hidden tanh layer feeding three heads (p_s, r_s, r_e).

    Inputs are standardized with ``mean``/``std``; regression heads are
    softplus outputs multiplied by ``scale`` meters.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    scale: float = 1.0
    seed: int = 0
    schema: str = FEATURE_SCHEMA

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    @classmethod
    def init(cls, n_in: int = NUM_FEATURES, hidden: int = 64, seed: int = 0,
             mean=None, std=None, scale: float = 1.0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        W1 = rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_in, hidden))
        W2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, 3))
        return cls(W1, np.zeros(hidden), W2, np.zeros(3),
                   np.zeros(n_in) if mean is None else np.asarray(mean, float),
                   np.ones(n_in) if std is None else np.asarray(std, float),
                   float(scale), seed)

    @classmethod
    def zeros(cls, n_in: int = NUM_FEATURES, hidden: int = 64) -> "ModelParams":
        return cls(np.zeros((n_in, hidden)), np.zeros(hidden), np.zeros((hidden, 3)),
                   np.zeros(3), np.zeros(n_in), np.ones(n_in))

    def arrays(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "ModelParams":
        return ModelParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(),
                           self.mean.copy(), self.std.copy(), self.scale, self.seed, self.schema)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays().values())


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(params: ModelParams, X: np.ndarray):
    x = (X - params.mean) / params.std
    a = np.tanh(x @ params.W1 + params.b1)
    z = a @ params.W2 + params.b2
    return x, a, z


def predict_batch(params: ModelParams, X) -> np.ndarray:
    """``(n, 3)`` array of (p_s, r_s, r_e) in meters."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.W1.shape[0]:
        raise SchemaError(f"expected {params.W1.shape[0]} features, got {X.shape[1]}")
    _, _, z = _forward(params, X)
    out = np.empty_like(z)
    out[:, 0] = np.clip(_sigmoid(z[:, 0]), PROB_EPS, 1 - PROB_EPS)
    out[:, 1:] = _softplus(z[:, 1:]) * params.scale
    return out


def predict(params: ModelParams, features, schema: str | None = None) -> SubgoalProperties:
    if schema is not None and schema != params.schema:
        raise SchemaError(f"feature schema {schema} does not match model schema {params.schema}")
    p, rs, re_ = predict_batch(params, features)[0]
    return SubgoalProperties(float(p), float(rs), float(re_))


def bce(p, y):
    p = np.clip(p, PROB_EPS, 1 - PROB_EPS)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


def loss(pred: SubgoalProperties, label: labels.LabeledSubgoal, lam: float = 1e-2) -> float:
    """BCE on p_s plus ``lam`` times the L1 error of whichever cost is defined."""
    total = float(bce(pred.p_s, label.p_s))
    if label.mask_rs:
        total += lam * abs(pred.r_s - label.r_s)
    if label.mask_re:
        total += lam * abs(pred.r_e - label.r_e)
    return total


@dataclass
class Batch:
    """Training arrays; ``targets`` are in units of ``ModelParams.scale``."""

    X: np.ndarray
    y: np.ndarray
    r_s: np.ndarray
    r_e: np.ndarray
    mask_rs: np.ndarray
    mask_re: np.ndarray

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Batch":
        return Batch(self.X[idx], self.y[idx], self.r_s[idx], self.r_e[idx],
                     self.mask_rs[idx], self.mask_re[idx])


def loss_and_grad(params: ModelParams, batch: Batch, lam: float, need_grad: bool = True):
    """Mean masked loss over ``batch`` (regression in normalized units) and gradients."""
    x, a, z = _forward(params, batch.X)
    n = len(batch)
    p = _sigmoid(z[:, 0])
    pc = np.clip(p, PROB_EPS, 1 - PROB_EPS)
    y = batch.y
    l_bce = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    rs = _softplus(z[:, 1])
    re_ = _softplus(z[:, 2])
    e_s = rs - batch.r_s
    e_e = re_ - batch.r_e
    total = l_bce + lam * (batch.mask_rs * np.abs(e_s) + batch.mask_re * np.abs(e_e))
    value = float(total.mean())
    if not need_grad:
        return value, float(l_bce.mean()), None
    dz = np.zeros_like(z)
    inside = (p > PROB_EPS) & (p < 1 - PROB_EPS)
    dz[:, 0] = np.where(inside, p - y, 0.0)
    dz[:, 1] = lam * batch.mask_rs * np.sign(e_s) * _sigmoid(z[:, 1])
    dz[:, 2] = lam * batch.mask_re * np.sign(e_e) * _sigmoid(z[:, 2])
    dz /= n
    grads = {"W2": a.T @ dz, "b2": dz.sum(axis=0)}
    da = dz @ params.W2.T * (1 - a * a)
    grads["W1"] = x.T @ da
    grads["b1"] = da.sum(axis=0)
    return value, float(l_bce.mean()), grads


class Adam:
    def __init__(self, params: ModelParams, lr: float, b1: float = 0.9, b2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.t = 0

    def step(self, params: ModelParams, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, arr in params.arrays().items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            arr -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def batch_from_records(records, scale: float) -> Batch:
    X = np.array([r["features"] for r in records], dtype=float).reshape(-1, NUM_FEATURES)
    y = np.array([r["p_s"] for r in records], dtype=float)
    rs = np.array([r["r_s"] if r["r_s"] is not None else 0.0 for r in records]) / scale
    re_ = np.array([r["r_e"] if r["r_e"] is not None else 0.0 for r in records]) / scale
    m_rs = np.array([bool(r["mask_rs"]) for r in records], dtype=float)
    m_re = np.array([bool(r["mask_re"]) for r in records], dtype=float)
    return Batch(X, y, rs, re_, m_rs, m_re)


def split_records(records, val_fraction: float, seed: int):
    """Hold out whole environments so validation reflects unseen maps."""
    envs = sorted({r["env_id"] for r in records})
    rng = np.random.default_rng(seed)
    n_val = int(round(len(envs) * val_fraction))
    if len(envs) < 2 or n_val == 0:
        return list(records), []
    val_envs = set(rng.permutation(envs)[:n_val].tolist())
    return ([r for r in records if r["env_id"] not in val_envs],
            [r for r in records if r["env_id"] in val_envs])


@dataclass
class TrainingReport:
    epochs: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["epoch", "lr", "train_loss", "train_bce",
                                               "val_loss", "val_bce"])
            w.writeheader()
            for row in self.epochs:
                w.writerow(row)


class TrainingError(RuntimeError):
    pass


def train(dataset, config: TrainConfig | None = None, val=None):
    """Fit a model with Adam under the masked objective.

    ``dataset`` is a list of records (or a dataset path). Validation uses
    ``val`` records if given, else a held-out share of environments.
    Returns ``(params, report)``.
    """
    cfg = config or TrainConfig()
    if isinstance(dataset, (str, Path)):
        header, dataset = labels.load_dataset(dataset)
        if header.get("feature_schema") != FEATURE_SCHEMA:
            raise SchemaError(f"dataset schema {header.get('feature_schema')} != {FEATURE_SCHEMA}")
    records = list(dataset)
    if not records:
        raise ValueError("cannot train on an empty dataset")
    if val is None:
        records, val = split_records(records, cfg.val_fraction, cfg.seed)
    scale = float(np.median([r.get("map_diag", 1.0) for r in records]))
    tr = batch_from_records(records, scale)
    va = batch_from_records(val, scale) if val else None
    mean = tr.X.mean(axis=0)
    std = tr.X.std(axis=0)
    std[std < 1e-8] = 1.0
    params = ModelParams.init(NUM_FEATURES, cfg.hidden, cfg.seed, mean, std, scale)
    opt = Adam(params, cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    report = TrainingReport()
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * cfg.lr_decay ** (epoch // cfg.decay_every)
        order = rng.permutation(len(tr))
        for start in range(0, len(order), cfg.batch_size):
            mb = tr.subset(order[start:start + cfg.batch_size])
            value, _, grads = loss_and_grad(params, mb, cfg.lam)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch offset {start}")
            opt.step(params, grads)
        t_loss, t_bce, _ = loss_and_grad(params, tr, cfg.lam, need_grad=False)
        row = {"epoch": epoch + 1, "lr": opt.lr, "train_loss": t_loss, "train_bce": t_bce,
               "val_loss": "", "val_bce": ""}
        if va is not None and len(va):
            row["val_loss"], row["val_bce"], _ = loss_and_grad(params, va, cfg.lam, need_grad=False)
        log.info("epoch %d: train %.4f val %s", epoch + 1, t_loss, row["val_loss"])
        report.epochs.append(row)
    if not params.is_finite():
        raise TrainingError("parameters became non-finite")
    return params, report


def evaluate_bce(params: ModelParams, records) -> tuple[float, float]:
    """Held-out BCE of the model and of the best constant predictor (label entropy)."""
    b = batch_from_records(records, params.scale)
    p = predict_batch(params, b.X)[:, 0]
    model = float(bce(p, b.y).mean())
    rate = float(np.clip(b.y.mean(), PROB_EPS, 1 - PROB_EPS))
    const = float(bce(np.full(len(b), rate), b.y).mean())
    return model, const


# --------------------------------------------------------------- checkpoints


def save_params(params: ModelParams, path) -> None:
    np.savez(path, **params.arrays(), mean=params.mean, std=params.std,
             scale=np.array(params.scale), seed=np.array(params.seed),
             schema=np.array(params.schema))


def load_params(path) -> ModelParams:
    with np.load(path, allow_pickle=False) as z:
        schema = str(z["schema"])
        if schema != FEATURE_SCHEMA:
            raise SchemaError(f"checkpoint schema {schema} does not match {FEATURE_SCHEMA}")
        return ModelParams(z["W1"], z["b1"], z["W2"], z["b2"], z["mean"], z["std"],
                           float(z["scale"]), int(z["seed"]), schema)


# ---------------------------------------------------------------- estimators


class LearnedEstimator:
    def __init__(self, params: ModelParams):
        self.params = params

    def estimate(self, belief, subgoals) -> list:
        if not subgoals:
            return []
        gd = goal_field(belief.map, belief.goal)
        X = np.stack([featurize(belief.map, belief.pose, f, belief.goal, belief.robot_field, gd)
                      for f in subgoals])
        out = predict_batch(self.params, X)
        return [SubgoalProperties(float(p), float(rs), float(re_)) for p, rs, re_ in out]


class OracleEstimator:
    """Exact labels from the hidden world.

    Labels are cached per frontier id: a frontier with identical cells keeps
    its label for the rest of the episode. Pass ``cache=False`` for labels
    that always reflect the current map.
    """

    def __init__(self, env, cache: bool = True):
        self.env = env
        self.cache = cache
        self._labels: dict = {}
        self._goal = None

    def label(self, belief, frontier: Frontier, components=None) -> labels.LabeledSubgoal:
        goal = tuple(belief.goal)
        if goal != self._goal:
            self._labels.clear()
            self._goal = goal
        if self.cache and frontier.id in self._labels:
            return self._labels[frontier.id]
        lab = labels.label_frontier(self.env, belief.map, frontier, goal, components)
        if self.cache:
            self._labels[frontier.id] = lab
        return lab

    def estimate(self, belief, subgoals) -> list:
        pen = None
        comps = None
        out = []
        for f in subgoals:
            if comps is None and not (self.cache and f.id in self._labels and self._goal == tuple(belief.goal)):
                comps = labels.unknown_free_components(self.env, belief.map)
            lab = self.label(belief, f, comps)
            if pen is None and (lab.r_s is None or lab.r_e is None):
                pen = terminal_penalty(belief.map, point_to_cell(*belief.goal, belief.map.resolution))
            out.append(SubgoalProperties(float(lab.p_s),
                                         pen if lab.r_s is None else lab.r_s,
                                         pen if lab.r_e is None else lab.r_e))
        return out


def oracle_estimator(env, cache: bool = True) -> OracleEstimator:
    return OracleEstimator(env, cache)
