"""Episode sampling, navigation metrics and experiment sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .gridworld import Pose, TURN_STEP, cell_center, load_environment
from .planner import (
    Episode, EpisodeResult, LSPPolicy, NavConfig, OptimisticPolicy, ground_truth_field,
    navigate_episode,
)

log = logging.getLogger(__name__)

OUTPUT_SCHEMA = 1
POLICIES = ("optimistic", "lsp-oracle", "lsp-learned")
DEFAULT_DIST_RANGE = (2.0, 15.0)


# ----------------------------------------------------------------- episodes


def clearance_cells(env, clearance: int = 2) -> np.ndarray:
    """Free cells with no obstacle within ``clearance`` cells (Chebyshev)."""
    grown = ndimage.binary_dilation(env.occupied, structure=np.ones((3, 3), bool),
                                    iterations=clearance)
    return np.argwhere(env.free & ~grown)


def sample_env_episodes(env, count: int, rng: np.random.Generator, dist_range,
                        clearance: int = 2, max_attempts: int = 200) -> list:
    """Up to ``count`` episodes in one environment; fewer if the range is infeasible."""
    lo, hi = dist_range
    cells = clearance_cells(env, clearance)
    if len(cells) < 2:
        return []
    res = env.resolution
    quantum = res * math.sqrt(2.0) / 2
    out = []
    attempts = 0
    while len(out) < count and attempts < max_attempts:
        attempts += 1
        s = tuple(int(v) for v in cells[rng.integers(len(cells))])
        d = ground_truth_field(env, s)[cells[:, 0], cells[:, 1]]
        ok = np.flatnonzero((d >= lo - quantum) & (d <= hi + quantum) & (d > 0))
        if len(ok) == 0:
            continue
        j = ok[rng.integers(len(ok))]
        sx, sy = cell_center(s, res)
        heading = int(rng.integers(360 // TURN_STEP)) * TURN_STEP
        gx, gy = cell_center((int(cells[j, 0]), int(cells[j, 1])), res)
        out.append(Episode(env.id, Pose(sx, sy, heading), (gx, gy), float(d[j])))
    return out


def generate_episodes(corpus, count: int, seed: int = 0, dist_range=DEFAULT_DIST_RANGE,
                      per_env: int | None = None) -> list:
    """Deterministic start/goal pairs whose ground-truth geodesic lies in ``dist_range``.

    ``count`` episodes are spread round-robin over the corpus (or exactly
    ``per_env`` per environment). Environments where no pair fits the range
    are skipped with a warning.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("corpus is empty")
    if dist_range[0] > dist_range[1]:
        raise ValueError("dist_range must be [min, max]")
    if per_env is not None:
        quotas = [per_env] * len(corpus)
    else:
        quotas = [count // len(corpus) + (1 if k < count % len(corpus) else 0)
                  for k in range(len(corpus))]
    episodes = []
    for k, (env, quota) in enumerate(zip(corpus, quotas)):
        if quota == 0:
            continue
        rng = np.random.default_rng([seed, k])
        got = sample_env_episodes(env, quota, rng, dist_range)
        if len(got) < quota:
            log.warning("env %s: only %d of %d episodes fit dist_range %s",
                        env.id, len(got), quota, dist_range)
        episodes.extend(got)
    return [Episode(e.env_id, e.start, e.goal, e.geodesic_length, i)
            for i, e in enumerate(episodes)]


def save_episodes(episodes, path, seed=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps({"type": "header", "schema_version": OUTPUT_SCHEMA,
                             "seed": seed, "count": len(episodes)}) + "\n")
        for e in episodes:
            fh.write(json.dumps(e.to_dict()) + "\n")


def load_episodes(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            d = json.loads(line)
            if d.get("type") != "header":
                out.append(Episode.from_dict(d))
    return out


def load_corpus(directory) -> list:
    """Every ``*.txt`` map in ``directory``, sorted by file name."""
    paths = sorted(Path(directory).glob("*.txt"))
    if not paths:
        raise FileNotFoundError(f"no map files in {directory}")
    return [load_environment(p) for p in paths]


# ------------------------------------------------------------------ metrics


def _row(r):
    return r.to_dict() if isinstance(r, EpisodeResult) else r


def episode_spl(r) -> float:
    r = _row(r)
    if not r["success"]:
        return 0.0
    l, p = r["geodesic_length"], r["path_length"]
    denom = max(p, l)
    return 1.0 if denom <= 0 else l / denom


def episode_softspl(r) -> float | None:
    r = _row(r)
    d0 = r["initial_goal_distance"]
    if d0 <= 0:
        return None
    l, p = r["geodesic_length"], r["path_length"]
    progress = max(0.0, 1.0 - r["final_goal_distance"] / d0)
    denom = max(p, l)
    return progress * (1.0 if denom <= 0 else l / denom)


def spl(results) -> float:
    results = list(results)
    if not results:
        raise ValueError("spl of no episodes")
    return float(np.mean([episode_spl(r) for r in results]))


def softspl(results) -> float:
    vals = [episode_softspl(r) for r in results]
    kept = [v for v in vals if v is not None]
    if len(kept) < len(vals):
        log.warning("softspl: excluded %d episodes with zero initial distance", len(vals) - len(kept))
    if not kept:
        raise ValueError("softspl of no usable episodes")
    return float(np.mean(kept))


@dataclass
class MetricsSummary:
    policy: str
    episodes: int
    success_rate: float
    spl: float
    softspl: float
    mean_path_length: float
    mean_steps: float
    rows: list = field(default_factory=list, repr=False)

    @classmethod
    def from_results(cls, policy: str, results) -> "MetricsSummary":
        rows = [_row(r) for r in results]
        if not rows:
            raise ValueError("no results to summarize")
        return cls(policy, len(rows), float(np.mean([r["success"] for r in rows])),
                   spl(rows), softspl(rows),
                   float(np.mean([r["path_length"] for r in rows])),
                   float(np.mean([r["steps"] for r in rows])), rows)

    def as_dict(self) -> dict:
        return {"policy": self.policy, "episodes": self.episodes,
                "success_rate": f"{self.success_rate:.6f}", "spl": f"{self.spl:.6f}",
                "softspl": f"{self.softspl:.6f}",
                "mean_path_length": f"{self.mean_path_length:.6f}",
                "mean_steps": f"{self.mean_steps:.3f}"}


SUMMARY_FIELDS = ["policy", "episodes", "success_rate", "spl", "softspl",
                  "mean_path_length", "mean_steps"]


# -------------------------------------------------------------- experiments


def make_policy(name: str, env, model=None):
    if name == "optimistic":
        return OptimisticPolicy()
    if name == "lsp-oracle":
        from .estimator import OracleEstimator
        return LSPPolicy(OracleEstimator(env), name)
    if name == "lsp-learned":
        if model is None:
            raise ValueError("lsp-learned needs a trained model")
        from .estimator import LearnedEstimator
        return LSPPolicy(LearnedEstimator(model), name)
    raise ValueError(f"unknown policy {name!r}; choose from {POLICIES}")


def _run_one(task):
    env, episode, name, model, cfg = task
    try:
        return navigate_episode(env, episode, make_policy(name, env, model), config=cfg).to_dict()
    except Exception:  # a crash is a failed episode, not a failed sweep
        log.error("episode %d (%s) crashed:\n%s", episode.index, name, traceback.format_exc())
        return {"index": episode.index, "env_id": episode.env_id, "policy": name,
                "success": False, "path_length": 0.0,
                "final_goal_distance": episode.geodesic_length,
                "initial_goal_distance": episode.geodesic_length,
                "geodesic_length": episode.geodesic_length, "steps": 0,
                "failure_mode": "internal"}


def run_policy(corpus, episodes, name: str, model=None, config: NavConfig | None = None,
               parallelism: int = 1, progress=None) -> list:
    """Per-episode result dicts in episode order."""
    by_id = {env.id: env for env in corpus}
    cfg = config or NavConfig()
    tasks = [(by_id[e.env_id], e, name, model, cfg) for e in episodes]
    if parallelism > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(parallelism) as pool:
            rows = list(pool.imap(_run_one, tasks, chunksize=1))
    else:
        rows = []
        for k, t in enumerate(tasks):
            rows.append(_run_one(t))
            if progress is not None:
                progress(k + 1, len(tasks), rows[-1])
    rows.sort(key=lambda r: r["index"])
    return rows


def write_summary_csv(summaries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for s in summaries:
            w.writerow(s.as_dict())


def run_experiment(corpus, episodes, policies, out, parallelism: int = 1, model=None,
                   config: NavConfig | None = None, seed=None) -> dict:
    """Run every policy over every episode and persist the results.

    Writes ``<policy>.jsonl`` (one record per episode, after a header),
    ``<policy>_summary.csv`` and ``comparison.csv`` into ``out``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = list(corpus)
    summaries = {}
    for name in policies:
        rows = run_policy(corpus, episodes, name, model, config, parallelism)
        with open(out / f"{name}.jsonl", "w") as fh:
            fh.write(json.dumps({"type": "header", "schema_version": OUTPUT_SCHEMA,
                                 "policy": name, "seed": seed}) + "\n")
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        summary = MetricsSummary.from_results(name, rows)
        write_summary_csv([summary], out / f"{name}_summary.csv")
        summaries[name] = summary
    write_summary_csv(summaries.values(), out / "comparison.csv")
    return summaries


def load_results(path) -> list:
    with open(path) as fh:
        return [d for d in map(json.loads, fh) if d.get("type") != "header"]


def compare(run_dirs, out) -> list:
    """Merge per-policy summary CSVs from several run directories into one table.

    Missing metrics are left blank.
    """
    rows = []
    for d in run_dirs:
        for path in sorted(Path(d).glob("*_summary.csv")):
            with open(path) as fh:
                for row in csv.DictReader(fh):
                    row = {k: row.get(k, "") for k in SUMMARY_FIELDS}
                    rows.append({"run": str(d), **row})
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["run"] + SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows
