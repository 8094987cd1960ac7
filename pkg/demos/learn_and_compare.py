"""Train a subgoal-property model and see whether it pays off.

The full loop at a small scale: label frontiers along optimistic runs in
training worlds, fit the model, then send the optimistic and learned
planners through held-out worlds rich in blind corridors. The oracle
planner is included as the ceiling.

    python3 demos/learn_and_compare.py --train-maps 30 --test-maps 15
"""

import argparse
import tempfile
import time
from pathlib import Path

from lspnav import bench, gridworld as gw
from lspnav import estimator as es
from lspnav import labels


def corpus(seed, n, prefix):
    cfg = gw.GeneratorConfig(dead_end_density=1.0)
    return [gw.generate_environment(seed * 100003 + k, cfg, f"{prefix}{k:03d}") for k in range(n)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train-maps", type=int, default=30)
    ap.add_argument("--test-maps", type=int, default=15)
    ap.add_argument("--episodes", type=int, default=45)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    train_maps = corpus(args.seed, args.train_maps, "train")
    test_maps = corpus(args.seed + 1, args.test_maps, "test")
    with tempfile.TemporaryDirectory() as tmp:
        t = time.perf_counter()
        info = labels.generate_dataset(train_maps, 3, Path(tmp) / "d.jsonl", seed=args.seed)
        print(f"labelled {info['records']} frontiers ({info['positives']} lead to the goal) "
              f"in {time.perf_counter() - t:.0f}s")
        _, records = labels.load_dataset(Path(tmp) / "d.jsonl")
    params, report = es.train(records, es.TrainConfig())
    last = report.epochs[-1]
    print(f"trained 6 epochs: train BCE {last['train_bce']:.3f}, validation BCE {last['val_bce']:.3f}\n")

    episodes = bench.generate_episodes(test_maps, args.episodes, seed=args.seed + 2)
    print(f"{'planner':<12} {'success':>8} {'SPL':>7} {'SoftSPL':>8}")
    for name in ("optimistic", "lsp-learned", "lsp-oracle"):
        rows = bench.run_policy(test_maps, episodes, name, model=params)
        s = bench.MetricsSummary.from_results(name, rows)
        print(f"{name:<12} {s.success_rate:8.3f} {s.spl:7.3f} {s.softspl:8.3f}")


if __name__ == "__main__":
    main()
