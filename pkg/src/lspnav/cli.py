"""Command-line entry points for the map/data/train/eval pipeline."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench, estimator, gridworld, labels
from .planner import NavConfig


def _gen_maps(args):
    cfg = gridworld.GeneratorConfig(dead_end_density=args.dead_end_density)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        env_id = f"map_{k:04d}"
        env = gridworld.generate_environment(args.seed * 100003 + k, cfg, env_id)
        gridworld.save_environment(env, out / f"{env_id}.txt")
    print(f"wrote {args.count} maps to {out}")


def _gen_episodes(args):
    corpus = bench.load_corpus(args.corpus)
    eps = bench.generate_episodes(corpus, args.count, args.seed, (args.dist_min, args.dist_max))
    out = Path(args.out) if args.out else Path(args.corpus) / "episodes.jsonl"
    bench.save_episodes(eps, out, seed=args.seed)
    print(f"wrote {len(eps)} episodes to {out}")


def _gen_data(args):
    corpus = bench.load_corpus(args.corpus)
    summary = labels.generate_dataset(corpus, args.episodes_per_env, args.out, seed=args.seed,
                                      dist_range=(args.dist_min, args.dist_max),
                                      max_records=args.max_records)
    print(f"wrote {summary['records']} records ({summary['positives']} positive) to {args.out}")


def _train(args):
    cfg = estimator.TrainConfig(lam=args.lam, lr=args.lr, epochs=args.epochs,
                                batch_size=args.batch_size, seed=args.seed)
    params, report = estimator.train(args.data, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    estimator.save_params(params, out)
    report.to_csv(out.with_suffix(".report.csv"))
    last = report.epochs[-1]
    print(f"saved model to {out}; final train loss {last['train_loss']:.4f}")


def _eval(args):
    corpus = bench.load_corpus(args.corpus)
    episodes = bench.load_episodes(args.episodes)
    model = estimator.load_params(args.model) if args.model else None
    if args.policy == "lsp-learned" and model is None:
        raise ValueError("--policy lsp-learned requires --model")
    summaries = bench.run_experiment(corpus, episodes, [args.policy], args.out,
                                     parallelism=args.jobs, model=model,
                                     config=NavConfig(budget=args.budget))
    s = summaries[args.policy]
    print(f"{s.policy}: success {s.success_rate:.3f}  spl {s.spl:.3f}  softspl {s.softspl:.3f}")


def _compare(args):
    rows = bench.compare(args.runs, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lspnav", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-maps", help="generate a corpus of random floor plans")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--dead-end-density", type=float, default=0.5)
    s.set_defaults(func=_gen_maps)

    s = sub.add_parser("gen-episodes", help="sample start/goal episodes over a corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--dist-min", type=float, default=bench.DEFAULT_DIST_RANGE[0])
    s.add_argument("--dist-max", type=float, default=bench.DEFAULT_DIST_RANGE[1])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=_gen_episodes)

    s = sub.add_parser("gen-data", help="label frontiers along optimistic runs")
    s.add_argument("--corpus", required=True)
    s.add_argument("--episodes-per-env", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dist-min", type=float, default=bench.DEFAULT_DIST_RANGE[0])
    s.add_argument("--dist-max", type=float, default=bench.DEFAULT_DIST_RANGE[1])
    s.add_argument("--max-records", type=int, default=50000)
    s.set_defaults(func=_gen_data)

    s = sub.add_parser("train", help="fit the property estimator")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, default=6)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--lambda", dest="lam", type=float, default=1e-2)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_train)

    s = sub.add_parser("eval", help="run a policy over an episode set")
    s.add_argument("--corpus", required=True)
    s.add_argument("--episodes", required=True)
    s.add_argument("--policy", choices=bench.POLICIES, required=True)
    s.add_argument("--model")
    s.add_argument("--budget", type=int, default=500)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_eval)

    s = sub.add_parser("compare", help="merge summary tables from several runs")
    s.add_argument("--runs", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, FileNotFoundError, gridworld.MapFormatError, estimator.SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
