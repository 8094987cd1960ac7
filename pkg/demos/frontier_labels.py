"""What the estimator is asked to predict, frontier by frontier.

After a few steps in a generated world, each frontier of the partial map
gets three labels computed from the hidden ground truth: whether the goal
is reachable through it (p_s), the travel cost beyond it when it is (r_s),
and the cost of exploring its region and coming back when it is not
(r_e). Next to them are the features the learned model sees.

    python3 demos/frontier_labels.py --seed 7
"""

import argparse

from lspnav import bench, gridworld as gw
from lspnav import estimator as es
from lspnav import labels
from lspnav.mapping import UNKNOWN
from lspnav.planner import OptimisticPolicy, make_belief, navigate_episode


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--at-step", type=int, default=25)
    args = ap.parse_args()

    env = gw.generate_environment(args.seed, gw.GeneratorConfig(dead_end_density=1.0))
    episode = bench.generate_episodes([env], 1, seed=args.seed)[0]
    snap = {}

    def keep(t, pmap, pose):
        if t <= args.at_step:
            snap["m"], snap["pose"], snap["t"] = pmap.copy(), pose, t

    navigate_episode(env, episode, OptimisticPolicy(), on_step=keep)
    m, pose = snap["m"], snap["pose"]
    belief = make_belief(m, pose, episode.goal)
    known = (m.occupancy != UNKNOWN).mean()
    print(f"step {snap['t']}: {100 * known:.0f}% of the map seen, "
          f"{len(belief.subgoals)} frontiers, goal at ({episode.goal[0]:.2f}, {episode.goal[1]:.2f})\n")

    show = ["robot_distance", "goal_distance", "optimistic_detour", "unknown_fraction"]
    print(f"{'frontier':<16} {'cells':>5}  {'p_s':>3} {'r_s':>6} {'r_e':>6}   " +
          " ".join(f"{n[:14]:>14}" for n in show))
    for f in belief.subgoals:
        lab = labels.label_frontier(env, m, f, episode.goal)
        x = es.featurize(m, pose, f, episode.goal)
        rs = f"{lab.r_s:6.2f}" if lab.r_s is not None else "     -"
        re_ = f"{lab.r_e:6.2f}" if lab.r_e is not None else "     -"
        feats = " ".join(f"{x[es.FEATURE_NAMES.index(n)]:14.3f}" for n in show)
        print(f"{f.id:<16} {len(f):>5}  {lab.p_s:>3} {rs} {re_}   {feats}")


if __name__ == "__main__":
    main()
