"""Watch two planners cross the same unknown floor plan.

A robot starts somewhere in a generated world with only the goal's
coordinates. The optimistic planner treats unseen space as free and heads
for whichever frontier looks shortest. The learned-subgoal planner, here
fed exact frontier properties by the oracle, also weighs how likely each
frontier is to lead anywhere. Both runs are drawn as ASCII maps.

    python3 demos/one_episode.py --seed 4
"""

import argparse

import numpy as np

from lspnav import bench, gridworld as gw
from lspnav.planner import NavConfig, navigate_episode
from lspnav.bench import make_policy


def render(env, result, step=2):
    """Downsampled map: '#' wall, '.' free, '*' path, 'S' start, 'G' goal."""
    grid = np.where(env.occupied, "#", ".").astype("<U1")
    for rec in result.trajectory:
        x, y, _ = rec["pose"]
        grid[gw.point_to_cell(x, y)] = "*"
    ep = result.episode
    grid[ep.start.cell()] = "S"
    grid[gw.point_to_cell(*ep.goal)] = "G"
    rows = []
    for r in range(0, grid.shape[0], step):
        block = grid[r:r + step]
        line = ""
        for c in range(0, grid.shape[1], step):
            cell = block[:, c:c + step].ravel()
            for mark in "SG*#":
                if mark in cell:
                    line += mark
                    break
            else:
                line += "."
        rows.append(line)
    return "\n".join(rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=4)
    ap.add_argument("--dead-end-density", type=float, default=1.0)
    args = ap.parse_args()

    env = gw.generate_environment(args.seed, gw.GeneratorConfig(dead_end_density=args.dead_end_density))
    episode = bench.generate_episodes([env], 1, seed=args.seed, dist_range=(6.0, 15.0))[0]
    print(f"world {env.id}: {env.shape[1]}x{env.shape[0]} cells, "
          f"shortest route {episode.geodesic_length:.2f} m\n")

    cfg = NavConfig(record_trajectory=True)
    for name in ("optimistic", "lsp-oracle"):
        res = navigate_episode(env, episode, make_policy(name, env), config=cfg)
        print(f"--- {name}: {'reached goal' if res.success else res.failure_mode}, "
              f"travelled {res.path_length:.2f} m in {res.steps} steps, "
              f"SPL {bench.episode_spl(res):.3f}")
        print(render(env, res))
        print()


if __name__ == "__main__":
    main()
