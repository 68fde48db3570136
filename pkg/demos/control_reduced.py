"""Reduced-scale continuous Mountain Car: RP-BBAC against the naive and BAC variants.

The reported scale (2x256 networks, batch 256) takes hours per seed in numpy;
this demo uses 64x64 networks, batch 64 and one evaluation episode.

Usage: python demos/control_reduced.py rp|naive|bac [--seed 0] [--steps 30000]
"""

import argparse
import time

from bbo.bbac import BbacAgent, BbacConfig, bac_ablation_config, naive_config, run_training
from bbo.envs import mountain_car_continuous
from bbo.numerics import Rng


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("variant", choices=("rp", "naive", "bac"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=30_000)
    args = parser.parse_args()
    base = dict(hidden=(64, 64), batch_size=64, eval_episodes=1)
    cfg = {"rp": BbacConfig, "naive": naive_config, "bac": bac_ablation_config}[args.variant](**base)
    env = mountain_car_continuous()
    agent = BbacAgent(env.obs_dim, env.action_dim, cfg, seed=args.seed)
    t0 = time.perf_counter()
    rows = run_training(agent, env, args.steps, Rng(args.seed))
    for r in rows:
        if r.metric in ("control.eval_return", "rp.ensemble_var"):
            print(f"{r.step:7d}  {r.metric:20s} {r.value:.4g}")
    print(f"{time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
