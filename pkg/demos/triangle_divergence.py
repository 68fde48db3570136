"""TD(0) diverges on the three-state spiral while gradient BBO and TDC converge.

Usage: python demos/triangle_divergence.py [--steps 50000]
"""

import argparse

import numpy as np

from bbo.harness.experiments import get_experiment


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=50_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    exp = get_experiment("triangle")
    every = max(1, args.steps // 10)
    for algo in ("td0", "gradient_bbo", "tdc"):
        rows = [(s, v) for s, m, v in exp.run(algo, {}, args.seed, args.steps, every) if m == "pe.mse"]
        print(f"{algo}:")
        for step, mse in rows:
            print(f"  step {step:6d}  MSE {mse:.4g}" if np.isfinite(mse) else f"  step {step:6d}  MSE diverged")


if __name__ == "__main__":
    main()
