"""Linear BBO on the Boyan chain: fixed point, LSTD parity and shrinking epistemic variance.

Usage: python demos/boyan_posterior.py [--seed 0]
"""

import argparse

import numpy as np

from bbo.envs import boyan_chain, exact_tabular_values, generate_dataset, single_action_policy
from bbo.linear_baselines import lstd_fit
from bbo.linear_bbo import LinearPosterior, fit_exact_omega, posterior_update_batch, predictive
from bbo.numerics import Rng


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    mdp, feats = boyan_chain()
    pi = single_action_policy(mdp.n_states)
    truth = exact_tabular_values(mdp, pi)[1:]
    basis = feats.table[1:]
    data = generate_dataset(mdp, pi, 1000, "trajectory", Rng(args.seed))
    print(" N     BBO MSE   LSTD MSE  mean epistemic var")
    for n in (10, 30, 100, 300, 1000):
        head = data.head(n)
        w = fit_exact_omega(head, feats, np.zeros(4), 10.0, 1.0, mdp.gamma)
        try:
            lstd = f"{np.mean((basis @ lstd_fit(head, feats, mdp.gamma) - truth) ** 2):9.4f}"
        except np.linalg.LinAlgError:
            lstd = "    n/a  "
        post = posterior_update_batch(LinearPosterior.prior(4, mdp.gamma), head, feats)
        epi = predictive(post, w, basis).epistemic.mean()
        print(f"{n:5d}  {np.mean((basis @ w - truth) ** 2):9.4f}  {lstd}  {epi:.4g}")


if __name__ == "__main__":
    main()
