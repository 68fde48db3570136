"""Acceptance criteria 1-9, one verdict line each at the stated tolerance.

Verdicts are printed and collected into the ``acceptance criteria`` section of
the pytest terminal summary. The deep-exploration criterion (9) needs many CPU
hours at the reported scale and only runs with ``BBO_RUN_CONTROL=1``.
"""

import os
import time

import numpy as np
import pytest

from bbo.envs import (
    Dataset, TabularMdp, boyan_chain, exact_tabular_values, generate_dataset, onehot_features, random_mdp, random_mdp_policies,
    single_action_policy,
)
from bbo.harness.experiments import get_experiment
from bbo.linear_baselines import lstd_fit
from bbo.linear_bbo import (
    IncrementalSolver, LinearPosterior, fit_exact_omega, fit_exact_omega_frequentist, msbbe, msbbe_gradient_linear,
    posterior_update_batch,
)
from bbo.mlp import MLP, glorot_init
from bbo.numerics import Rng
from bbo.rp_ensemble import linear_rp_moment_check, tracking_instance, two_timescale_tracking
from oracles import central_diff, gauss_inverse, gauss_solve, rel_err


@pytest.fixture
def verdict(acceptance_log):
    def record(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        print(line)
        acceptance_log.append(line)
        assert ok, line

    return record


def _mse_series(rows):
    return [v for _, m, v in rows if m == "pe.mse"]


# ----------------------------------------------------------------------- 1
def test_criterion_1_triangle(verdict):
    exp = get_experiment("triangle")
    parts, ok = [], True
    for algo in ("td0", "gradient_bbo", "tdc"):
        t0 = time.perf_counter()
        mse = _mse_series(exp.run(algo, {}, 0, 50_000, 50))
        secs = time.perf_counter() - t0
        if algo == "td0":
            peak = max(mse)
            good = not np.isfinite(peak) or peak > 1e3 * mse[0]
            parts.append(f"td0 peak/initial {peak / mse[0]:.3g} (> 1e3)")
        else:
            good = mse[-1] < 1e-2
            parts.append(f"{algo} final MSE {mse[-1]:.3g} (< 1e-2)")
        good = good and secs < 60
        parts[-1] += f" in {secs:.1f}s"
        ok = ok and good
    verdict(1, ok, "; ".join(parts))


# ----------------------------------------------------------------------- 2
def test_criterion_2_lstd_equivalence(verdict):
    cases = []
    mdp, feats = boyan_chain()
    cases.append(("boyan N=1000", generate_dataset(mdp, single_action_policy(14), 1000, "trajectory", Rng(0)), feats, mdp.gamma))
    rmdp, rfeats = random_mdp(seed=0)
    for off in (False, True):
        target, behaviour = random_mdp_policies(rmdp, off, seed=0)
        data = generate_dataset(rmdp, target, 5000, "iid_reset", Rng(1), behaviour=behaviour if off else None)
        cases.append((f"random_mdp_{'off' if off else 'on'} N=5000", data, rfeats, rmdp.gamma))
    parts, ok = [], True
    for name, data, f, gamma in cases:
        w = lstd_fit(data, f, gamma)
        err = np.linalg.norm(fit_exact_omega_frequentist(data, f, gamma) - w) / np.linalg.norm(w)
        ok = ok and err < 1e-5
        parts.append(f"{name} rel err {err:.2g}")
    verdict(2, ok, "; ".join(parts) + " (< 1e-5)")


# ----------------------------------------------------------------------- 3
def test_criterion_3_sherman_morrison(verdict):
    g = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        n, big_n, gamma = int(g.integers(1, 11)), int(g.integers(1, 51)), float(g.uniform(0, 1))
        d = np.eye(n) * g.uniform(0.5, 2.0)
        solver = IncrementalSolver(gauss_inverse(d), np.zeros(n), gamma)
        for _ in range(big_n):
            v, v2, w = g.normal(size=n), g.normal(size=n), g.uniform(0.5, 2.0)
            solver.add(v, v2, 0.0, w)
            d = d + w * np.outer(v, v - gamma * v2)
        worst = max(worst, float(np.max(np.abs(solver.d_inv - gauss_inverse(d)))))
    verdict(3, worst < 1e-8, f"max elementwise |D^-1 - dense inverse| {worst:.2g} over 200 instances (< 1e-8)")


# ----------------------------------------------------------------------- 4
def test_criterion_4_boyan_ballpark(verdict):
    mdp, feats = boyan_chain()
    pi = single_action_policy(14)
    truth = exact_tabular_values(mdp, pi)[1:]
    basis = feats.table[1:]
    bbo, lstd = [], []
    for seed in range(24):
        data = generate_dataset(mdp, pi, 1000, "trajectory", Rng(seed))
        bbo.append(np.mean((basis @ fit_exact_omega(data, feats, np.zeros(4), 10.0, 1.0, mdp.gamma) - truth) ** 2))
        lstd.append(np.mean((basis @ lstd_fit(data, feats, mdp.gamma) - truth) ** 2))
    b, l = float(np.mean(bbo)), float(np.mean(lstd))
    verdict(4, b < 1.0 and b <= 2 * l,
            f"mean final MSE over 24 seeds: BBO {b:.3g}, LSTD {l:.3g}, ratio {b / l:.3g} (BBO < 1.0, ratio <= 2)")


# ----------------------------------------------------------------------- 5
def _bellman_target_variance(mdp, pi, omega):
    """Exact ``Var(r + gamma omega(s') | s)`` under the policy."""
    b = mdp.R + mdp.gamma * omega[None, None, :]
    mean = np.einsum("sa,ast,ast->s", pi, mdp.P, b)
    second = np.einsum("sa,ast,ast->s", pi, mdp.P, b**2)
    return second - mean**2


def _concentration(mdp, policy, feats, n, seed):
    data = generate_dataset(mdp, policy, n, "iid_reset", Rng(seed))
    omega = exact_tabular_values(mdp, policy)
    pi = policy.table
    # phi* by dense solve of the population normal equations E[v v^T] phi = E[v b]
    rho = np.full(mdp.n_states, 1.0 / mdp.n_states)  # iid_reset draws states uniformly
    v = feats.table
    phi_star = gauss_solve(v.T @ (rho[:, None] * v), v.T @ (rho * (mdp.policy_reward(pi) + mdp.gamma * mdp.policy_kernel(pi) @ omega)))
    prior = LinearPosterior.prior(v.shape[1], mdp.gamma)
    traces = [np.trace(prior.covariance())]
    traces += [np.trace(posterior_update_batch(prior, data.head(k), feats).covariance()) for k in range(50, n + 1, 50)]
    post = posterior_update_batch(prior, data, feats)
    err = float(np.linalg.norm(post.mean(omega) - phi_star))
    se = float(np.sqrt(np.sum(_bellman_target_variance(mdp, pi, omega) / (n * rho))))
    return np.array(traces), np.trace(prior.sigma0), err, se


def test_criterion_5_posterior_concentration(verdict):
    # noise-free realisable task: a deterministic 10-cycle with random rewards
    n_states = 10
    p = np.roll(np.eye(n_states), 1, axis=1)
    rewards = Rng(3).normal(n_states)
    det = TabularMdp(P=p[None], R=np.broadcast_to(rewards[:, None], (n_states, n_states))[None].copy(), gamma=0.9,
                     p0=np.full(n_states, 1 / n_states))
    traces, tr0, err, _ = _concentration(det, single_action_policy(n_states), onehot_features(n_states), 10_000, 0)
    mono = bool(np.all(np.diff(traces) <= 1e-12))
    ratio = traces[-1] / tr0
    ok = mono and ratio < 1e-2 and err < 1e-2
    parts = [f"deterministic cycle: trace monotone {mono}, trace ratio {ratio:.2g} (< 1e-2), |phi_N - phi*| {err:.2g} (< 1e-2)"]
    # stochastic task: the error is sampling-limited, so compare with its exact standard error
    mdp, _ = random_mdp(6, 2, seed=5, n_actions=2, gamma=0.8)
    pi, _ = random_mdp_policies(mdp, off_policy=False)
    traces, tr0, err, se = _concentration(mdp, pi, onehot_features(6), 10_000, 2)
    mono = bool(np.all(np.diff(traces) <= 1e-12))
    ratio = traces[-1] / tr0
    ok = ok and mono and ratio < 1e-2 and err < 3 * se
    parts.append(f"stochastic 6-state: trace monotone {mono}, trace ratio {ratio:.2g}, |phi_N - phi*| {err:.3g} "
                 f"(sampling SE {se:.3g}, < 3 SE)")
    verdict(5, ok, "; ".join(parts))


# ----------------------------------------------------------------------- 6
def test_criterion_6_gradient_fidelity(verdict):
    g = np.random.default_rng(0)
    worst_lin = 0.0
    for i in range(100):
        n, big_n, gamma = int(g.integers(1, 8)), int(g.integers(1, 60)), float(g.uniform(0, 0.99))
        post = LinearPosterior.prior(n, gamma, prior_var=float(g.uniform(0.5, 10)), noise_var=float(g.uniform(0.2, 2)))
        data = Dataset(g.normal(size=(big_n, n)), np.zeros((big_n, 1)), g.normal(size=big_n), g.normal(size=(big_n, n)),
                       weight=g.uniform(0.5, 2.0, big_n))
        post = posterior_update_batch(post, data)
        samples = g.normal(size=(20, n))
        omega = 2 * g.normal(size=n)
        fd = central_diff(lambda w: msbbe(post, w, samples), omega, 1e-5)
        worst_lin = max(worst_lin, rel_err(msbbe_gradient_linear(post, omega, samples), fd))
    worst_mlp = 0.0
    for i in range(100):
        depth = int(g.integers(1, 4))
        sizes = (int(g.integers(1, 5)), *(int(g.integers(2, 33)) for _ in range(depth)), 1)
        act = ("relu", "tanh", "identity")[i % 3]
        net = MLP(sizes, act, glorot_init(sizes, Rng(i)))
        x = g.normal(size=sizes[0])
        _, grad = net.value_and_grad(x)
        fd = central_diff(lambda p: float(net.forward(x, p)[0]), net.params, 1e-6)
        worst_mlp = max(worst_mlp, rel_err(grad, fd, floor=1e-6))
    verdict(6, worst_lin < 1e-5 and worst_mlp < 1e-4,
            f"worst rel err: linear MSBBE {worst_lin:.2g} (< 1e-5), MLP {worst_mlp:.2g} (< 1e-4), 100 instances each")


# ----------------------------------------------------------------------- 7
def test_criterion_7_rp_exactness(verdict):
    g = np.random.default_rng(0)
    x, b = g.normal(size=(20, 3)), g.normal(size=20)
    res = linear_rp_moment_check(x, b, 1.0, 0.5, 2000, Rng(1))
    verdict(7, res.mean_z <= 3.0 and res.cov_rel_err < 0.10,
            f"2000 ridge solutions: max mean deviation {res.mean_z:.2f} SE (<= 3), covariance error {res.cov_rel_err:.3f} (< 0.10)")


# ----------------------------------------------------------------------- 8
def test_criterion_8_two_timescale_tracking(verdict):
    inst = tracking_instance()
    two = two_timescale_tracking(inst, 50_000, Rng(0))
    alias = two_timescale_tracking(inst, 50_000, Rng(0), aliased=True)
    tail = alias.residual[len(alias.residual) // 2:]
    final, alias_level = float(two.residual[-1]), float(np.min(tail))
    mini = [float(two_timescale_tracking(inst, 50_000, Rng(s), batch_size=64).residual[-1]) for s in range(3)]
    verdict(8, final < 1e-3 and alias_level >= 10 * final,
            f"expected-gradient residual {final:.2g} (< 1e-3); aliased residual over the second half >= {alias_level:.3g} "
            f"(>= 10x); minibatch-64 residuals {', '.join(f'{m:.2g}' for m in mini)} (information)")


# ----------------------------------------------------------------------- 9
def _per_seed(rows, metric):
    return [v for _, m, v in rows if m == metric]


@pytest.mark.slow
def test_criterion_9_deep_exploration(verdict, acceptance_log):
    if os.environ.get("BBO_RUN_CONTROL") != "1":
        line = "GATED criterion 9: full-scale control costs about 9 CPU hours per seed; set BBO_RUN_CONTROL=1 to run"
        print(line)
        acceptance_log.append(line)
        pytest.skip(line)
    from concurrent.futures import ProcessPoolExecutor

    exp = get_experiment("mcar_control")
    jobs = int(os.environ.get("BBO_JOBS", os.cpu_count() or 1))
    work = [(algo, seed) for algo in ("rp_bbac", "naive", "bac") for seed in range(5)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = {w: pool.submit(exp.run, w[0], {}, w[1], 100_000, 1000) for w in work}
        rows = {w: f.result() for w, f in futures.items()}

    def count(algo, pred):
        return sum(pred(rows[(algo, s)]) for s in range(5))

    def ratio(r):
        var = _per_seed(r, "rp.ensemble_var")
        return var[-1] / max(var)

    rp_ok = count("rp_bbac", lambda r: max(_per_seed(r, "control.eval_return")) > 90)
    naive_ok = count("naive", lambda r: max(_per_seed(r, "control.eval_return")) <= 0)
    rp_var = [ratio(rows[("rp_bbac", s)]) for s in range(5)]
    bac_var = [ratio(rows[("bac", s)]) for s in range(5)]
    ok = rp_ok >= 4 and naive_ok >= 4 and sum(v < 0.25 for v in rp_var) >= 4 and sum(v > 0.5 for v in bac_var) >= 4
    verdict(9, ok, f"RP-BBAC > 90 on {rp_ok}/5, naive <= 0 on {naive_ok}/5, final/peak disagreement "
                   f"RP {', '.join(f'{v:.2g}' for v in rp_var)} (< 1/4), BAC {', '.join(f'{v:.2g}' for v in bac_var)} (> 1/2)")
