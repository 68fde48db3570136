"""Experiment registry: ids, algorithms, default hyperparameters and runners.

Each runner maps ``(algorithm, hyperparameters, seed, total_steps,
eval_every)`` to metric rows ``(step, metric, value)``. Defaults encode the
reported settings; a config file may override any listed key and nothing else.
"""

from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from .. import bbac, linear_baselines as lb, linear_bbo as lin
from ..envs import (
    boyan_chain, exact_tabular_values, generate_dataset, mc_values, mountain_car_continuous, probe_grid,
    puddle_world, random_mdp, random_mdp_policies, single_action_policy, triangle_transitions,
)
from ..envs.continuous import VelocitySignPolicy
from ..envs.tabular import TriangleValueFunction
from ..mlp import MLP, glorot_init
from ..nonlinear_pe import MlpValue, train_pe
from ..numerics import Rng

Row = Tuple[int, str, float]


@dataclass(frozen=True)
class Experiment:
    id: str
    description: str
    algorithms: Dict[str, Dict[str, object]]
    common: Dict[str, object]
    runner: Callable[..., List[Row]]
    default_steps: int

    def allowed_keys(self, algorithm: str) -> set:
        return set(self.common) | set(self.algorithms[algorithm])

    def resolve(self, algorithm: str, overrides: Dict[str, object]) -> Dict[str, object]:
        return {**self.common, **self.algorithms[algorithm], **overrides}

    def run(self, algorithm: str, overrides, seed: int, total_steps: int, eval_every: int) -> List[Row]:
        return self.runner(algorithm, self.resolve(algorithm, overrides), seed, total_steps, eval_every)


def _pop_keys(hp, keys):
    return {k: hp[k] for k in keys if k in hp}


_LEARNER_KEYS = ("lr", "fast_lr", "slow_lr", "prior_weight", "fast_steps", "fast_rule", "slow_rule_kind", "slow_rule",
                 "main_rule", "side_rule", "hessian_term", "rule", "noise_var", "radius")


def _pe_rows(res) -> List[Row]:
    rows = [(int(k), "pe.mse", float(m)) for k, m in zip(res.steps, res.mse)]
    rows.append((int(res.steps[-1]), "pe.diverged", float(res.diverged)))
    return rows


# ------------------------------------------------------------------ triangle


def _run_triangle(algorithm, hp, seed, total_steps, eval_every):
    res = train_pe(algorithm, TriangleValueFunction(), np.array([float(hp["omega0"])]), triangle_transitions(), hp["gamma"],
                   total_steps, Rng(seed), np.arange(3.0)[:, None], np.zeros(3), eval_every=eval_every, **_pop_keys(hp, _LEARNER_KEYS))
    return _pe_rows(res)


TRIANGLE = Experiment(
    "triangle", "Three-state spiral counterexample, full batch of 6 transitions, MSE against V = 0",
    {
        "td0": {"lr": 2e-3, "rule": "sgd"},
        "gradient_bbo": {"fast_lr": 0.8, "slow_lr": 0.1, "fast_rule": "gauss_newton", "slow_rule_kind": "l2",
                         "slow_rule": "hypergradient", "prior_weight": 0.0},
        "tdc": {"fast_lr": 1.0, "slow_lr": 0.1, "main_rule": "l2", "side_rule": "gauss_newton", "hessian_term": True},
    },
    {"gamma": 0.9, "omega0": 0.0},
    _run_triangle, 50_000,
)


# ------------------------------------------------------------ linear tasks


def _linear_task(exp_id, hp, seed, n):
    rng = Rng(seed)
    if exp_id == "boyan":
        mdp, feats = boyan_chain(hp["gamma"])
        pi = single_action_policy(mdp.n_states)
        data = generate_dataset(mdp, pi, n, hp["sampling"], rng)
        truth = exact_tabular_values(mdp, pi)
        mask = np.ones(mdp.n_states, bool)
        mask[list(mdp.terminal)] = False
        return data, feats, truth, mask, mdp
    mdp, feats = random_mdp(n_features=hp["n_features"], seed=hp["mdp_seed"], gamma=hp["gamma"])
    target, behaviour = random_mdp_policies(mdp, exp_id == "random_mdp_off", seed=hp["mdp_seed"])
    data = generate_dataset(mdp, target, n, hp["sampling"], rng, behaviour=None if exp_id == "random_mdp_on" else behaviour)
    return data, feats, exact_tabular_values(mdp, target), np.ones(mdp.n_states, bool), mdp


def _checkpoints(total, every):
    return sorted(set(range(every, total + 1, every)) | {total})


def _run_linear(exp_id, algorithm, hp, seed, total_steps, eval_every):
    data, feats, truth, mask, mdp = _linear_task(exp_id, hp, seed, total_steps)
    basis = feats(np.arange(mdp.n_states, dtype=float)[:, None])
    gamma = hp["gamma"]

    def mse(w):
        return float(np.mean((basis[mask] @ w - truth[mask]) ** 2))

    rows: List[Row] = []
    if algorithm in ("linear_bbo", "frequentist_bbo", "lstd"):
        for n in _checkpoints(total_steps, eval_every):
            head = data.head(n)
            try:
                if algorithm == "linear_bbo":
                    w = lin.fit_exact_omega(head, feats, np.zeros(basis.shape[1]), hp["prior_var"], hp["noise_var"], gamma)
                elif algorithm == "frequentist_bbo":
                    if n < basis.shape[1]:
                        continue
                    w = lin.fit_exact_omega_frequentist(head, feats, gamma, hp["eps_large"])
                else:
                    w = lb.lstd_fit(head, feats, gamma, hp["ridge"])
            except (np.linalg.LinAlgError, ArithmeticError):
                continue
            rows.append((n, "pe.mse", mse(w)))
        return rows
    v, v2 = lin.design(data, feats)
    sched = lb.decaying_schedule(hp["lr"], hp["lr_decay"], 1.0)
    w = np.zeros(v.shape[1])
    tt = lb.TwoTimescaleWeights.zeros(v.shape[1], hp.get("lr", 1.0), hp.get("aux_lr", 1.0))
    marks = set(_checkpoints(total_steps, eval_every))
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(total_steps):
            if algorithm == "td0":
                w = lb.td0_step(w, v[i], v2[i], data.r[i], gamma, sched(i), data.weight[i])
            else:
                step = lb.tdc_step if algorithm == "tdc" else lb.gtd2_step
                tt = dataclasses.replace(tt, lr_omega=sched(i), lr_zeta=hp["aux_lr"] * sched(i) / hp["lr"])
                tt = step(tt, v[i], v2[i], data.r[i], gamma, data.weight[i])
                w = tt.omega
            if i + 1 in marks:
                rows.append((i + 1, "pe.mse", mse(w) if np.all(np.isfinite(w)) else float("inf")))
    return rows


def _linear_algos(td_lr, gtd_lr, aux_lr):
    """Stepsizes picked by a single-seed grid over {1e-3, ..., 1e-1}."""
    return {
        "linear_bbo": {"prior_var": 10.0, "noise_var": 1.0},
        "frequentist_bbo": {"eps_large": 1e6},
        "lstd": {"ridge": 0.0},
        "td0": {"lr": td_lr, "lr_decay": 0.0},
        "tdc": {"lr": gtd_lr, "aux_lr": aux_lr, "lr_decay": 0.0},
        "gtd2": {"lr": gtd_lr, "aux_lr": aux_lr, "lr_decay": 0.0},
    }


BOYAN = Experiment("boyan", "14-state Boyan chain, 4 interpolating features, MSE over non-terminal states",
                   _linear_algos(0.1, 0.1, 0.1), {"gamma": 0.95, "sampling": "trajectory"},
                   functools.partial(_run_linear, "boyan"), 1000)
RANDOM_MDP_ON = Experiment("random_mdp_on", "400-state random MDP, 201 random features, on-policy data",
                           _linear_algos(1e-2, 1e-2, 1e-2), {"gamma": 0.95, "sampling": "iid_reset", "n_features": 201, "mdp_seed": 0},
                           functools.partial(_run_linear, "random_mdp_on"), 5000)
RANDOM_MDP_OFF = Experiment("random_mdp_off", "400-state random MDP, 201 random features, importance-weighted off-policy data",
                            _linear_algos(1e-2, 1e-2, 1e-2), {"gamma": 0.95, "sampling": "iid_reset", "n_features": 201, "mdp_seed": 0},
                            functools.partial(_run_linear, "random_mdp_off"), 5000)


# ----------------------------------------------------- nonlinear continuous PE


@functools.lru_cache(maxsize=8)
def _mc_truth(exp_id, gamma, per_dim, n_rollouts, horizon, truth_seed):
    env, policy = _pe_task(exp_id, gamma)
    probes = probe_grid(env, per_dim)
    est = mc_values(env, policy, probes, n_rollouts, horizon, Rng(truth_seed), gamma)
    return env.observe(probes), est.mean


def _pe_task(exp_id, gamma):
    if exp_id == "puddle_pe":
        env, policy = puddle_world(gamma=gamma)
        return env, policy
    return mountain_car_continuous(gamma=gamma), VelocitySignPolicy()


def _run_pe(exp_id, algorithm, hp, seed, total_steps, eval_every):
    env, policy = _pe_task(exp_id, hp["gamma"])
    obs, truth = _mc_truth(exp_id, hp["gamma"], hp["probe_per_dim"], hp["n_rollouts"], hp["horizon"], hp["truth_seed"])
    rng = Rng(seed)
    data = generate_dataset(env, policy, hp["n_data"], "iid_reset", rng.spawn(0))
    sizes = (env.obs_dim, hp["hidden"], 1)
    net = MLP(sizes, "tanh" if algorithm == "tdc" else "relu")
    init = glorot_init(sizes, rng.spawn(1))
    method = "gradient_bbo" if algorithm.startswith("gradient_bbo") else algorithm
    res = train_pe(method, MlpValue(net), init, data, hp["gamma"], total_steps, rng.spawn(2), obs, truth,
                   eval_every=eval_every, batch_size=hp["batch_size"], **_pop_keys(hp, _LEARNER_KEYS))
    return _pe_rows(res)


_PE_COMMON = {"gamma": 0.98, "n_data": 20000, "hidden": 256, "batch_size": 512, "probe_per_dim": 25,
              "n_rollouts": 1000, "horizon": 1000, "truth_seed": 12345}


def _pe_algos(bbo_prior, bbo_noprior, direct, td_lr, tdc):
    gb = {"fast_rule": "adam", "slow_rule_kind": "adam", "slow_rule": "affine", "fast_steps": 10}
    return {
        "gradient_bbo": {**gb, "slow_lr": bbo_prior[0], "fast_lr": bbo_prior[1], "prior_weight": bbo_prior[2]},
        "gradient_bbo_noprior": {**gb, "slow_lr": bbo_noprior[0], "fast_lr": bbo_noprior[1], "prior_weight": 0.0},
        "direct_bbo": {"rule": "adam", "lr": direct[0], "prior_weight": direct[1]},
        "td0": {"rule": "adam", "lr": td_lr},
        "tdc": {"main_rule": "adam", "side_rule": "adam", "fast_lr": tdc[0], "slow_lr": tdc[1], "hessian_term": True},
    }


PUDDLE_PE = Experiment("puddle_pe", "Puddle World, up/down policy, 1x256 network, MC ground truth on a 25x25 grid",
                       _pe_algos((3e-2, 1e-2, 3e-4), (1e-3, 1e-2), (1e-3, 3e-4), 3e-3, (1e-3, 1e-3)), _PE_COMMON,
                       functools.partial(_run_pe, "puddle_pe"), 100_000)
MCAR_PE = Experiment("mcar_pe", "Mountain Car, velocity-sign policy, 1x256 network, MC ground truth on a 25x25 grid",
                     _pe_algos((1e-2, 3e-3, 1e-1), (1e-2, 3e-3), (3e-4, 1e-1), 3e-4, (1e-2, 1e-5)), _PE_COMMON,
                     functools.partial(_run_pe, "mcar_pe"), 100_000)


# ------------------------------------------------------------------ control

_BBAC_KEYS = {f.name: f.default for f in dataclasses.fields(bbac.BbacConfig) if f.name != "eval_every"}


def _run_control(algorithm, hp, seed, total_steps, eval_every):
    kw = {k: hp[k] for k in _BBAC_KEYS}
    if isinstance(kw["hidden"], int):
        kw["hidden"] = (kw["hidden"],)
    cfg = bbac.BbacConfig(eval_every=eval_every, **kw)
    env = mountain_car_continuous(gamma=cfg.gamma)
    agent = bbac.BbacAgent(env.obs_dim, env.action_dim, cfg, seed=seed)
    rows = bbac.run_training(agent, env, total_steps, Rng(seed).spawn(7))
    return [(int(r.step), r.metric, float(r.value)) for r in rows]


MCAR_CONTROL = Experiment(
    "mcar_control", "Continuous Mountain Car control with RP-BBAC, the naive single actor-critic and the BAC ablation",
    {"rp_bbac": dict(_BBAC_KEYS),
     "naive": {**_BBAC_KEYS, "n_members": 1, "prior_scale": 0.0, "prior_weight": 0.0},
     "bac": {**_BBAC_KEYS, "alias_targets": True}},
    {}, _run_control, 100_000,
)

EXPERIMENTS = {e.id: e for e in (TRIANGLE, BOYAN, RANDOM_MDP_ON, RANDOM_MDP_OFF, PUDDLE_PE, MCAR_PE, MCAR_CONTROL)}


def get_experiment(exp_id: str) -> Experiment:
    if exp_id not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {exp_id!r}; choose from {sorted(EXPERIMENTS)}")
    return EXPERIMENTS[exp_id]
