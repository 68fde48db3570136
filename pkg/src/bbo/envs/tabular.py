"""Tabular benchmarks: the three-state triangle, the Boyan chain and random MDPs."""

from __future__ import annotations

import numpy as np

from ..numerics import Rng
from .core import Dataset, FeatureMap, TabularMdp, TabularPolicy

# Value-function spiral on the triangle task.
TRIANGLE_A = np.array([-14.9996, -35.0002, 50.0004])
TRIANGLE_B = np.array([-49.0753, 37.5278, 11.5469])
TRIANGLE_LAMBDA = np.sqrt(3.0) / 2.0
TRIANGLE_EPS = 1e-2
TRIANGLE_GAMMA = 0.9


def triangle_mdp() -> TabularMdp:
    """Three-state, single-action cycle with zero rewards and discount 0.9."""
    p = np.array([[0.5, 0.0, 0.5], [0.5, 0.5, 0.0], [0.0, 0.5, 0.5]])
    return TabularMdp(P=p, R=0.0, gamma=TRIANGLE_GAMMA, p0=np.full(3, 1.0 / 3.0))


def triangle_value(omega) -> np.ndarray:
    """``exp(eps w) (a cos(lam w) - b sin(lam w))`` for a scalar parameter ``w``."""
    w = float(np.asarray(omega).reshape(-1)[0])
    c, s = np.cos(TRIANGLE_LAMBDA * w), np.sin(TRIANGLE_LAMBDA * w)
    return np.exp(TRIANGLE_EPS * w) * (TRIANGLE_A * c - TRIANGLE_B * s)


def triangle_value_derivatives(omega):
    """Return ``(V, dV/dw, d2V/dw2)`` at ``w``, each a 3-vector."""
    w = float(np.asarray(omega).reshape(-1)[0])
    e, lam = TRIANGLE_EPS, TRIANGLE_LAMBDA
    c, s = np.cos(lam * w), np.sin(lam * w)
    base = TRIANGLE_A * c - TRIANGLE_B * s
    dbase = -lam * (TRIANGLE_A * s + TRIANGLE_B * c)
    ex = np.exp(e * w)
    v = ex * base
    dv = ex * (e * base + dbase)
    # d2base = -lam^2 base
    d2v = ex * (e * e * base + 2 * e * dbase - lam * lam * base)
    return v, dv, d2v


class TriangleValueFunction:
    """The triangle spiral as a parametric value function over state ids.

    Exposes the same ``values`` / ``jacobian`` / ``hvp`` protocol the
    nonlinear learners use for networks; parameters are a length-1 vector.
    """

    n_params = 1

    def values(self, params, obs) -> np.ndarray:
        return triangle_value(params)[_ids(obs)]

    def jacobian(self, params, obs):
        v, dv, _ = triangle_value_derivatives(params)
        idx = _ids(obs)
        return v[idx], dv[idx][:, None]

    def vjp(self, params, obs, coef) -> np.ndarray:
        _, dv, _ = triangle_value_derivatives(params)
        return np.array([np.dot(np.asarray(coef, float), dv[_ids(obs)])])

    def hvp(self, params, obs, coef, vec) -> np.ndarray:
        _, _, d2v = triangle_value_derivatives(params)
        return np.array([np.dot(np.asarray(coef, float), d2v[_ids(obs)]) * float(np.asarray(vec).reshape(-1)[0])])


def _ids(obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    return (obs.reshape(len(obs), -1)[:, 0] if obs.ndim > 1 else obs.reshape(-1)).astype(int)


def triangle_transitions() -> Dataset:
    """The six equally weighted transitions that make up one full batch."""
    mdp = triangle_mdp()
    s, s2 = np.nonzero(mdp.P[0])
    n = len(s)
    return Dataset(s[:, None], np.zeros((n, 1)), np.zeros(n), s2[:, None], np.zeros((n, 1)), mode="iid_reset")


# ---------------------------------------------------------------- Boyan chain
BOYAN_STATES = 14
BOYAN_ANCHORS = (13, 9, 4, 0)
BOYAN_GAMMA = 0.95


def boyan_chain(gamma: float = BOYAN_GAMMA):
    """14-state Boyan chain and its 4-dimensional interpolating features.

    States are numbered so that 13 is the start and 0 the absorbing terminal.
    From ``s >= 2`` the chain hops to ``s-1`` or ``s-2`` with equal probability
    at reward -3; state 1 moves to 0 at reward -2. Features interpolate
    linearly between one-hot vectors on the anchor states 13, 9, 4 and 0, so
    the start state is ``e1`` and the terminal state ``e4``.

    Returns:
        ``(TabularMdp, FeatureMap)``.
    """
    n = BOYAN_STATES
    p = np.zeros((n, n))
    r = np.zeros((n, n))
    p[0, 0] = 1.0
    p[1, 0] = 1.0
    r[1, 0] = -2.0
    for s in range(2, n):
        p[s, s - 1] = p[s, s - 2] = 0.5
        r[s, s - 1] = r[s, s - 2] = -3.0
    p0 = np.zeros(n)
    p0[n - 1] = 1.0
    mdp = TabularMdp(P=p, R=r[None], gamma=gamma, p0=p0, terminal=(0,))
    return mdp, FeatureMap("boyan_interp", table=_interp_table(n, BOYAN_ANCHORS))


def _interp_table(n, anchors):
    anchors = np.asarray(anchors, dtype=float)
    table = np.zeros((n, len(anchors)))
    for s in range(n):
        for k in range(len(anchors) - 1):
            hi, lo = anchors[k], anchors[k + 1]
            if lo <= s <= hi:
                t = (hi - s) / (hi - lo)
                table[s, k] = 1.0 - t
                table[s, k + 1] = t
                break
    return table


def single_action_policy(n_states: int) -> TabularPolicy:
    return TabularPolicy(np.ones((n_states, 1)))


# ---------------------------------------------------------------- random MDP
def random_mdp(n_states: int = 400, n_features: int = 201, seed: int = 0, n_actions: int = 10, gamma: float = 0.95):
    """Dense random MDP with Dirichlet(1) rows and Uniform(0, 1) rewards.

    Features are ``n_features - 1`` seeded Uniform(0, 1) coordinates per state
    followed by a constant 1.

    Returns:
        ``(TabularMdp, FeatureMap)``.
    """
    if n_states < 2:
        raise ValueError("need at least two states")
    if n_features < 1:
        raise ValueError("need at least one feature")
    rng = Rng(seed)
    p = rng.dirichlet(np.ones(n_states), size=(n_actions, n_states))
    p /= p.sum(axis=-1, keepdims=True)
    rew = rng.uniform(0.0, 1.0, size=(n_actions, n_states, 1)) * np.ones((1, 1, n_states))
    feats = np.hstack([rng.uniform(0.0, 1.0, size=(n_states, n_features - 1)), np.ones((n_states, 1))])
    mdp = TabularMdp(P=p, R=rew, gamma=gamma, p0=np.full(n_states, 1.0 / n_states))
    return mdp, FeatureMap("random_projection", table=feats, seed=seed)


def random_mdp_policies(mdp: TabularMdp, off_policy: bool, seed: int = 0, eps: float = 0.5):
    """Evaluation and behaviour policies for the random MDP.

    The evaluation policy is uniform over actions. On-policy data uses it as
    the behaviour policy too; off-policy data shifts ``eps`` of the mass onto a
    seeded preferred action per state.

    Returns:
        ``(target, behaviour)`` :class:`TabularPolicy` pair.
    """
    n_s, n_a = mdp.n_states, mdp.n_actions
    target = TabularPolicy(np.full((n_s, n_a), 1.0 / n_a))
    if not off_policy:
        return target, target
    best = Rng(seed).spawn(1).integers(0, n_a, size=n_s)
    table = np.full((n_s, n_a), (1.0 - eps) / n_a)
    table[np.arange(n_s), best] += eps
    return target, TabularPolicy(table)
