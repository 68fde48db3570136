import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bbo.envs import (
    Dataset, TabularMdp, TabularPolicy, Transition, boyan_chain, exact_tabular_values, generate_dataset,
    mc_values, mountain_car_continuous, puddle_world, random_mdp, random_mdp_policies, single_action_policy,
    triangle_mdp, triangle_value, triangle_value_derivatives,
)
from bbo.envs.tabular import TRIANGLE_A
from bbo.numerics import Rng


# ------------------------------------------------------------------ triangle
def test_triangle_kernel():
    mdp = triangle_mdp()
    np.testing.assert_allclose(mdp.P[0].sum(axis=1), 1.0, atol=1e-12)
    assert mdp.P[0, 0, 0] == 0.5 and mdp.P[0, 0, 2] == 0.5
    assert mdp.gamma == 0.9
    np.testing.assert_array_equal(exact_tabular_values(mdp, single_action_policy(3)), np.zeros(3))


def test_triangle_value_at_zero():
    np.testing.assert_array_equal(triangle_value(0.0), [-14.9996, -35.0002, 50.0004])
    assert abs(triangle_value(0.0).sum()) < 1e-3


@pytest.mark.parametrize("w", [0.0, -3.7, 2.5, 40.0])
def test_triangle_derivatives_match_finite_differences(w):
    _, dv, d2v = triangle_value_derivatives(w)
    h = 1e-6
    fd1 = (triangle_value(w + h) - triangle_value(w - h)) / (2 * h)
    fd2 = (triangle_value_derivatives(w + h)[1] - triangle_value_derivatives(w - h)[1]) / (2 * h)
    np.testing.assert_allclose(dv, fd1, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(d2v, fd2, rtol=1e-6, atol=1e-6)


def test_triangle_constants_are_the_initial_values():
    assert TRIANGLE_A.tolist() == [-14.9996, -35.0002, 50.0004]


# ---------------------------------------------------------------- Boyan chain
def test_boyan_features():
    mdp, feats = boyan_chain()
    np.testing.assert_array_equal(feats(np.array([0.0])), [0, 0, 0, 1])
    for k, s in enumerate((13, 9, 4, 0)):
        np.testing.assert_array_equal(feats(np.array([float(s)])), np.eye(4)[k])
    np.testing.assert_allclose(feats.table.sum(axis=1), 1.0)
    assert mdp.gamma == 0.95 and mdp.n_states == 14


def _boyan_mc_reference(start, n, gamma, seed):
    """Standalone vectorised chain simulator (no environment code)."""
    rng = np.random.default_rng(seed)
    s = np.full(n, start)
    ret = np.zeros(n)
    disc = 1.0
    while np.any(s > 0):
        alive = s > 0
        hop = np.where(s >= 2, rng.integers(1, 3, size=n), 1)
        r = np.where(s == 1, -2.0, -3.0)
        ret += np.where(alive, disc * r, 0.0)
        s = np.where(alive, s - hop, 0)
        disc *= gamma
    return ret.mean(), ret.std(ddof=1) / math.sqrt(n)


@pytest.mark.parametrize("start", [13, 7, 2, 1])
def test_boyan_exact_values_match_monte_carlo(start):
    mdp, _ = boyan_chain()
    v = exact_tabular_values(mdp, single_action_policy(14))
    # ~1e6 simulated steps per start state
    n = 10**6 // max(start // 1.5, 1)
    mean, se = _boyan_mc_reference(start, int(n), mdp.gamma, seed=start)
    assert abs(v[start] - mean) <= 3 * se + 1e-12


def test_boyan_mc_values_agree_with_exact_solve():
    mdp, _ = boyan_chain()
    pol = single_action_policy(14)
    v = exact_tabular_values(mdp, pol)
    est = mc_values(mdp, pol, np.arange(1, 14), n_rollouts=4000, horizon=20, rng=Rng(3))
    assert np.all(np.abs(est.mean - v[1:]) <= 3 * est.stderr + 1e-9)


# ----------------------------------------------------------------- random MDP
def test_random_mdp_rows_and_determinism():
    mdp, feats = random_mdp(50, 11, seed=4, n_actions=3)
    np.testing.assert_allclose(mdp.P.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all((mdp.R >= 0) & (mdp.R <= 1))
    np.testing.assert_array_equal(feats.table[:, -1], 1.0)
    mdp2, feats2 = random_mdp(50, 11, seed=4, n_actions=3)
    np.testing.assert_array_equal(mdp.P, mdp2.P)
    np.testing.assert_array_equal(feats.table, feats2.table)
    assert not np.array_equal(mdp.P, random_mdp(50, 11, seed=5, n_actions=3)[0].P)


def test_random_mdp_needs_two_states():
    with pytest.raises(ValueError):
        random_mdp(1, 3)


def test_off_policy_weights_average_one():
    mdp, _ = random_mdp(40, 5, seed=1, n_actions=4)
    target, behaviour = random_mdp_policies(mdp, off_policy=True, seed=1)
    assert target is not behaviour
    data = generate_dataset(mdp, target, 10**4, "iid_reset", Rng(0), behaviour=behaviour)
    assert abs(data.weight.mean() - 1.0) < 0.05
    t2, b2 = random_mdp_policies(mdp, off_policy=False)
    assert t2 is b2


def test_random_mdp_mc_agrees_with_exact():
    mdp, _ = random_mdp(6, 3, seed=2, n_actions=2, gamma=0.8)
    pol, _ = random_mdp_policies(mdp, off_policy=False)
    v = exact_tabular_values(mdp, pol)
    est = mc_values(mdp, pol, np.arange(6), n_rollouts=3000, horizon=80, rng=Rng(5))
    assert np.all(np.abs(est.mean - v) <= 3 * est.stderr + 1e-6)


# ------------------------------------------------------------- exact solves
def test_exact_values_zero_reward():
    mdp = TabularMdp(P=np.full((3, 3), 1 / 3), R=0.0, gamma=0.9, p0=np.full(3, 1 / 3))
    np.testing.assert_array_equal(exact_tabular_values(mdp, single_action_policy(3)), 0.0)


def test_exact_values_two_state_cycle():
    p = np.array([[0.0, 1.0], [1.0, 0.0]])
    r = np.array([[1.0, 1.0], [0.0, 0.0]])
    mdp = TabularMdp(P=p, R=r[None], gamma=0.5, p0=np.array([1.0, 0.0]))
    np.testing.assert_allclose(exact_tabular_values(mdp, single_action_policy(2)), [4 / 3, 2 / 3], atol=1e-14)


def test_tabular_mdp_rejects_bad_rows():
    with pytest.raises(ValueError):
        TabularMdp(P=np.array([[0.5, 0.4], [0.0, 1.0]]), R=0.0, gamma=0.9, p0=np.array([1.0, 0.0]))


# ------------------------------------------------------------- mountain car
def _reference_car(x, v, action):
    """Scalar reference dynamics, written independently of the environment."""
    force = min(max(action, -1.0), 1.0)
    v += force * 0.0015 - 0.0025 * math.cos(3 * x)
    v = min(max(v, -0.07), 0.07)
    x += v
    x = min(max(x, -1.2), 0.6)
    if x == -1.2 and v < 0:
        v = 0.0
    done = x >= 0.45
    return x, v, (100.0 if done else 0.0) - 0.1 * force**2, done


def test_mountain_car_matches_reference_dynamics():
    env = mountain_car_continuous()
    rng = Rng(0)
    acts = np.random.default_rng(0).uniform(-1, 1, size=999)
    x, v = -0.5, 0.0
    env.reset(rng)
    for a in acts:
        x, v, r_ref, d_ref = _reference_car(x, v, a)
        obs, r, done, _ = env.step([a], rng)
        np.testing.assert_allclose(env.unobserve(obs), [x, v], atol=1e-12)
        assert r == pytest.approx(r_ref, abs=1e-12) and done == d_ref
        if done:
            break


@pytest.mark.parametrize("action", [0.0, 1.0])
def test_mountain_car_does_not_reach_goal_trivially(action):
    env = mountain_car_continuous()
    rng = Rng(0)
    env.reset(rng)
    max_x = -1.0
    for _ in range(999):
        obs, _, done, trunc = env.step([action], rng)
        max_x = max(max_x, env.unobserve(obs)[0])
        assert not done
    assert trunc and max_x < 0.45


def test_mountain_car_step_cost_and_clipping(caplog):
    env = mountain_car_continuous()
    rng = Rng(0)
    env.reset(rng)
    _, r, _, _ = env.step([0.5], rng)
    assert r == pytest.approx(-0.025)
    env.reset(rng)
    with caplog.at_level("WARNING"):
        _, r, _, _ = env.step([3.0], rng)
    assert r == pytest.approx(-0.1)
    assert "clipping" in caplog.text


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_mountain_car_stays_in_bounds(seed):
    env = mountain_car_continuous()
    g = np.random.default_rng(seed)
    s = env.sample_uniform(Rng(seed), 64)
    for _ in range(50):
        s, _, _ = env.step_batch(s, g.uniform(-2, 2, size=(64, 1)))
        assert np.all(s >= env.low) and np.all(s <= env.high)


# -------------------------------------------------------------- puddle world
def test_puddle_observation_bounds():
    env, _ = puddle_world()
    obs = env.observe(env.sample_uniform(Rng(0), 10**5))
    assert obs.min() >= -1.0 and obs.max() <= 1.0


def test_puddle_down_from_bottom_edge_stays_in_bounds():
    env, _ = puddle_world()
    s = np.tile([0.3, 0.0], (1000, 1))
    nxt, _, _ = env.step_batch(s, np.ones(1000, dtype=int), Rng(1))
    assert np.all(nxt >= 0.0) and np.all(nxt <= 1.0)


def test_puddle_costs():
    env, _ = puddle_world()
    assert env.puddle_depth(np.array([0.9, 0.1]))[0] == 0.0
    assert env.puddle_depth(np.array([0.3, 0.75]))[0] == pytest.approx(0.1)


def _reference_puddle_return(start, n, gamma, horizon, seed):
    rng = np.random.default_rng(seed)
    segs = [((0.10, 0.75), (0.45, 0.75)), ((0.45, 0.40), (0.45, 0.80))]
    s = np.tile(start, (n, 1)).astype(float)
    ret = np.zeros(n)
    alive = np.ones(n, bool)
    disc = 1.0
    for _ in range(horizon):
        dy = np.where(rng.integers(0, 2, size=n) == 0, 0.05, -0.05)
        s = s + np.stack([np.zeros(n), dy], 1) + 0.01 * rng.normal(size=(n, 2))
        s = np.clip(s, 0, 1)
        cost = np.ones(n)
        for a, b in segs:
            a, b = np.array(a), np.array(b)
            t = np.clip((s - a) @ (b - a) / ((b - a) @ (b - a)), 0, 1)
            d = np.linalg.norm(s - (a + t[:, None] * (b - a)), axis=1)
            cost += 400 * np.maximum(0, 0.1 - d)
        ret -= np.where(alive, disc * cost, 0.0)
        alive &= s.sum(1) < 1.9
        disc *= gamma
    return ret.mean(), ret.std(ddof=1) / math.sqrt(n)


def test_puddle_goal_adjacent_value_matches_reference_mc():
    env, pol = puddle_world()
    start = np.array([[0.95, 0.93]])
    est = mc_values(env, pol, start, n_rollouts=4000, horizon=300, rng=Rng(0))
    ref, ref_se = _reference_puddle_return(start[0], 4000, 0.98, 300, seed=1)
    assert abs(est.mean[0] - ref) <= 3 * math.hypot(est.stderr[0], ref_se)


# ------------------------------------------------------------------ datasets
def test_single_transition_dataset():
    env, pol = puddle_world()
    d = generate_dataset(env, pol, 1, "iid_reset", Rng(0))
    assert len(d) == 1 and isinstance(d[0], Transition)
    with pytest.raises(ValueError):
        generate_dataset(env, pol, 0, "iid_reset", Rng(0))


def test_puddle_protocol_size():
    env, pol = puddle_world()
    d = generate_dataset(env, pol, 20000, "iid_reset", Rng(0))
    assert len(d) == 20000 and d.mode == "iid_reset"
    assert np.all(np.abs(d.s) <= 1) and np.all(np.abs(d.s_next) <= 1)


def test_iid_reset_histogram_uniform():
    env, pol = puddle_world()
    d = generate_dataset(env, pol, 10**5, "iid_reset", Rng(7))
    counts, _, _ = np.histogram2d(d.s[:, 0], d.s[:, 1], bins=10, range=[[-1, 1], [-1, 1]])
    assert stats.chisquare(counts.ravel()).pvalue > 0.01

    mdp, _ = boyan_chain()
    d = generate_dataset(mdp, single_action_policy(14), 10**5, "iid_reset", Rng(8))
    counts = np.bincount(d.s[:, 0].astype(int), minlength=14)[1:]
    assert counts.sum() == 10**5
    assert stats.chisquare(counts).pvalue > 0.01


def test_dataset_generation_deterministic():
    mdp, _ = boyan_chain()
    pol = single_action_policy(14)
    for mode in ("iid_reset", "trajectory"):
        a = generate_dataset(mdp, pol, 500, mode, Rng(2))
        b = generate_dataset(mdp, pol, 500, mode, Rng(2))
        assert a.to_csv() == b.to_csv()


def test_trajectory_mode_is_contiguous():
    mdp, _ = boyan_chain()
    d = generate_dataset(mdp, single_action_policy(14), 200, "trajectory", Rng(0))
    for i in range(len(d) - 1):
        if d.done[i]:
            assert d.s[i + 1, 0] == 13
        else:
            assert d.s[i + 1, 0] == d.s_next[i, 0]


def test_dataset_csv_round_trip(tmp_path):
    env, pol = puddle_world()
    d = generate_dataset(env, pol, 50, "trajectory", Rng(0))
    path = tmp_path / "d.csv"
    d.to_csv(path)
    back = Dataset.from_csv(path)
    assert back.mode == "trajectory"
    for name in ("s", "a", "r", "s_next", "a_next", "weight", "done"):
        np.testing.assert_array_equal(getattr(back, name), getattr(d, name))


def test_transition_validation():
    with pytest.raises(ValueError):
        Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), weight=0.0)
    with pytest.raises(ValueError):
        Transition(np.zeros(1), np.zeros(1), float("nan"), np.zeros(1))


def test_mc_values_trivial_cases():
    mdp = TabularMdp(P=np.eye(2), R=0.0, gamma=0.9, p0=np.array([1.0, 0.0]))
    est = mc_values(mdp, single_action_policy(2), np.arange(2), 5, 10, Rng(0))
    np.testing.assert_array_equal(est.mean, 0.0)
    det = TabularMdp(P=np.eye(2), R=1.0, gamma=0.5, p0=np.array([1.0, 0.0]))
    e1 = mc_values(det, single_action_policy(2), np.arange(2), 1, 30, Rng(0))
    e9 = mc_values(det, single_action_policy(2), np.arange(2), 9, 30, Rng(1))
    np.testing.assert_allclose(e1.mean, e9.mean, atol=0)
    with pytest.raises(ValueError):
        mc_values(det, single_action_policy(2), np.arange(2), 0, 30, Rng(0))


def test_tabular_policy_sampling_frequencies():
    pol = TabularPolicy(np.array([[0.2, 0.8]]))
    a = pol.sample(np.zeros(20000, int), Rng(0))
    assert abs(a.mean() - 0.8) < 0.01
