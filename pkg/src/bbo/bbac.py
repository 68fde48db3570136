"""RP-BBAC: Thompson-sampled actors over a randomised-prior critic ensemble.

Member ``l`` has a critic ``psi_l``, a lagged target ``omega_l`` and an actor
``theta_l``. Critic outputs carry an additive frozen prior network,
``Q_l(s, a) = f(s, a; psi_l) + prior_scale * f(s, a; p_l)``, and ``psi_l`` is
also pulled towards its own random initialisation ``eps_l`` with weight
``prior_weight``. A separate behavioural policy ``theta_dag`` is trained on the
minimum of two randomly chosen critics plus an entropy bonus; it is the policy
that gets evaluated.

All members share one architecture, so their parameters are stored as
``(L, n_params)`` stacks and updated with batched matmuls.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, NamedTuple, Optional

import numpy as np

from .mlp import MLP, AdamState, adam_step, glorot_init
from .numerics import Rng
from .rp_ensemble import sample_posterior_member

log = logging.getLogger(__name__)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_SQUASH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


# ------------------------------------------------------------------- replay


class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling.

    ``terminal`` marks true environment terminations only; time-limit
    truncations are stored as non-terminal so the target still bootstraps.
    """

    def __init__(self, obs_dim: int, action_dim: int, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.action = np.zeros((self.capacity, action_dim))
        self.reward = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.terminal = np.zeros(self.capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, obs, action, reward, next_obs, terminal) -> None:
        i = self._next
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.terminal[i] = terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, rng: Rng, shape) -> np.ndarray:
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return rng.integers(0, self._size, size=shape)

    def snapshot(self):
        """Copies of the filled part, oldest first."""
        order = np.arange(self._size) if self._size < self.capacity else (np.arange(self.capacity) + self._next) % self.capacity
        return self.obs[order].copy(), self.action[order].copy(), self.reward[order].copy(), self.next_obs[order].copy(), self.terminal[order].copy()


# ------------------------------------------------------------------- policy


class PolicySample(NamedTuple):
    action: np.ndarray
    log_prob: np.ndarray
    u: np.ndarray
    noise: np.ndarray
    std: np.ndarray
    mask: np.ndarray
    cache: dict


class GaussianPolicy:
    """State-conditioned diagonal Gaussian, optionally tanh-squashed into bounds.

    The network maps an observation to ``2 * action_dim`` outputs: the mean and
    the raw log-std, which is clamped to ``[LOG_STD_MIN, LOG_STD_MAX]``.
    """

    def __init__(self, obs_dim, action_dim, hidden=(256, 256), low=-1.0, high=1.0, squash=True, params=None):
        self.net = MLP((obs_dim, *hidden, 2 * action_dim), "relu")
        self.action_dim = action_dim
        self.low = np.broadcast_to(np.asarray(low, float), (action_dim,))
        self.high = np.broadcast_to(np.asarray(high, float), (action_dim,))
        self.squash = squash
        self.params = np.zeros(self.net.n_params) if params is None else np.asarray(params, float)

    @property
    def scale(self):
        return 0.5 * (self.high - self.low)

    @property
    def center(self):
        return 0.5 * (self.high + self.low)

    def distribution(self, obs, params=None):
        """Pre-squash mean and clamped log-std."""
        out = self.net.forward(obs, self.params if params is None else params)
        return out[..., : self.action_dim], np.clip(out[..., self.action_dim :], LOG_STD_MIN, LOG_STD_MAX)

    def rsample(self, obs, noise, params=None) -> PolicySample:
        """Reparameterised draw ``a = center + scale tanh(mu + std noise)``."""
        out, cache = self.net.forward_cache(obs, self.params if params is None else params)
        mu, raw = out[..., : self.action_dim], out[..., self.action_dim :]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        mask = (raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)
        std = np.exp(log_std)
        u = mu + std * noise
        logp = np.sum(-0.5 * noise**2 - log_std - _HALF_LOG_2PI, axis=-1)
        if self.squash:
            t = np.tanh(u)
            action = self.center + self.scale * t
            logp = logp - np.sum(np.log(self.scale * (1.0 - t**2) + _SQUASH_EPS), axis=-1)
        else:
            action = u
        return PolicySample(action, logp, u, noise, std, mask, cache)

    def backward(self, sample: PolicySample, d_action, d_log_prob=None):
        """Parameter gradient of ``sum(d_action * a) + sum(d_log_prob * log pi)``."""
        d_action = np.asarray(d_action, float)
        dlp = np.zeros(sample.log_prob.shape) if d_log_prob is None else np.asarray(d_log_prob, float)
        dlp = dlp[..., None]
        if self.squash:
            t = np.tanh(sample.u)
            jac = self.scale * (1.0 - t**2)
            du = d_action * jac + dlp * 2.0 * t * jac / (jac + _SQUASH_EPS)
        else:
            du = d_action
        dmu = du
        dlog_std = (du * sample.noise * sample.std - dlp) * sample.mask
        return self.net.backward(sample.cache, np.concatenate([dmu, dlog_std], axis=-1))


def act(policy: GaussianPolicy, s, mode: str, rng: Optional[Rng] = None, params=None) -> np.ndarray:
    """Action for observation(s) ``s``: a squashed draw (``sample``) or the squashed mean (``mean``)."""
    if mode == "mean":
        mu, _ = policy.distribution(s, params)
        return policy.center + policy.scale * np.tanh(mu) if policy.squash else mu
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        shape = np.asarray(s).shape[:-1] + (policy.action_dim,)
        return policy.rsample(s, rng.normal(shape), params).action
    raise ValueError(f"unknown action mode {mode!r}")


# ------------------------------------------------------------------- critic


class PriorCritic:
    """Critic ensemble ``Q_l = f(.; psi_l) + prior_scale * f(.; p_l)`` over ``[obs, action]``."""

    def __init__(self, obs_dim, action_dim, hidden, prior_scale, prior_params):
        self.net = MLP((obs_dim + action_dim, *hidden, 1), "relu")
        self.obs_dim = obs_dim
        self.prior_scale = float(prior_scale)
        self.prior_params = np.asarray(prior_params, float)

    def _inputs(self, obs, action):
        return np.concatenate([obs, action], axis=-1)

    def values(self, params, obs, action, members=None):
        """``(L, B)`` critic values; ``members`` selects rows of the prior stack."""
        x = self._inputs(obs, action)
        prior = self.prior_params if members is None else self.prior_params[members]
        q = self.net.forward(x, params)[..., 0]
        if self.prior_scale:
            q = q + self.prior_scale * self.net.forward(x, prior)[..., 0]
        return q

    def value_and_grads(self, params, obs, action, dout, members=None):
        """Values plus ``(param grad, action grad)`` of ``sum(dout * Q)``."""
        x = self._inputs(obs, action)
        prior = self.prior_params if members is None else self.prior_params[members]
        out, cache = self.net.forward_cache(x, params)
        g, dx = self.net.backward(cache, dout[..., None], input_grad=True)
        q = out[..., 0]
        if self.prior_scale:
            pout, pcache = self.net.forward_cache(x, prior)
            _, pdx = self.net.backward(pcache, dout[..., None], input_grad=True)
            q = q + self.prior_scale * pout[..., 0]
            dx = dx + self.prior_scale * pdx
        return q, g, dx[..., self.obs_dim :]


# -------------------------------------------------------------------- agent


@dataclass(frozen=True)
class BbacConfig:
    """Agent hyperparameters.

    ``model_noise_var`` is the likelihood variance ``s2`` in the critic loss;
    ``prior_scale`` multiplies the frozen prior network. The two are unrelated.
    """

    n_members: int = 8
    prior_scale: float = 100.0
    prior_weight: float = 3e-5
    model_noise_var: float = 1.0
    gamma: float = 0.99
    critic_lr: float = 3e-4
    actor_lr: float = 3e-4
    behaviour_lr: float = 3e-4
    target_coef: float = 5e-3
    batch_size: int = 256
    hidden: tuple = (256, 256)
    entropy_weight: float = 0.2
    buffer_capacity: int = 1_000_000
    n_env: Optional[int] = None
    alias_targets: bool = False
    eval_every: int = 1000
    eval_episodes: int = 10
    n_probes: int = 10
    radius: float = 1e6

    def __post_init__(self):
        if self.n_members < 1:
            raise ValueError("n_members must be at least 1")
        if not 0.0 < self.target_coef <= 1.0:
            raise ValueError("target_coef must lie in (0, 1]")
        if self.n_env is not None and self.n_env < 1:
            raise ValueError("n_env must be positive")


def naive_config(**kw) -> BbacConfig:
    """Single actor-critic with no prior: ``L = 1``, ``lam = 0``, ``prior_scale = 0``."""
    return replace(BbacConfig(n_members=1, prior_scale=0.0, prior_weight=0.0), **kw)


def bac_ablation_config(**kw) -> BbacConfig:
    """BAC ablation: targets aliased to critics (``omega_l = psi_l`` after every step)."""
    return replace(BbacConfig(alias_targets=True), **kw)


def _project_rows(x, radius):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.all(n <= radius):
        return x
    log.info("projection onto radius %g bound for critic parameters", radius)
    return x * np.minimum(1.0, radius / np.maximum(n, 1e-300))


class BbacAgent:
    """Actors ``theta_l``, critics ``psi_l``, targets ``omega_l``, anchors ``eps_l`` and ``theta_dag``."""

    def __init__(self, obs_dim, action_dim, config: BbacConfig = BbacConfig(), seed: int = 0, low=-1.0, high=1.0):
        self.config = cfg = config
        root = Rng(seed)
        init_rng, self.rng = root.spawn(0), root.spawn(1)
        L = cfg.n_members
        self.policy = GaussianPolicy(obs_dim, action_dim, cfg.hidden, low, high)
        csizes = (obs_dim + action_dim, *cfg.hidden, 1)
        prior = np.stack([glorot_init(csizes, init_rng) for _ in range(L)])
        self.critic = PriorCritic(obs_dim, action_dim, cfg.hidden, cfg.prior_scale, prior)
        self.psi = np.stack([glorot_init(csizes, init_rng) for _ in range(L)])
        self.eps = self.psi.copy()
        self.eps.setflags(write=False)
        self.omega = self.psi.copy()
        self.theta = np.stack([glorot_init(self.policy.net.sizes, init_rng) for _ in range(L)])
        self.theta_dag = glorot_init(self.policy.net.sizes, init_rng)
        self.buffer = ReplayBuffer(obs_dim, action_dim, cfg.buffer_capacity)
        self._opt = {k: AdamState.zeros_like(v) for k, v in (("psi", self.psi), ("theta", self.theta), ("theta_dag", self.theta_dag))}
        self.active = 0
        self.probes: Optional[np.ndarray] = None
        if not cfg.critic_lr > cfg.target_coef > cfg.actor_lr:
            log.debug("stepsizes do not satisfy critic > target > actor ordering")

    @property
    def size(self) -> int:
        return self.config.n_members

    def _adam(self, key, params, grad, lr):
        new, self._opt[key] = adam_step(params, grad, self._opt[key], lr)
        return new

    def act(self, obs, mode="sample", member=None):
        """Act with actor ``member`` (default: the active one); ``member="behaviour"`` uses ``theta_dag``."""
        member = self.active if member is None else member
        params = self.theta_dag if member == "behaviour" else self.theta[member]
        return act(self.policy, obs, mode, self.rng, params)

    def target_values(self, obs, action):
        return self.critic.values(self.psi if self.config.alias_targets else self.omega, obs, action)

    def disagreement(self, obs) -> float:
        """Mean over ``obs`` of ``Var_l Q_l(s, a)`` with ``a`` the behavioural mean action."""
        a = self.act(obs, "mean", "behaviour")
        L = self.size
        q = self.critic.values(self.psi, np.broadcast_to(obs, (L, *obs.shape)), np.broadcast_to(a, (L, *a.shape)))
        return float(np.mean(np.var(q, axis=0)))


def update_posterior(agent: BbacAgent, n_iters: int = 1) -> BbacAgent:
    """Critic, target and actor steps for every member, ``n_iters`` times.

    Each member draws its own minibatch and bootstraps from its own target
    with ``a' ~ pi_l(.|s')``.
    """
    cfg, buf = agent.config, agent.buffer
    L, B = agent.size, cfg.batch_size
    for _ in range(n_iters):
        idx = buf.sample_indices(agent.rng, (L, B))
        s, a, r, s2, term = buf.obs[idx], buf.action[idx], buf.reward[idx], buf.next_obs[idx], buf.terminal[idx]
        a2 = act(agent.policy, s2, "sample", agent.rng, agent.theta)
        y = r + cfg.gamma * np.where(term, 0.0, agent.target_values(s2, a2))
        q = agent.critic.values(agent.psi, s, a)
        res = y - q
        loss = np.mean(res**2, axis=1) / (2 * cfg.model_noise_var) + cfg.prior_weight * np.sum((agent.psi - agent.eps) ** 2, axis=1)
        bad = np.flatnonzero(~np.isfinite(loss))
        if bad.size:
            raise FloatingPointError(f"non-finite critic loss for member {int(bad[0])}")
        _, g, _ = agent.critic.value_and_grads(agent.psi, s, a, -res / (B * cfg.model_noise_var))
        g = g + 2.0 * cfg.prior_weight * (agent.psi - agent.eps)
        agent.psi = _project_rows(agent._adam("psi", agent.psi, g, cfg.critic_lr), cfg.radius)
        if cfg.alias_targets:
            agent.omega = agent.psi.copy()
        else:
            agent.omega = _project_rows(agent.omega - cfg.target_coef * (agent.omega - agent.psi), cfg.radius)
        # actor: ascend mean_b Q_l(s, a_theta(s))
        noise = agent.rng.normal(a.shape)
        samp = agent.policy.rsample(s, noise, agent.theta)
        _, _, dq_da = agent.critic.value_and_grads(agent.psi, s, samp.action, np.full((L, B), 1.0 / B))
        agent.theta = agent._adam("theta", agent.theta, -agent.policy.backward(samp, dq_da), cfg.actor_lr)
    return agent


def _pick_two(agent: BbacAgent):
    if agent.size == 1:
        return np.array([0])
    return np.sort(agent.rng.generator.choice(agent.size, size=2, replace=False))


def behavioural_objective(agent: BbacAgent, s, noise, members):
    """Per-sample ``min_i Q_i(s, a) - alpha log pi(a|s)`` and its parameter gradient (batch mean)."""
    cfg = agent.config
    B = len(s)
    samp = agent.policy.rsample(s, noise, agent.theta_dag)
    k = len(members)
    sk = np.broadcast_to(s, (k, *s.shape))
    ak = np.broadcast_to(samp.action, (k, *samp.action.shape))
    q = agent.critic.values(agent.psi[members], sk, ak, members)
    low = np.argmin(q, axis=0)
    sel = (np.arange(k)[:, None] == low[None, :]).astype(float) / B
    _, _, dq_da = agent.critic.value_and_grads(agent.psi[members], sk, ak, sel, members)
    j = q.min(axis=0) - cfg.entropy_weight * samp.log_prob
    grad = agent.policy.backward(samp, dq_da.sum(axis=0), np.full(B, -cfg.entropy_weight / B))
    return j, grad


def update_behavioural_policy(agent: BbacAgent, n_iters: int = 1) -> BbacAgent:
    """Ascend the entropy-regularised min-of-two-critics objective for ``theta_dag``."""
    cfg = agent.config
    for _ in range(n_iters):
        idx = agent.buffer.sample_indices(agent.rng, cfg.batch_size)
        s = agent.buffer.obs[idx]
        members = _pick_two(agent)
        _, grad = behavioural_objective(agent, s, agent.rng.normal((len(s), agent.policy.action_dim)), members)
        agent.theta_dag = agent._adam("theta_dag", agent.theta_dag, -grad, cfg.behaviour_lr)
    return agent


# --------------------------------------------------------------------- loop


class MetricRow(NamedTuple):
    step: int
    metric: str
    value: float


def evaluate(agent: BbacAgent, env, n_episodes: int, rng: Rng) -> float:
    """Mean undiscounted return of ``theta_dag`` acting with its mean action."""
    total = 0.0
    for _ in range(n_episodes):
        obs, done, ret = env.reset(rng), False, 0.0
        while not done:
            obs, r, term, trunc = env.step(agent.act(obs, "mean", "behaviour"), rng)
            ret += r
            done = term or trunc
        total += ret
    return total / n_episodes


def run_training(agent: BbacAgent, env, total_steps: int, rng: Rng, eval_env=None) -> List[MetricRow]:
    """Algorithm loop: draw an actor, act ``n_env`` steps (default: to the episode end), then train.

    Training performs as many posterior and behavioural iterations as
    environment steps were taken. Every ``eval_every`` steps the behavioural
    policy is evaluated and the ensemble disagreement is measured at fixed probe
    states drawn once from the buffer.

    Returns:
        Metric rows ``control.eval_return``, ``control.episode_return``,
        ``rp.ensemble_var`` and ``control.active_member``.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be at least 1")
    cfg = agent.config
    eval_env = copy.deepcopy(env) if eval_env is None else eval_env
    env_rng, eval_rng = rng.spawn(0), rng.spawn(1)
    rows: List[MetricRow] = []
    steps, ep_ret = 0, 0.0
    obs = env.reset(env_rng)
    while steps < total_steps:
        agent.active = sample_posterior_member(agent.size, agent.rng)
        rows.append(MetricRow(steps, "control.active_member", float(agent.active)))
        seg = 0
        while steps < total_steps and (cfg.n_env is None or seg < cfg.n_env):
            a = agent.act(obs)
            try:
                nxt, r, term, trunc = env.step(a, env_rng)
            except Exception as err:
                raise RuntimeError(f"environment step failed at env step {steps} (member {agent.active})") from err
            agent.buffer.add(obs, a, r, nxt, term)
            obs, ep_ret = nxt, ep_ret + r
            seg += 1
            steps += 1
            if steps % cfg.eval_every == 0:
                if agent.probes is None:
                    agent.probes = agent.buffer.obs[agent.buffer.sample_indices(agent.rng, cfg.n_probes)].copy()
                rows.append(MetricRow(steps, "control.eval_return", evaluate(agent, eval_env, cfg.eval_episodes, eval_rng)))
                rows.append(MetricRow(steps, "rp.ensemble_var", agent.disagreement(agent.probes)))
            if term or trunc:
                rows.append(MetricRow(steps, "control.episode_return", ep_ret))
                obs, ep_ret = env.reset(env_rng), 0.0
                if cfg.n_env is None:
                    break
        update_posterior(agent, seg)
        update_behavioural_policy(agent, seg)
    return rows


# --------------------------------------------------------------- utilities


class VisitationHistogram(NamedTuple):
    counts: np.ndarray
    x_edges: np.ndarray
    y_edges: np.ndarray

    def to_csv(self, path) -> None:
        """Rows ``x_lo,x_hi,y_lo,y_hi,count``."""
        lines = ["x_lo,x_hi,y_lo,y_hi,count"]
        for i in range(len(self.x_edges) - 1):
            for j in range(len(self.y_edges) - 1):
                lines.append(f"{self.x_edges[i]!r},{self.x_edges[i + 1]!r},{self.y_edges[j]!r},{self.y_edges[j + 1]!r},{int(self.counts[i, j])}")
        Path(path).write_text("\n".join(lines) + "\n")


def visitation_histogram(buffer: ReplayBuffer, bins=(20, 20), ranges=((-1.0, 1.0), (-1.0, 1.0))) -> VisitationHistogram:
    """2-D counts of buffer states on a regular grid (states outside the ranges are clipped in)."""
    if buffer.obs.shape[1] != 2:
        raise ValueError("visitation histogram needs a 2-D observation")
    obs = buffer.obs[: len(buffer)]
    lo = np.array([r[0] for r in ranges])
    hi = np.array([r[1] for r in ranges])
    obs = np.clip(obs, lo, hi)
    counts, xe, ye = np.histogram2d(obs[:, 0], obs[:, 1], bins=bins, range=ranges)
    return VisitationHistogram(counts.astype(int), xe, ye)


_CHECKPOINT_PARTS = ("psi", "omega", "eps", "theta", "theta_dag")


def save_checkpoint(agent: BbacAgent, directory, with_buffer: bool = False) -> None:
    """One network file per parameter stack plus the prior stack; buffer as ``.npz`` on request."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in _CHECKPOINT_PARTS:
        net = agent.policy.net if name.startswith("theta") else agent.critic.net
        net.copy(np.asarray(getattr(agent, name))).save(d / f"{name}.bin")
    agent.critic.net.copy(agent.critic.prior_params).save(d / "prior.bin")
    if with_buffer:
        np.savez(d / "buffer.npz", *agent.buffer.snapshot())


def load_checkpoint(agent: BbacAgent, directory) -> BbacAgent:
    """Restore parameters saved by :func:`save_checkpoint` into a compatible agent."""
    d = Path(directory)
    for name in _CHECKPOINT_PARTS:
        p = MLP.load(d / f"{name}.bin").params
        if name != "theta_dag":
            p = np.atleast_2d(p)
        if name == "eps":
            p = p.copy()
            p.setflags(write=False)
        setattr(agent, name, p)
    agent.critic.prior_params = np.atleast_2d(MLP.load(d / "prior.bin").params)
    buf = d / "buffer.npz"
    if buf.exists():
        data = np.load(buf)
        for row in zip(*(data[f"arr_{i}"] for i in range(5))):
            agent.buffer.add(*row)
    return agent
