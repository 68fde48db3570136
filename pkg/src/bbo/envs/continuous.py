"""Continuous-state tasks: Mountain Car (continuous action) and Puddle World.

Both expose a batched interface (``sample_uniform``, ``sample_initial``,
``step_batch``, ``observe``) used for dataset generation and Monte-Carlo
ground truth, and a single-episode interface (``reset``, ``step``) used by the
actor-critic loop. Observations are rescaled to ``[-1, 1]`` per coordinate.
"""

from __future__ import annotations

import logging

import numpy as np

from ..numerics import Rng

log = logging.getLogger(__name__)


class _Episodic:
    """Single-episode wrapper on top of ``step_batch``."""

    low: np.ndarray
    high: np.ndarray
    max_episode_steps: int

    def observe(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        return 2.0 * (states - self.low) / (self.high - self.low) - 1.0

    def unobserve(self, obs) -> np.ndarray:
        return self.low + (np.asarray(obs, dtype=float) + 1.0) * 0.5 * (self.high - self.low)

    def sample_uniform(self, rng: Rng, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(n, len(self.low)))

    def reset(self, rng: Rng) -> np.ndarray:
        self._state = self.sample_initial(rng, 1)[0]
        self._t = 0
        return self.observe(self._state)

    def step(self, action, rng: Rng):
        """Advance one step. Returns ``(obs, reward, terminal, truncated)``."""
        nxt, r, d = self.step_batch(self._state[None], np.asarray(action, dtype=float).reshape(1, -1), rng)
        self._state = nxt[0]
        self._t += 1
        return self.observe(self._state), float(r[0]), bool(d[0]), self._t >= self.max_episode_steps


class MountainCarContinuous(_Episodic):
    """The standard continuous-action mountain car.

    Dynamics: ``v += 0.0015 a - 0.0025 cos(3 x)`` clipped to ``[-0.07, 0.07]``,
    then ``x += v`` clipped to ``[-1.2, 0.6]`` with the velocity zeroed at the
    left wall. Reaching ``x >= 0.45`` ends the episode with +100. Every step
    costs ``0.1 a^2``. Episodes start at ``(-0.5, 0)`` and are cut at 999 steps.
    """

    power = 0.0015
    gravity = 0.0025
    goal_position = 0.45
    action_dim = 1
    obs_dim = 2

    def __init__(self, gamma: float = 0.99, max_episode_steps: int = 999):
        self.low = np.array([-1.2, -0.07])
        self.high = np.array([0.6, 0.07])
        self.gamma = gamma
        self.max_episode_steps = max_episode_steps
        self._warned = False

    def sample_initial(self, rng: Rng, n: int = 1) -> np.ndarray:
        return np.tile([-0.5, 0.0], (n, 1))

    def step_batch(self, states, actions, rng: Rng = None):
        s = np.asarray(states, dtype=float).reshape(-1, 2)
        a = np.asarray(actions, dtype=float).reshape(len(s), -1)[:, 0]
        if np.any(np.abs(a) > 1.0) and not self._warned:
            log.warning("mountain car action outside [-1, 1]; clipping")
            self._warned = True
        force = np.clip(a, -1.0, 1.0)
        x, v = s[:, 0], s[:, 1]
        v = np.clip(v + force * self.power - self.gravity * np.cos(3.0 * x), self.low[1], self.high[1])
        x = np.clip(x + v, self.low[0], self.high[0])
        v = np.where((x == self.low[0]) & (v < 0.0), 0.0, v)
        done = x >= self.goal_position
        reward = np.where(done, 100.0, 0.0) - 0.1 * force**2
        return np.stack([x, v], axis=1), reward, done


class VelocitySignPolicy:
    """Push right (+1) when velocity is positive, otherwise left (-1)."""

    def sample(self, states, rng: Rng = None) -> np.ndarray:
        s = np.asarray(states, dtype=float).reshape(-1, 2)
        return np.where(s[:, 1] > 0.0, 1.0, -1.0)[:, None]

    def prob(self, states, actions) -> np.ndarray:
        return (self.sample(states)[:, 0] == np.asarray(actions, float).reshape(-1)).astype(float)


def mountain_car_continuous(**kw) -> MountainCarContinuous:
    return MountainCarContinuous(**kw)


PUDDLES = (
    (np.array([0.10, 0.75]), np.array([0.45, 0.75])),
    (np.array([0.45, 0.40]), np.array([0.45, 0.80])),
)
PUDDLE_RADIUS = 0.1
MOVES = np.array([[0.0, 1.0], [0.0, -1.0], [1.0, 0.0], [-1.0, 0.0]])  # up, down, right, left


class PuddleWorld(_Episodic):
    """Unit-square navigation with two capsule-shaped puddles.

    Actions 0-3 move up, down, right and left by 0.05 plus N(0, 0.01^2) noise
    per coordinate, clamped to the square. Each step costs 1, plus 400 times
    the depth ``max(0, 0.1 - d)`` of the new position inside each puddle. The
    episode terminates once ``x + y >= 1.9``.
    """

    step_size = 0.05
    noise = 0.01
    action_dim = 1
    obs_dim = 2

    def __init__(self, gamma: float = 0.98, max_episode_steps: int = 1000):
        self.low = np.zeros(2)
        self.high = np.ones(2)
        self.gamma = gamma
        self.max_episode_steps = max_episode_steps

    def sample_initial(self, rng: Rng, n: int = 1) -> np.ndarray:
        return self.sample_uniform(rng, n)

    @staticmethod
    def puddle_depth(pos) -> np.ndarray:
        pos = np.atleast_2d(pos)
        depth = np.zeros(len(pos))
        for a, b in PUDDLES:
            ab = b - a
            t = np.clip(((pos - a) @ ab) / (ab @ ab), 0.0, 1.0)
            d = np.linalg.norm(pos - (a + t[:, None] * ab), axis=1)
            depth += np.maximum(0.0, PUDDLE_RADIUS - d)
        return depth

    def step_batch(self, states, actions, rng: Rng):
        s = np.asarray(states, dtype=float).reshape(-1, 2)
        a = np.asarray(actions).reshape(len(s), -1)[:, 0].astype(int)
        nxt = s + self.step_size * MOVES[a] + self.noise * rng.normal(size=s.shape)
        nxt = np.clip(nxt, 0.0, 1.0)
        reward = -1.0 - 400.0 * self.puddle_depth(nxt)
        done = nxt.sum(axis=1) >= 1.9
        return nxt, reward, done


class UpDownPolicy:
    """Choose up or down uniformly at random."""

    def sample(self, states, rng: Rng) -> np.ndarray:
        n = len(np.atleast_2d(states))
        return rng.integers(0, 2, size=n)[:, None]

    def prob(self, states, actions) -> np.ndarray:
        a = np.asarray(actions).reshape(-1)
        return np.where(a < 2, 0.5, 0.0)


def puddle_world(**kw):
    """Puddle World and its uniform up/down evaluation policy."""
    return PuddleWorld(**kw), UpDownPolicy()


def probe_grid(env, per_dim: int = 25) -> np.ndarray:
    """Evenly spaced ``per_dim x per_dim`` grid of raw states over the box."""
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(env.low, env.high)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(env.low))
