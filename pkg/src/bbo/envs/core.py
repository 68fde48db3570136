"""Transition records, datasets, tabular MDPs, feature maps and value oracles."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from ..numerics import Rng

SAMPLING_MODES = ("iid_reset", "trajectory")


@dataclass(frozen=True)
class Transition:
    """One environment sample ``(s, a, r, s', a')`` with importance weight.

    ``done`` marks a transition into a terminal state; its successor value is
    taken as zero by every learner.
    """

    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    a_next: Optional[np.ndarray] = None
    weight: float = 1.0
    done: bool = False

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("importance weight must be positive")
        arrays = [self.s, self.a, self.s_next] + ([self.a_next] if self.a_next is not None else [])
        if not (np.isfinite(self.r) and all(np.all(np.isfinite(x)) for x in arrays)):
            raise ValueError("transition entries must be finite")


class Dataset:
    """Column-stored batch of transitions.

    Arrays: ``s (N, ds)``, ``a (N, da)``, ``r (N,)``, ``s_next (N, ds)``,
    ``a_next (N, da)`` or ``None``, ``weight (N,)`` and ``done (N,)``.
    Bellman targets are never stored; learners recompute them from the
    current parameters.
    """

    def __init__(self, s, a, r, s_next, a_next=None, weight=None, done=None, mode="iid_reset"):
        if mode not in SAMPLING_MODES:
            raise ValueError(f"unknown sampling mode {mode!r}")
        self.s = np.atleast_2d(np.asarray(s, dtype=float))
        n = self.s.shape[0]
        self.a = np.asarray(a, dtype=float).reshape(n, -1)
        self.r = np.asarray(r, dtype=float).reshape(n)
        self.s_next = np.asarray(s_next, dtype=float).reshape(n, -1)
        self.a_next = None if a_next is None else np.asarray(a_next, dtype=float).reshape(n, -1)
        self.weight = np.ones(n) if weight is None else np.asarray(weight, dtype=float).reshape(n)
        self.done = np.zeros(n, dtype=bool) if done is None else np.asarray(done, dtype=bool).reshape(n)
        self.mode = mode
        if np.any(self.weight <= 0):
            raise ValueError("importance weights must be positive")

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], mode="iid_reset") -> "Dataset":
        if not transitions:
            raise ValueError("empty transition list")
        has_next = transitions[0].a_next is not None
        return cls(
            np.array([t.s for t in transitions]),
            np.array([t.a for t in transitions]),
            np.array([t.r for t in transitions]),
            np.array([t.s_next for t in transitions]),
            np.array([t.a_next for t in transitions]) if has_next else None,
            np.array([t.weight for t in transitions]),
            np.array([t.done for t in transitions]),
            mode=mode,
        )

    def __len__(self) -> int:
        return self.s.shape[0]

    def __getitem__(self, i) -> Transition:
        return Transition(
            self.s[i], self.a[i], float(self.r[i]), self.s_next[i],
            None if self.a_next is None else self.a_next[i], float(self.weight[i]), bool(self.done[i]),
        )

    def __iter__(self) -> Iterator[Transition]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.s[idx], self.a[idx], self.r[idx], self.s_next[idx],
            None if self.a_next is None else self.a_next[idx], self.weight[idx], self.done[idx], self.mode,
        )

    def head(self, n: int) -> "Dataset":
        return self.subset(np.arange(min(n, len(self))))

    # ----------------------------------------------------------------- CSV
    def _columns(self):
        ds, da = self.s.shape[1], self.a.shape[1]
        cols = [f"s_{i}" for i in range(ds)] + [f"a_{i}" for i in range(da)] + ["r"]
        cols += [f"s_next_{i}" for i in range(ds)]
        if self.a_next is not None:
            cols += [f"a_next_{i}" for i in range(self.a_next.shape[1])]
        return cols + ["weight", "done"]

    def to_csv(self, path=None) -> str:
        """Serialise to CSV. The header row names every column, so state and
        action dimensions are recoverable from it; a leading ``#`` line records
        the sampling mode."""
        buf = io.StringIO()
        buf.write(f"# mode={self.mode}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self._columns())
        for i in range(len(self)):
            row = list(self.s[i]) + list(self.a[i]) + [self.r[i]] + list(self.s_next[i])
            if self.a_next is not None:
                row += list(self.a_next[i])
            row = [repr(float(x)) for x in row] + [repr(float(self.weight[i])), str(int(self.done[i]))]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "Dataset":
        text = str(path_or_text)
        if "\n" not in text:
            text = Path(text).read_text()
        lines = text.splitlines()
        mode = "iid_reset"
        if lines and lines[0].startswith("#"):
            for tok in lines[0][1:].split():
                if tok.startswith("mode="):
                    mode = tok.split("=", 1)[1]
            lines = lines[1:]
        reader = csv.reader(lines)
        header = next(reader)
        rows = np.array([[float(x) for x in row] for row in reader if row])
        col = {name: i for i, name in enumerate(header)}

        def block(prefix):
            names = [h for h in header if h.startswith(prefix) and h[len(prefix):].isdigit()]
            return rows[:, [col[h] for h in names]] if names else None

        a_next = block("a_next_")
        return cls(
            block("s_"), block("a_"), rows[:, col["r"]], block("s_next_"), a_next,
            rows[:, col["weight"]], rows[:, col["done"]].astype(bool), mode,
        )


@dataclass
class TabularMdp:
    """Finite MDP with kernel ``P[a, s, s']`` and reward table ``R[a, s, s']``.

    ``terminal`` lists absorbing zero-reward states at which trajectories are
    reset to ``p0``.
    """

    P: np.ndarray
    R: np.ndarray
    gamma: float
    p0: np.ndarray
    terminal: tuple = ()

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        if self.P.ndim == 2:
            self.P = self.P[None]
        self.R = np.broadcast_to(np.asarray(self.R, dtype=float), self.P.shape).copy()
        self.p0 = np.asarray(self.p0, dtype=float)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if np.max(np.abs(self.P.sum(axis=-1) - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to one")
        if not np.all(np.isfinite(self.R)):
            raise ValueError("rewards must be finite")

    @property
    def n_states(self) -> int:
        return self.P.shape[1]

    @property
    def n_actions(self) -> int:
        return self.P.shape[0]

    # env protocol -------------------------------------------------------
    obs_dim = 1
    action_dim = 1

    def policy_kernel(self, pi: np.ndarray) -> np.ndarray:
        return np.einsum("sa,ast->st", pi, self.P)

    def policy_reward(self, pi: np.ndarray) -> np.ndarray:
        return np.einsum("sa,ast,ast->s", pi, self.P, self.R)

    def observe(self, states) -> np.ndarray:
        return np.asarray(states, dtype=float).reshape(-1, 1)

    def sample_uniform(self, rng: Rng, n: int) -> np.ndarray:
        nonterminal = np.setdiff1d(np.arange(self.n_states), np.asarray(self.terminal, dtype=int))
        return rng.choice(nonterminal, size=n)

    def sample_initial(self, rng: Rng, n: int = 1) -> np.ndarray:
        return rng.choice(self.n_states, size=n, p=self.p0)

    def step_batch(self, states, actions, rng: Rng):
        states = np.asarray(states, dtype=int).reshape(-1)
        actions = np.asarray(actions, dtype=int).reshape(-1)
        rows = self.P[actions, states]
        u = rng.uniform(size=(len(states), 1))
        nxt = np.minimum((u > np.cumsum(rows, axis=1)).sum(axis=1), self.n_states - 1)
        rew = self.R[actions, states, nxt]
        done = np.isin(nxt, np.asarray(self.terminal, dtype=int))
        return nxt, rew, done


class TabularPolicy:
    """Stochastic policy given by a table ``pi[s, a]``."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)

    def sample(self, states, rng: Rng) -> np.ndarray:
        states = np.asarray(states, dtype=int).reshape(-1)
        cum = np.cumsum(self.table[states], axis=1)
        u = rng.uniform(size=(len(states), 1))
        return np.minimum((u > cum).sum(axis=1), self.table.shape[1] - 1)

    def prob(self, states, actions) -> np.ndarray:
        return self.table[np.asarray(states, dtype=int).reshape(-1), np.asarray(actions, dtype=int).reshape(-1)]


FEATURE_KINDS = ("boyan_interp", "tabular_onehot", "random_projection", "rbf_grid")


@dataclass
class FeatureMap:
    """State features ``v(s)``; actions are ignored by every kind here.

    Discrete kinds hold a ``table`` indexed by state id. ``rbf_grid`` holds
    ``centers (k, d)`` and a shared ``width`` over continuous observations.
    """

    kind: str
    table: Optional[np.ndarray] = None
    centers: Optional[np.ndarray] = None
    width: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")

    @property
    def dim(self) -> int:
        if self.table is not None:
            return self.table.shape[1]
        return self.centers.shape[0]

    def __call__(self, s) -> np.ndarray:
        """Features of one state vector ``(ds,)`` or a batch ``(N, ds)``."""
        s = np.asarray(s, dtype=float)
        single = s.ndim <= 1
        x = s.reshape(1, -1) if single else s
        if self.table is not None:
            out = self.table[x[:, 0].astype(int)]
        else:
            d2 = ((x[:, None, :] - self.centers[None]) ** 2).sum(-1)
            out = np.exp(-d2 / (2.0 * self.width**2))
        return out[0] if single else out


def onehot_features(n_states: int) -> FeatureMap:
    return FeatureMap("tabular_onehot", table=np.eye(n_states))


def rbf_grid_features(low, high, per_dim: int, width: Optional[float] = None) -> FeatureMap:
    low, high = np.asarray(low, float), np.asarray(high, float)
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(low, high)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(low))
    if width is None:
        width = float(np.min((high - low) / max(per_dim - 1, 1)))
    return FeatureMap("rbf_grid", centers=centers, width=width)


# ------------------------------------------------------------------ datasets
def generate_dataset(env, policy, n: int, mode: str, rng: Rng, behaviour=None, max_episode_steps=None) -> Dataset:
    """Sample ``n`` transitions from ``env``.

    Args:
        env: a :class:`TabularMdp` or continuous task exposing
            ``sample_uniform``, ``sample_initial``, ``step_batch`` and ``observe``.
        policy: evaluation policy; ``a'`` is drawn from it at ``s'``.
        n: number of transitions (>= 1).
        mode: ``iid_reset`` resets the state uniformly before every transition;
            ``trajectory`` rolls out contiguously, resetting to the initial
            distribution at terminal states (or after ``max_episode_steps``).
        behaviour: data-collection policy; defaults to ``policy`` (on-policy).
            Importance weights ``pi(a|s) / pi_e(a|s)`` are recorded when given.
    """
    if n < 1:
        raise ValueError("need at least one transition")
    if mode not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    behaviour = policy if behaviour is None else behaviour
    if mode == "iid_reset":
        states = env.sample_uniform(rng, n)
        actions = behaviour.sample(states, rng)
        nxt, rew, done = env.step_batch(states, actions, rng)
    else:
        states, actions, nxt, rew, done = _rollout(env, behaviour, n, rng, max_episode_steps)
    a_next = policy.sample(nxt, rng)
    if behaviour is policy:
        weights = np.ones(n)
    else:
        weights = policy.prob(states, actions) / behaviour.prob(states, actions)
    return Dataset(
        env.observe(states), np.asarray(actions, float).reshape(n, -1), rew, env.observe(nxt),
        np.asarray(a_next, float).reshape(n, -1), weights, done, mode=mode,
    )


def _rollout(env, policy, n, rng, max_episode_steps):
    s = env.sample_initial(rng, 1)
    out_s, out_a, out_n, out_r, out_d = [], [], [], [], []
    t = 0
    for _ in range(n):
        a = policy.sample(s, rng)
        s2, r, d = env.step_batch(s, a, rng)
        out_s.append(s[0]); out_a.append(a[0]); out_n.append(s2[0]); out_r.append(r[0]); out_d.append(d[0])
        t += 1
        if d[0] or (max_episode_steps is not None and t >= max_episode_steps):
            s, t = env.sample_initial(rng, 1), 0
        else:
            s = s2
    return np.array(out_s), np.array(out_a), np.array(out_n), np.array(out_r), np.array(out_d)


# ------------------------------------------------------------ value oracles
def exact_tabular_values(mdp: TabularMdp, pi) -> np.ndarray:
    """Solve ``(I - gamma P^pi) V = r^pi``; terminal states are pinned to zero."""
    table = pi.table if isinstance(pi, TabularPolicy) else np.asarray(pi, dtype=float)
    p = mdp.policy_kernel(table)
    r = mdp.policy_reward(table)
    for t in mdp.terminal:
        p[t] = 0.0
        r[t] = 0.0
    a = np.eye(mdp.n_states) - mdp.gamma * p
    try:
        return np.linalg.solve(a, r)
    except np.linalg.LinAlgError as err:  # pragma: no cover - gamma < 1 keeps this invertible
        raise RuntimeError("singular policy-evaluation system") from err


@dataclass
class McEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    n_rollouts: int = field(default=0)


def mc_values(env, policy, probe_states, n_rollouts: int, horizon: int, rng: Rng, gamma: Optional[float] = None) -> McEstimate:
    """Average discounted return from each probe state over ``n_rollouts`` rollouts.

    All rollouts run as one vectorised batch; an episode contributes no further
    reward after reaching a terminal state.
    """
    if n_rollouts < 1:
        raise ValueError("need at least one rollout")
    gamma = env.gamma if gamma is None else gamma
    probes = np.asarray(probe_states)
    k = len(probes)
    states = np.repeat(probes, n_rollouts, axis=0)
    ret = np.zeros(len(states))
    alive = np.ones(len(states), dtype=bool)
    disc = 1.0
    for _ in range(horizon):
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        a = policy.sample(states[idx], rng)
        s2, r, d = env.step_batch(states[idx], a, rng)
        ret[idx] += disc * r
        states[idx] = s2
        alive[idx[np.asarray(d, bool)]] = False
        disc *= gamma
    ret = ret.reshape(k, n_rollouts)
    se = ret.std(axis=1, ddof=1) / np.sqrt(n_rollouts) if n_rollouts > 1 else np.zeros(k)
    return McEstimate(ret.mean(axis=1), se, n_rollouts)
