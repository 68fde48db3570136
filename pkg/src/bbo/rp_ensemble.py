"""Randomised-prior (RP) ensembles: noise draws, the randomised MAP objective,
two-timescale member updates and posterior sampling.

Member ``l`` owns a critic ``psi_l``, a lagged target ``omega_l`` and a fixed
noise draw ``eps_l ~ N(0, sigma0^2 I)``. Its objective is

    L(psi) = mean_i (b_i - B_psi(x_i))^2 / (2 s2) + lam ||psi - eps_l||^2

with ``b_i`` built from ``omega_l``. The fast step descends ``L`` in
``psi``; the slow step is ``omega <- P(omega - beta (omega - psi))``.

This module works in parameter space (the regulariser above). The actor-critic
in :mod:`bbo.bbac` instead adds a scaled frozen random prior network to each
critic's output; see :class:`bbo.bbac.PriorCritic`.

Models follow the value-model protocol of :mod:`bbo.nonlinear_pe`;
:class:`LinearModel` is the linear-in-parameters case ``B_psi(x) = x^T psi``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .nonlinear_pe import StepSchedule, Updater, _project, check_timescales
from .numerics import Rng


class LinearModel:
    """``B(x) = x^T params`` in the value-model protocol."""

    def __init__(self, n: int):
        self.n_params = n

    def values(self, params, x):
        return np.asarray(x, float) @ params

    def vjp(self, params, x, coef):
        return np.asarray(x, float).T @ np.asarray(coef, float)

    def jacobian(self, params, x):
        x = np.asarray(x, float)
        return x @ params, x

    def hvp(self, params, x, coef, vec):
        return np.zeros_like(np.asarray(params, float))


def draw_prior_noise(n_members: int, sigma0: float, dim: int, rng: Rng) -> np.ndarray:
    """``(L, dim)`` i.i.d. ``N(0, sigma0^2)`` draws; ``sigma0 = 0`` gives zeros."""
    if sigma0 < 0:
        raise ValueError("sigma0 must be non-negative")
    return sigma0 * rng.normal((n_members, dim))


@dataclass
class RpMember:
    index: int
    eps: np.ndarray
    psi: np.ndarray
    omega: np.ndarray
    prior_weight: float
    noise_var: float = 1.0
    fast: Optional[Updater] = None
    radius: float = 1e6

    def __post_init__(self):
        self.eps = np.array(self.eps, float)
        self.eps.setflags(write=False)
        if not (self.eps.shape == np.shape(self.psi) == np.shape(self.omega)):
            raise ValueError("eps, psi and omega must share one dimension")


@dataclass
class RpEnsemble:
    members: Sequence[RpMember]

    def __post_init__(self):
        if len(self.members) < 1:
            raise ValueError("ensemble needs at least one member")

    @property
    def size(self) -> int:
        return len(self.members)

    def aggregate(self, model, x) -> np.ndarray:
        """``(1/L) sum_l Q_{omega_l}(x)``."""
        return np.mean([model.values(m.omega, x) for m in self.members], axis=0)

    def disagreement(self, model, x) -> np.ndarray:
        """Across-member variance of critic outputs ``B_{psi_l}(x)``."""
        return np.var([model.values(m.psi, x) for m in self.members], axis=0)


def make_ensemble(n_members, sigma0, init_params, prior_weight, rng: Rng, fast_lr=1e-2, rule="sgd", noise_var=1.0, init="eps"):
    """Build ``L`` members with fresh noise; critics start at ``eps`` (or ``init_params``)."""
    init_params = np.asarray(init_params, float)
    eps = draw_prior_noise(n_members, sigma0, init_params.size, rng)
    members = []
    for l in range(n_members):
        start = eps[l].copy() if init == "eps" else init_params.copy()
        members.append(RpMember(l, eps[l], start, start.copy(), prior_weight, noise_var, Updater(StepSchedule(fast_lr), rule)))
    return RpEnsemble(members)


def rp_loss(member: RpMember, model, x, b) -> float:
    """Batch-mean data term plus the full regulariser ``lam ||psi - eps||^2``."""
    res = np.asarray(b, float) - model.values(member.psi, x)
    loss = float(np.mean(res**2) / (2 * member.noise_var) + member.prior_weight * np.sum((member.psi - member.eps) ** 2))
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite RP loss for member {member.index}")
    return loss


def rp_loss_grad(member: RpMember, model, x, b) -> np.ndarray:
    b = np.asarray(b, float)
    res = b - model.values(member.psi, x)
    g = model.vjp(member.psi, x, -res / (len(b) * member.noise_var))
    return g + 2.0 * member.prior_weight * (member.psi - member.eps)


def rp_fast_step(member: RpMember, model, x, b) -> RpMember:
    """Projected step on ``psi`` only; ``omega`` (inside ``b``) stays frozen."""
    g = rp_loss_grad(member, model, x, b)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite RP gradient for member {member.index}")
    member.psi = _project(member.fast.step(member.psi, g), member.radius, f"psi[{member.index}]")
    return member


def rp_slow_step(member: RpMember, beta: float) -> RpMember:
    """``omega <- P(omega - beta (omega - psi))``."""
    member.omega = _project(member.omega - beta * (member.omega - member.psi), member.radius, f"omega[{member.index}]")
    return member


def sample_posterior_member(n_members: int, rng: Rng) -> int:
    """Uniform member index for Thompson sampling."""
    if n_members < 1:
        raise ValueError("ensemble needs at least one member")
    return int(rng.integers(0, n_members))


def ridge_solution(x, b, eps, prior_weight, noise_var=1.0) -> np.ndarray:
    """Minimiser of ``mean (b - x psi)^2 / (2 s2) + lam ||psi - eps||^2``.

    Closed form ``(X^T X / (N s2) + 2 lam I)^{-1} (X^T b / (N s2) + 2 lam eps)``.
    """
    x = np.atleast_2d(np.asarray(x, float))
    n, d = x.shape
    a = x.T @ x / (n * noise_var) + 2.0 * prior_weight * np.eye(d)
    return np.linalg.solve(a, x.T @ np.asarray(b, float) / (n * noise_var) + 2.0 * prior_weight * np.asarray(eps, float))


class MomentCheck(NamedTuple):
    mean_z: float
    cov_rel_err: float
    emp_mean: np.ndarray
    emp_cov: np.ndarray
    post_mean: np.ndarray
    post_cov: np.ndarray


def linear_rp_moment_check(x, b, sigma0: float, noise_var: float, n_eps_samples: int, rng: Rng, perturb_targets: bool = True) -> MomentCheck:
    """Compare RP samples with the exact conjugate posterior of a linear-Gaussian model.

    Prior ``N(0, sigma0^2 I)``, likelihood ``b ~ N(x^T phi, s2)``. Each draw
    takes ``eps ~ N(0, sigma0^2 I)`` and, when ``perturb_targets``, target
    noise ``b~ = b + N(0, s2)``, then solves the randomised MAP problem with
    the Gaussian-consistent weight ``lam = 1 / (2 sigma0^2)`` exactly. Without
    target noise the RP covariance is ``S S0^{-1} S``, which underestimates
    the posterior covariance ``S``.

    Returns:
        ``MomentCheck`` with the largest per-coordinate mean deviation in
        standard errors and the relative Frobenius covariance error.
    """
    x = np.asarray(x, float)
    x = x[None] if x.ndim == 1 else x
    b = np.asarray(b, float).reshape(-1)
    n, d = x.shape
    s0 = sigma0**2
    post_cov = np.linalg.inv(np.eye(d) / s0 + x.T @ x / noise_var)
    post_mean = post_cov @ (x.T @ b / noise_var)
    draws = np.empty((n_eps_samples, d))
    # sum-form objective sum (b - x psi)^2 / (2 s2) + ||psi - eps||^2 / (2 s0)
    a = x.T @ x / noise_var + np.eye(d) / s0
    for k in range(n_eps_samples):
        eps = np.sqrt(s0) * rng.normal(d)
        bt = b + np.sqrt(noise_var) * rng.normal(n) if (perturb_targets and n) else b
        draws[k] = np.linalg.solve(a, x.T @ bt / noise_var + eps / s0)
    emp_mean = draws.mean(axis=0)
    emp_cov = np.cov(draws.T).reshape(d, d)
    se = np.sqrt(np.diag(emp_cov) / n_eps_samples)
    mean_z = float(np.max(np.abs(emp_mean - post_mean) / np.maximum(se, 1e-300)))
    cov_err = float(np.linalg.norm(emp_cov - post_cov) / np.linalg.norm(post_cov))
    return MomentCheck(mean_z, cov_err, emp_mean, emp_cov, post_mean, post_cov)


class TrackingInstance(NamedTuple):
    """Linear instance ``psi*(omega) = argmin mean (r + gamma x'^T omega - x^T psi)^2``."""

    x: np.ndarray
    r: np.ndarray
    x_next: np.ndarray
    gamma: float

    def psi_star(self, omega) -> np.ndarray:
        b = self.r + self.gamma * self.x_next @ np.asarray(omega, float)
        return ridge_solution(self.x, b, np.zeros(self.x.shape[1]), 0.0)

    def fixed_point(self) -> np.ndarray:
        n = len(self.r)
        a = self.x.T @ (self.x - self.gamma * self.x_next) / n
        return np.linalg.solve(a, self.x.T @ self.r / n)

    def residual(self, omega) -> float:
        return float(np.linalg.norm(np.asarray(omega, float) - self.psi_star(omega)))


def tracking_instance(noise_std: float = 0.5, seed: int = 0) -> TrackingInstance:
    """Two source states (120 and 80 visits, rewards +1 / -1) feeding one successor.

    Features are chosen so the two-timescale ODE is stable (eigenvalues of
    ``A^{-1} C - I`` are about -1 and -0.75) while the aliased update
    ``omega = psi`` is not (``C - A`` has eigenvalues about 0.25 and 2.5), with
    ``A = E[x x^T]`` and ``C = gamma E[x x'^T]``.
    """
    feats = np.array([[0.0, -1.5], [-1.25, 0.0], [8.0, -10.0]])
    s = np.r_[np.zeros(120, int), np.ones(80, int)]
    r = np.where(s == 0, 1.0, -1.0) + noise_std * Rng(seed).normal(len(s))
    return TrackingInstance(feats[s], r, np.repeat(feats[2:], len(s), axis=0), 0.95)


class TrackingResult(NamedTuple):
    steps: np.ndarray
    residual: np.ndarray
    omega: np.ndarray
    psi: np.ndarray


def two_timescale_tracking(inst: TrackingInstance, n_steps: int, rng: Rng, fast=None, slow=None, batch_size=None, aliased=False, radius=100.0, record_every=100) -> TrackingResult:
    """Run one RP member (``lam = 0``) on ``inst`` and record ``||omega - psi*(omega)||``.

    Args:
        inst: linear instance.
        n_steps: number of fast/slow step pairs.
        rng: minibatch sampler stream.
        fast: fast schedule, default ``0.8 / (k + 1)^0.55``.
        slow: slow schedule, default ``3 / (k + 30)``.
        batch_size: minibatch size drawn with replacement; ``None`` uses the
            whole dataset (expected fast gradient).
        aliased: BAC-style variant that bootstraps from the critic itself.
        radius: projection radius for both iterates.
        record_every: residual logging period.
    """
    fast = fast or StepSchedule(0.8, "robbins_monro", 0.55)
    slow = slow or StepSchedule(3.0, "robbins_monro", 1.0, offset=30.0)
    check_timescales(fast, slow)
    d = inst.x.shape[1]
    model = LinearModel(d)
    m = RpMember(0, np.zeros(d), np.zeros(d), np.zeros(d), 0.0, fast=Updater(fast), radius=radius)
    steps, res = [], []
    n = len(inst.r)
    for k in range(n_steps):
        idx = slice(None) if batch_size is None else rng.integers(0, n, batch_size)
        target = m.psi if aliased else m.omega
        b = inst.r[idx] + inst.gamma * inst.x_next[idx] @ target
        rp_fast_step(m, model, inst.x[idx], b)
        if aliased:
            m.omega = m.psi.copy()
            slow.next()
        else:
            rp_slow_step(m, slow.next())
        if k % record_every == 0 or k == n_steps - 1:
            steps.append(k + 1)
            res.append(inst.residual(m.omega))
    return TrackingResult(np.array(steps), np.array(res), m.omega, m.psi)
