"""Conjugate linear-Gaussian Bayesian Bellman operators.

With ``B_phi(s, a) = v^T phi``, ``Q_w(s, a) = v^T w`` and targets
``b_i = r_i + gamma v'_i^T w`` the posterior over ``phi`` is Gaussian with

    Sigma_N = (Sigma_0^{-1} + F / s2)^{-1}
    phi_N(w) = Sigma_N (Sigma_0^{-1} phi_0 + (h + gamma G w) / s2)

where ``F = sum w_i v_i v_i^T``, ``G = sum w_i v_i v'_i^T`` and
``h = sum w_i v_i r_i``. Keeping ``(F, G, h)`` rather than a mean vector makes
the dependence of the posterior on ``w`` explicit: every query re-solves for
the mean at the requested ``w``. Transitions flagged ``done`` contribute
``v' = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .envs.core import Dataset, FeatureMap, Transition
from .numerics import SingularUpdateError, sherman_morrison_update, solve_spd


@dataclass(frozen=True)
class LinearPosterior:
    """Sufficient statistics of the linear-Gaussian Bellman posterior."""

    phi0: np.ndarray
    sigma0: np.ndarray
    noise_var: float
    gamma: float
    F: np.ndarray
    G: np.ndarray
    h: np.ndarray
    n_obs: float = 0

    @classmethod
    def prior(cls, n: int, gamma: float, prior_var=10.0, noise_var: float = 1.0, phi0=None, cov=None):
        """Isotropic (or diagonal) prior ``N(phi0, diag(prior_var))``.

        Args:
            n: feature dimension.
            gamma: discount used to build Bellman targets.
            prior_var: scalar or per-coordinate prior variance.
            noise_var: observation noise ``sigma^2``.
            phi0: prior mean, zeros by default.
            cov: full prior covariance, overrides ``prior_var`` (test path).
        """
        if noise_var <= 0:
            raise ValueError("noise variance must be positive")
        sigma0 = np.diag(np.broadcast_to(np.asarray(prior_var, float), (n,))) if cov is None else np.asarray(cov, float)
        phi0 = np.zeros(n) if phi0 is None else np.asarray(phi0, float)
        return cls(phi0, sigma0, float(noise_var), float(gamma), np.zeros((n, n)), np.zeros((n, n)), np.zeros(n), 0)

    @property
    def n(self) -> int:
        return len(self.phi0)

    def prior_precision(self) -> np.ndarray:
        return np.linalg.inv(self.sigma0)

    def precision(self) -> np.ndarray:
        """``Sigma_N^{-1}``."""
        return self.prior_precision() + self.F / self.noise_var

    def covariance(self) -> np.ndarray:
        """``Sigma_N``."""
        return solve_spd(self.precision(), np.eye(self.n))

    def mean(self, omega) -> np.ndarray:
        """Posterior mean ``phi_N(omega)``."""
        omega = np.asarray(omega, float)
        rhs = self.prior_precision() @ self.phi0 + (self.h + self.gamma * self.G @ omega) / self.noise_var
        return solve_spd(self.precision(), rhs)

    def mean_jacobian(self) -> np.ndarray:
        """``d phi_N / d omega = (gamma / s2) Sigma_N G`` (constant in omega)."""
        return self.gamma / self.noise_var * solve_spd(self.precision(), self.G)


def _features(features, x) -> np.ndarray:
    return features(x) if features is not None else np.asarray(x, float)


def posterior_update(post: LinearPosterior, t: Transition, features: Optional[FeatureMap] = None) -> LinearPosterior:
    """Fold one transition into the sufficient statistics.

    ``features`` maps states to ``v``; pass ``None`` when ``t.s`` already holds
    feature vectors.
    """
    v = _features(features, t.s)
    v2 = np.zeros_like(v) if t.done else _features(features, t.s_next)
    if v.shape != (post.n,) or v2.shape != (post.n,):
        raise ValueError(f"feature dimension {v.shape} does not match posterior dimension {post.n}")
    w = t.weight
    return replace(
        post,
        F=post.F + w * np.outer(v, v),
        G=post.G + w * np.outer(v, v2),
        h=post.h + w * v * t.r,
        n_obs=post.n_obs + 1,
    )


def design(dataset: Dataset, features: Optional[FeatureMap]):
    """Feature matrices ``(V, V')`` for a dataset, with ``V'`` zeroed at terminals."""
    v = dataset.s if features is None else features(dataset.s)
    v2 = dataset.s_next if features is None else features(dataset.s_next)
    v2 = np.where(dataset.done[:, None], 0.0, v2)
    return np.atleast_2d(v), np.atleast_2d(v2)


def posterior_update_batch(post: LinearPosterior, dataset: Dataset, features: Optional[FeatureMap] = None) -> LinearPosterior:
    """Vectorised :func:`posterior_update` over a whole dataset."""
    v, v2 = design(dataset, features)
    if v.shape[1] != post.n:
        raise ValueError(f"feature dimension {v.shape[1]} does not match posterior dimension {post.n}")
    wv = v * dataset.weight[:, None]
    return replace(
        post, F=post.F + wv.T @ v, G=post.G + wv.T @ v2, h=post.h + wv.T @ dataset.r, n_obs=post.n_obs + len(dataset)
    )


def bayesian_bellman_operator(post: LinearPosterior, omega, v) -> np.ndarray:
    """Predictive mean ``v^T phi_N(omega)``; ``v`` may be one vector or a batch."""
    return np.asarray(v, float) @ post.mean(omega)


class Predictive(NamedTuple):
    mean: np.ndarray
    aleatoric: float
    epistemic: np.ndarray

    @property
    def variance(self):
        return self.aleatoric + self.epistemic


def predictive(post: LinearPosterior, omega, v) -> Predictive:
    """Posterior predictive ``N(v^T phi_N, s2 + v^T Sigma_N v)`` split into its parts."""
    v = np.asarray(v, float)
    cov = post.covariance()
    epi = np.einsum("...i,ij,...j->...", v, cov, v)
    return Predictive(v @ post.mean(omega), post.noise_var, epi)


def msbbe(post: LinearPosterior, omega, v_samples) -> float:
    """``1/2 (w - phi_N)^T E[v v^T] (w - phi_N)`` with the expectation over ``v_samples``."""
    v = np.atleast_2d(np.asarray(v_samples, float))
    diff = v @ (np.asarray(omega, float) - post.mean(omega))
    return 0.5 * float(np.mean(diff**2))


def msbbe_gradient_linear(post: LinearPosterior, omega, v_samples) -> np.ndarray:
    """Exact MSBBE gradient ``(I - (gamma/s2) G^T Sigma_N^T) E[v v^T] (w - phi_N(w))``.

    ``G^T = sum w_i v'_i v_i^T``; ``E[v v^T]`` is the empirical second moment of
    ``v_samples``.
    """
    v = np.atleast_2d(np.asarray(v_samples, float))
    omega = np.asarray(omega, float)
    m = v.T @ v / len(v)
    jac_t = post.mean_jacobian().T
    return (np.eye(post.n) - jac_t) @ (m @ (omega - post.mean(omega)))


class IncrementalSolver:
    """Sherman-Morrison tracker of ``D^{-1}`` and ``chi`` for ``w* = D^{-1} chi``.

    ``D`` accumulates ``sum w_i v_i (v_i - gamma v'_i)^T`` on top of its
    initial value and ``chi`` accumulates ``sum w_i v_i r_i``.
    """

    def __init__(self, d_inv: np.ndarray, chi: np.ndarray, gamma: float):
        self.d_inv = np.array(d_inv, dtype=float)
        self.chi = np.array(chi, dtype=float)
        self.gamma = gamma
        self.count = 0

    def add(self, v, v_next, r, weight=1.0) -> None:
        delta = weight * (v - self.gamma * v_next)
        try:
            self.d_inv = sherman_morrison_update(self.d_inv, v, delta)
        except SingularUpdateError as err:
            raise SingularUpdateError(f"singular rank-1 update at transition {self.count}: {err}") from None
        self.chi = self.chi + weight * v * r
        self.count += 1

    def remove_ridge(self, i: int, eps: float) -> None:
        """Subtract ``(1/eps) e_i e_i^T`` from ``D``."""
        e = np.zeros(len(self.chi))
        e[i] = 1.0
        try:
            self.d_inv = sherman_morrison_update(self.d_inv, -e / eps, e)
        except SingularUpdateError as err:
            raise SingularUpdateError(f"singular prior removal for coordinate {i}: {err}") from None

    def solution(self) -> np.ndarray:
        return self.d_inv @ self.chi


def fit_exact_omega(dataset: Dataset, features, phi0, sigma0, noise_var: float, gamma: float) -> np.ndarray:
    """Fixed point ``w* = phi_N(w*)`` by streaming Sherman-Morrison updates.

    Follows the reference listing: ``D^{-1}`` starts at ``(s2 Sigma_0^{-1})^{-1}``
    and ``chi`` at ``s2 Sigma_0^{-1} phi_0``, so both carry a common factor
    ``s2`` that cancels in ``D^{-1} chi``.

    Args:
        dataset: transitions; ``weight`` supplies importance weights.
        features: state feature map, or ``None`` if states are features.
        phi0: prior mean.
        sigma0: prior covariance (matrix) or variance (scalar / diagonal).
        noise_var: observation noise ``s2``.
        gamma: discount.
    """
    v, v2 = design(dataset, features)
    n = v.shape[1]
    sigma0 = np.asarray(sigma0, float)
    if sigma0.ndim < 2:
        sigma0 = np.diag(np.broadcast_to(sigma0, (n,)))
    prior_prec = np.linalg.inv(sigma0)
    solver = IncrementalSolver(sigma0 / noise_var, noise_var * prior_prec @ np.asarray(phi0, float), gamma)
    for i in range(len(v)):
        solver.add(v[i], v2[i], dataset.r[i], dataset.weight[i])
    return solver.solution()


def fit_exact_omega_frequentist(dataset: Dataset, features, gamma: float, eps_large: float = 1e6, removal: str = "deferred") -> np.ndarray:
    """Uninformative-prior fixed point (the LSTD solution) in ``O(N n^2)``.

    ``D^{-1}`` starts at ``eps I``, i.e. a ridge ``I / eps`` on ``D``. The ridge
    is then cancelled one coordinate at a time by rank-1 updates subtracting
    ``e_i e_i^T / eps``. ``removal="interleaved"`` cancels coordinate ``i``
    right after datapoint ``i`` as the reference listing does;
    ``"deferred"`` (default) cancels all coordinates after the data pass, which
    cannot hit a singular intermediate when early data do not yet span a
    direction. Round-off in the removal grows like ``eps * cond(D)``, so
    ``eps`` should be large only relative to the data scale.
    """
    if removal not in ("deferred", "interleaved"):
        raise ValueError(f"unknown removal schedule {removal!r}")
    v, v2 = design(dataset, features)
    n = v.shape[1]
    if len(v) < n:
        raise ValueError("need at least as many transitions as features")
    solver = IncrementalSolver(eps_large * np.eye(n), np.zeros(n), gamma)
    for i in range(len(v)):
        solver.add(v[i], v2[i], dataset.r[i], dataset.weight[i])
        if removal == "interleaved" and i < n:
            solver.remove_ridge(i, eps_large)
    if removal == "deferred":
        for i in range(n):
            solver.remove_ridge(i, eps_large)
    return solver.solution()


def dense_exact_omega(post: LinearPosterior) -> np.ndarray:
    """Dense solve of ``D_N w = chi_N`` from sufficient statistics (oracle)."""
    prior_prec = post.prior_precision()
    d = prior_prec + (post.F - post.gamma * post.G) / post.noise_var
    chi = prior_prec @ post.phi0 + post.h / post.noise_var
    return np.linalg.solve(d, chi)
