"""Frequentist linear policy-evaluation baselines: TD(0), TDC, GTD2, LSTD and BRM.

All step functions take feature vectors directly: ``v = v(s, a)`` and
``v_next = v(s', a')`` (zero at terminal transitions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs.core import Dataset
from .linear_bbo import design


def td0_step(omega, v, v_next, r, gamma, lr, weight=1.0):
    """Semi-gradient TD(0): ``w += lr * rho * (r + gamma v'^T w - v^T w) v``."""
    delta = r + gamma * v_next @ omega - v @ omega
    return omega + lr * weight * delta * v


@dataclass
class TwoTimescaleWeights:
    """Main weights ``omega`` and auxiliary weights ``zeta`` with their stepsizes."""

    omega: np.ndarray
    zeta: np.ndarray
    lr_omega: float
    lr_zeta: float

    def __post_init__(self):
        if self.omega.shape != self.zeta.shape:
            raise ValueError("omega and zeta must have equal dimensions")
        if self.lr_omega <= 0 or self.lr_zeta <= 0:
            raise ValueError("stepsizes must be positive")

    @classmethod
    def zeros(cls, n, lr_omega, lr_zeta):
        return cls(np.zeros(n), np.zeros(n), lr_omega, lr_zeta)


def _two_timescale(weights: TwoTimescaleWeights, v, v_next, r, gamma, weight, variant):
    w, z = weights.omega, weights.zeta
    delta = r + gamma * v_next @ w - v @ w
    vz = v @ z
    if variant == "gtd2":
        w_new = w + weights.lr_omega * weight * (v - gamma * v_next) * vz
    else:
        w_new = w + weights.lr_omega * weight * (delta * v - gamma * v_next * vz)
    z_new = z + weights.lr_zeta * weight * (delta - vz) * v
    return TwoTimescaleWeights(w_new, z_new, weights.lr_omega, weights.lr_zeta)


def gtd2_step(weights: TwoTimescaleWeights, v, v_next, r, gamma, weight=1.0) -> TwoTimescaleWeights:
    """GTD2: ``w += a (v - gamma v') v^T zeta``; ``zeta += b (delta - v^T zeta) v``."""
    return _two_timescale(weights, v, v_next, r, gamma, weight, "gtd2")


def tdc_step(weights: TwoTimescaleWeights, v, v_next, r, gamma, weight=1.0) -> TwoTimescaleWeights:
    """TDC: ``w += a (delta v - gamma v' v^T zeta)``; ``zeta`` as in GTD2."""
    return _two_timescale(weights, v, v_next, r, gamma, weight, "tdc")


def lstd_fit(dataset: Dataset, features, gamma: float, ridge: float = 0.0) -> np.ndarray:
    """Solve ``A w = sum w_i v_i r_i`` with ``A = sum w_i v_i (v_i - gamma v'_i)^T``.

    Raises:
        np.linalg.LinAlgError: if ``A`` is singular; pass a small ``ridge``.
    """
    v, v2 = design(dataset, features)
    wv = v * dataset.weight[:, None]
    a = wv.T @ (v - gamma * v2) + ridge * np.eye(v.shape[1])
    b = wv.T @ dataset.r
    if np.linalg.matrix_rank(a) < a.shape[0]:
        raise np.linalg.LinAlgError("LSTD matrix is singular; retry with ridge > 0")
    return np.linalg.solve(a, b)


def brm_fit(dataset: Dataset, features, gamma: float) -> np.ndarray:
    """Naive residual minimiser of ``sum w_i (r_i - (v_i - gamma v'_i)^T w)^2``.

    Uses one successor sample per transition, so on stochastic MDPs it is
    biased towards smoother value functions (no double-sampling correction).
    """
    v, v2 = design(dataset, features)
    x = v - gamma * v2
    sw = np.sqrt(dataset.weight)
    gram = (x * dataset.weight[:, None]).T @ x
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise np.linalg.LinAlgError("BRM Gram matrix is singular")
    sol, *_ = np.linalg.lstsq(x * sw[:, None], dataset.r * sw, rcond=None)
    return sol


def constant_schedule(c):
    return lambda k: c


def decaying_schedule(c, exponent=1.0, offset=1.0):
    """``c / (k + offset)^exponent``; ``k`` counts from zero."""
    return lambda k: c / (k + offset) ** exponent


def run_td0(dataset: Dataset, features, gamma, lr, n_epochs=1, schedule=None, omega=None):
    """Sweep TD(0) over the dataset in order for ``n_epochs`` passes."""
    v, v2 = design(dataset, features)
    omega = np.zeros(v.shape[1]) if omega is None else np.array(omega, float)
    sched = schedule or constant_schedule(lr)
    k = 0
    for _ in range(n_epochs):
        for i in range(len(v)):
            omega = td0_step(omega, v[i], v2[i], dataset.r[i], gamma, sched(k), dataset.weight[i])
            k += 1
    return omega


def run_two_timescale(dataset: Dataset, features, gamma, lr_omega, lr_zeta, variant="tdc", n_epochs=1):
    """Sweep TDC or GTD2 over the dataset; returns the final weights."""
    step = tdc_step if variant == "tdc" else gtd2_step
    v, v2 = design(dataset, features)
    weights = TwoTimescaleWeights.zeros(v.shape[1], lr_omega, lr_zeta)
    for _ in range(n_epochs):
        for i in range(len(v)):
            weights = step(weights, v[i], v2[i], dataset.r[i], gamma, dataset.weight[i])
    return weights
