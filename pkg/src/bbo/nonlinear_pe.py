"""Nonlinear policy evaluation: gradient BBO, direct BBO, TD(0) and TDC.

Every learner works against a *value model*: an object with

* ``values(params, obs) -> (B,)``
* ``vjp(params, obs, coef) -> (P,)``, i.e. ``sum_b coef_b grad V(obs_b)``
* ``jacobian(params, obs) -> ((B,), (B, P))``
* ``hvp(params, obs, coef, vec) -> (P,)``, i.e. ``sum_b coef_b Hess V(obs_b) vec``

:class:`MlpValue` adapts an :class:`~bbo.mlp.MLP`;
:class:`~bbo.envs.TriangleValueFunction` is the spiral of the triangle task.

Gradient BBO keeps two parameter vectors of one model: ``phi`` (the MAP
Bellman model ``B_phi``) and ``omega`` (the value ``Q_omega`` that builds the
targets ``b = r + gamma Q_omega(s')``). The fast step regresses ``phi`` on the
targets under the prior ``lam ||phi - phi0||^2``; the slow step moves
``omega``. Two slow rules are available:

``affine``
    ``omega <- P(omega - beta (omega - phi))``, the two-timescale rule.
``hypergradient``
    ``omega <- P(omega - beta g)`` with ``g`` the MSBBE gradient
    ``E[(Q_omega - B_phi)(grad Q_omega - J_phi dphi*/domega)]`` where
    ``dphi*/domega = -H^{-1} C`` comes from implicit differentiation of the
    MAP optimality condition. It builds a dense ``P x P`` Hessian, so it is
    meant for models with a handful of parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .envs.core import Dataset
from .mlp import MLP, AdamState, adam_step
from .numerics import Rng, project_ball

log = logging.getLogger(__name__)

UPDATE_RULES = ("sgd", "adam", "l2", "gauss_newton")


class MlpValue:
    """Value-model protocol over a scalar-output :class:`MLP`."""

    def __init__(self, net: MLP):
        if net.sizes[-1] != 1:
            raise ValueError("value network must have a scalar output")
        self.net = net
        self.n_params = net.n_params

    def values(self, params, obs):
        return self.net.forward(obs, params)[:, 0]

    def vjp(self, params, obs, coef):
        _, cache = self.net.forward_cache(obs, params)
        return self.net.backward(cache, np.asarray(coef, float)[:, None])

    def value_and_vjp(self, params, obs, coef_fn):
        """Forward once, then backprop ``coef_fn(values)``."""
        out, cache = self.net.forward_cache(obs, params)
        vals = out[:, 0]
        return vals, self.net.backward(cache, np.asarray(coef_fn(vals), float)[:, None])

    def jacobian(self, params, obs):
        return self.net.batch_value_and_jacobian(obs, params)

    def hvp(self, params, obs, coef, vec):
        return self.net.hessian_vector_product(obs, vec, params, coef=np.asarray(coef, float)[:, None])


def _value_and_vjp(model, params, obs, coef_fn):
    if hasattr(model, "value_and_vjp"):
        return model.value_and_vjp(params, obs, coef_fn)
    vals = model.values(params, obs)
    return vals, model.vjp(params, obs, coef_fn(vals))


@dataclass
class StepSchedule:
    """Stepsize sequence: ``constant`` or ``robbins_monro`` ``c / (k + offset)^exponent``.

    Robbins-Monro exponents must lie in (0.5, 1] so the steps are not summable
    but square-summable.
    """

    c: float
    kind: str = "constant"
    exponent: float = 1.0
    k: int = 0
    offset: float = 1.0

    def __post_init__(self):
        if self.kind == "robbins_munro":
            self.kind = "robbins_monro"
        if self.kind not in ("constant", "robbins_monro"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if self.kind == "robbins_monro" and not 0.5 < self.exponent <= 1.0:
            raise ValueError("Robbins-Monro exponent must lie in (0.5, 1]")
        if self.offset <= 0:
            raise ValueError("schedule offset must be positive")

    def value(self, k: Optional[int] = None) -> float:
        k = self.k if k is None else k
        if self.kind == "constant":
            return self.c
        return self.c / (k + self.offset) ** self.exponent

    def next(self) -> float:
        v = self.value()
        self.k += 1
        return v


def as_schedule(x) -> StepSchedule:
    return x if isinstance(x, StepSchedule) else StepSchedule(float(x))


def check_timescales(fast: StepSchedule, slow: StepSchedule) -> None:
    """Require ``beta_k / alpha_k -> 0`` when both schedules decay."""
    if fast.kind == slow.kind == "robbins_monro" and not fast.exponent < slow.exponent:
        raise ValueError("fast exponent must be smaller than slow exponent")


def normalize(direction, rule: str, curvature: Optional[float] = None):
    """Rescale a descent direction.

    ``l2`` divides by its Euclidean norm (direction preserved, unit length);
    ``gauss_newton`` divides by a positive curvature estimate; ``sgd`` and
    ``adam`` leave it untouched.
    """
    if rule == "l2":
        n = np.linalg.norm(direction)
        return direction / n if n > 0 else direction
    if rule == "gauss_newton":
        if curvature is None or curvature <= 0:
            raise ValueError("gauss_newton rule needs a positive curvature")
        return direction / curvature
    return direction


@dataclass
class Updater:
    """Applies ``params - lr * rule(grad)`` with an optional Adam state."""

    schedule: StepSchedule
    rule: str = "sgd"
    adam: Optional[AdamState] = None

    def __post_init__(self):
        if self.rule not in UPDATE_RULES:
            raise ValueError(f"unknown update rule {self.rule!r}")

    def step(self, params, grad, curvature=None):
        lr = self.schedule.next()
        if self.rule == "adam":
            if self.adam is None:
                self.adam = AdamState.zeros_like(params)
            new, self.adam = adam_step(params, grad, self.adam, lr)
            return new
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite gradient")
        return params - lr * normalize(grad, self.rule, curvature)


def _project(x, radius, name):
    y = project_ball(x, radius)
    if y is not x:
        log.info("projection onto radius %g bound for %s", radius, name)
    return y


def _targets(model, omega, batch: Dataset, gamma) -> np.ndarray:
    nxt = model.values(omega, batch.s_next)
    return batch.r + gamma * np.where(batch.done, 0.0, nxt)


@dataclass
class MapPair:
    """Bellman-model parameters ``phi`` and value parameters ``omega`` of one model.

    Args:
        model: value model shared by both parameter vectors.
        phi, omega: parameter vectors.
        phi0: prior anchor.
        prior_weight: ``lam = 1 / sigma0^2`` (>= 0).
        gamma: discount.
        fast, slow: :class:`Updater` for ``phi`` and the slow ``omega`` step.
        fast_steps: fast steps per slow step.
        noise_var: ``sigma^2`` scaling the data term.
        slow_rule: ``affine`` or ``hypergradient``.
        radius: projection radius (inactive at the default 1e6).
    """

    model: object
    phi: np.ndarray
    omega: np.ndarray
    phi0: np.ndarray
    prior_weight: float
    gamma: float
    fast: Updater
    slow: Updater
    fast_steps: int = 1
    noise_var: float = 1.0
    slow_rule: str = "affine"
    radius: float = 1e6

    def __post_init__(self):
        if self.prior_weight < 0:
            raise ValueError("prior weight must be non-negative")
        if np.shape(self.phi) != np.shape(self.omega):
            raise ValueError("phi and omega must share one parameter space")
        if self.slow_rule not in ("affine", "hypergradient"):
            raise ValueError(f"unknown slow rule {self.slow_rule!r}")


def map_loss(model, phi, omega, phi0, batch: Dataset, gamma, prior_weight, noise_var=1.0) -> float:
    """Batch-mean ``(b - B_phi)^2 / (2 s2)`` plus ``lam ||phi - phi0||^2``."""
    b = _targets(model, omega, batch, gamma)
    res = b - model.values(phi, batch.s)
    return float(np.mean(res**2) / (2 * noise_var) + prior_weight * np.sum((phi - phi0) ** 2))


def map_loss_grad(model, phi, omega, phi0, batch: Dataset, gamma, prior_weight, noise_var=1.0):
    """Gradient of :func:`map_loss` w.r.t. ``phi`` with the targets frozen."""
    b = _targets(model, omega, batch, gamma)
    n = len(batch)
    vals, g = _value_and_vjp(model, phi, batch.s, lambda v: -(b - v) / (n * noise_var))
    loss = np.mean((b - vals) ** 2) / (2 * noise_var) + prior_weight * np.sum((phi - phi0) ** 2)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite MAP loss (max |target| = {np.max(np.abs(b)):.3e})")
    return float(loss), g + 2.0 * prior_weight * (phi - phi0)


def _gn_curvature(model, phi, batch, prior_weight, noise_var):
    _, jac = model.jacobian(phi, batch.s)
    return float(np.mean(np.sum(jac**2, axis=1)) / noise_var + 2.0 * prior_weight)


def map_fast_step(pair: MapPair, batch: Dataset) -> MapPair:
    """One step on ``phi`` against the MAP loss; targets use the frozen ``omega``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    _, g = map_loss_grad(pair.model, pair.phi, pair.omega, pair.phi0, batch, pair.gamma, pair.prior_weight, pair.noise_var)
    curv = _gn_curvature(pair.model, pair.phi, batch, pair.prior_weight, pair.noise_var) if pair.fast.rule == "gauss_newton" else None
    pair.phi = _project(pair.fast.step(pair.phi, g, curv), pair.radius, "phi")
    return pair


def msbbe_hypergradient(model, phi, omega, batch: Dataset, gamma, prior_weight, noise_var=1.0):
    """MSBBE value and gradient w.r.t. ``omega`` at ``phi ~ phi*(omega)``.

    Implicit differentiation of ``grad_phi L(phi*, omega) = 0`` gives
    ``dphi*/domega = -H^{-1} C`` with ``H`` the MAP Hessian in ``phi`` and
    ``C = -(gamma/s2) mean(grad B_phi(s) grad Q_omega(s')^T)``.
    """
    n = len(batch)
    vq, jq = model.jacobian(omega, batch.s)
    vb, jb = model.jacobian(phi, batch.s)
    vn, jn = model.jacobian(omega, batch.s_next)
    alive = (~batch.done).astype(float)
    res = batch.r + gamma * alive * vn - vb
    p = len(phi)
    hess = jb.T @ jb / (n * noise_var) + 2.0 * prior_weight * np.eye(p)
    for j in range(p):
        e = np.zeros(p)
        e[j] = 1.0
        hess[:, j] -= model.hvp(phi, batch.s, res / (n * noise_var), e)
    cross = -(gamma / (n * noise_var)) * jb.T @ (jn * alive[:, None])
    dphi = -np.linalg.solve(hess, cross)
    diff = vq - vb
    grad = (jq - jb @ dphi).T @ diff / n
    return 0.5 * float(np.mean(diff**2)), grad


def map_slow_step(pair: MapPair, batch: Optional[Dataset] = None) -> MapPair:
    """Slow step on ``omega``: the affine rule, or the MSBBE hypergradient (needs ``batch``)."""
    if pair.slow_rule == "affine":
        beta = pair.slow.schedule.next()
        new = pair.omega - beta * (pair.omega - pair.phi)
    else:
        if batch is None:
            raise ValueError("hypergradient slow step needs a batch")
        _, g = msbbe_hypergradient(pair.model, pair.phi, pair.omega, batch, pair.gamma, pair.prior_weight, pair.noise_var)
        new = pair.slow.step(pair.omega, g)
    pair.omega = _project(new, pair.radius, "omega")
    return pair


def gradient_bbo_round(pair: MapPair, sample_batch: Callable[[], Dataset]) -> MapPair:
    """``fast_steps`` fast steps, each on a fresh batch, then one slow step."""
    for _ in range(pair.fast_steps):
        map_fast_step(pair, sample_batch())
    return map_slow_step(pair, sample_batch() if pair.slow_rule == "hypergradient" else None)


def direct_bbo_step(model, params, batch: Dataset, gamma, prior_weight, phi0, updater: Updater, noise_var=1.0):
    """Semi-gradient MAP step with targets from the same (frozen) parameters.

    With ``prior_weight = 0`` and ``noise_var = 1`` this is nonlinear TD(0).
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    _, g = map_loss_grad(model, params, params, phi0, batch, gamma, prior_weight, noise_var)
    return updater.step(params, g)


def nonlinear_td0_step(model, params, batch: Dataset, gamma, updater: Updater):
    """``theta += lr * mean(delta grad V(s))`` (through ``updater``)."""
    return direct_bbo_step(model, params, batch, gamma, 0.0, np.zeros_like(params), updater)


@dataclass
class TdcState:
    theta: np.ndarray
    aux: np.ndarray
    main: Updater
    side: Updater
    hessian_term: bool = True


def nonlinear_tdc_step(model, state: TdcState, batch: Dataset, gamma) -> TdcState:
    """Nonlinear TDC on the local linearisation ``f = grad_theta V(s)``.

    ``theta`` ascends ``mean(delta f - gamma f' (f^T w) - h)`` with
    ``h = (delta - f^T w) Hess V(s) w``; the auxiliary weights ascend
    ``mean((delta - f^T w) f)``. ``hessian_term=False`` drops ``h``.
    The ``side`` updater's ``gauss_newton`` rule scales the auxiliary step by
    ``mean(||f||^2)`` (a normalised-LMS step).
    """
    n = len(batch)
    theta, w = state.theta, state.aux
    v, f = model.jacobian(theta, batch.s)
    vn, fn = model.jacobian(theta, batch.s_next)
    alive = (~batch.done).astype(float)
    delta = batch.r + gamma * alive * vn - v
    fw = f @ w
    ascent = (f.T @ delta - gamma * (fn * alive[:, None]).T @ fw) / n
    if state.hessian_term and np.any(w != 0.0):
        ascent = ascent - model.hvp(theta, batch.s, (delta - fw) / n, w)
    aux_ascent = f.T @ (delta - fw) / n
    curv = None
    if state.side.rule == "gauss_newton":
        curv = max(float(np.mean(np.sum(f * f, axis=1))), 1e-12)
    state.theta = state.main.step(theta, -ascent)
    state.aux = state.side.step(w, -aux_ascent, curv)
    return state


def evaluate_mse(predictions, truth, weights=None) -> float:
    """Weighted mean squared error across probe states."""
    p = np.asarray(predictions, float)
    t = np.asarray(truth, float)
    if p.shape != t.shape:
        raise ValueError("prediction and truth shapes differ")
    sq = (p - t) ** 2
    if weights is None:
        return float(np.mean(sq))
    w = np.asarray(weights, float)
    return float(np.sum(w * sq) / np.sum(w))


# ------------------------------------------------------------- train loops
def minibatch_sampler(dataset: Dataset, batch_size: Optional[int], rng: Rng) -> Callable[[], Dataset]:
    """Uniform minibatches with replacement; the full dataset if ``batch_size`` is None."""
    if batch_size is None or batch_size >= len(dataset):
        return lambda: dataset
    return lambda: dataset.subset(rng.integers(0, len(dataset), size=batch_size))


@dataclass
class PeResult:
    steps: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    params: Optional[np.ndarray] = None
    diverged: bool = False


def train_pe(method: str, model, init_params, dataset: Dataset, gamma: float, n_steps: int, rng: Rng,
             probe_obs, truth, eval_every: int = 100, batch_size: Optional[int] = None, **hp) -> PeResult:
    """Run one policy-evaluation learner and record probe MSE.

    Args:
        method: ``gradient_bbo``, ``direct_bbo``, ``td0`` or ``tdc``.
        model: value model.
        init_params: starting parameters (also the prior anchor ``phi0``).
        dataset: training transitions.
        n_steps: training steps (one slow step, or one learner step).
        probe_obs, truth: ground-truth probe states and values for MSE.
        eval_every: MSE cadence in steps.
        batch_size: minibatch size, ``None`` for full batch.
        **hp: method hyperparameters (see :func:`make_learner`).
    """
    sample = minibatch_sampler(dataset, batch_size, rng)
    step, current = make_learner(method, model, np.array(init_params, float), gamma, sample, **hp)
    res = PeResult()

    def record(k):
        pred = model.values(current(), probe_obs)
        m = evaluate_mse(pred, truth) if np.all(np.isfinite(pred)) else np.inf
        res.steps.append(k)
        res.mse.append(m)
        return m

    record(0)
    # divergence is reported through res.diverged, not numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_steps + 1):
            try:
                step()
            except FloatingPointError:
                res.diverged = True
                res.steps.append(k)
                res.mse.append(np.inf)
                break
            if k % eval_every == 0 or k == n_steps:
                if not np.isfinite(record(k)):
                    res.diverged = True
                    break
    res.params = current()
    return res


def make_learner(method, model, init, gamma, sample, lr=1e-3, fast_lr=1e-2, slow_lr=1e-2, prior_weight=0.0,
                 fast_steps=1, fast_rule="adam", slow_rule_kind="sgd", slow_rule="affine", main_rule="adam",
                 side_rule="adam", hessian_term=True, rule="adam", noise_var=1.0, radius=1e6):
    """Build ``(step, current_params)`` closures for :func:`train_pe`."""
    if method == "gradient_bbo":
        pair = MapPair(model, init.copy(), init.copy(), init.copy(), prior_weight, gamma,
                       Updater(as_schedule(fast_lr), fast_rule), Updater(as_schedule(slow_lr), slow_rule_kind),
                       fast_steps, noise_var, slow_rule, radius)
        return (lambda: gradient_bbo_round(pair, sample)), (lambda: pair.omega)
    if method in ("direct_bbo", "td0"):
        holder = {"p": init.copy()}
        upd = Updater(as_schedule(lr), rule)
        lam = prior_weight if method == "direct_bbo" else 0.0

        def step():
            holder["p"] = direct_bbo_step(model, holder["p"], sample(), gamma, lam, init, upd, noise_var if method == "direct_bbo" else 1.0)

        return step, (lambda: holder["p"])
    if method == "tdc":
        st = TdcState(init.copy(), np.zeros_like(init), Updater(as_schedule(slow_lr), main_rule),
                      Updater(as_schedule(fast_lr), side_rule), hessian_term)
        return (lambda: nonlinear_tdc_step(model, st, sample(), gamma)), (lambda: st.theta)
    raise ValueError(f"unknown policy-evaluation method {method!r}")
