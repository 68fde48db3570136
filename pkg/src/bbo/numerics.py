"""Dense linear-algebra helpers and seeded sampling shared across the package.

Random numbers come from numpy's ``PCG64`` bit generator; normal draws use
numpy's ziggurat transform. Both are stable across numpy >= 1.17, which keeps
seeded golden values reproducible.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "Rng",
    "SingularUpdateError",
    "NotPositiveDefiniteError",
    "sherman_morrison_update",
    "solve_spd",
    "sample_standard_normal",
    "project_ball",
]

_SM_TOL = 1e-12


class SingularUpdateError(ArithmeticError):
    """Raised when a rank-1 inverse update has a (near) zero denominator."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky factorisation meets a non-positive pivot."""


class Rng:
    """Seeded random stream owned by a single run.

    Thin wrapper around ``numpy.random.Generator(PCG64(seed))`` so every module
    draws from one documented generator. ``spawn`` derives independent child
    streams (e.g. one per ensemble member) without touching the parent state.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, a, size=None, p=None):
        return self._gen.choice(a, size=size, p=p)

    def dirichlet(self, alpha, size=None):
        return self._gen.dirichlet(alpha, size)

    def spawn(self, key: int) -> "Rng":
        child = Rng.__new__(Rng)
        child.seed = self.seed
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(int(key),))
        child._gen = np.random.Generator(np.random.PCG64(ss))
        return child


def sherman_morrison_update(a_inv: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return ``(A + u v^T)^{-1}`` given ``a_inv = A^{-1}``.

    Raises:
        SingularUpdateError: if ``|1 + v^T A^{-1} u| < 1e-12``.
    """
    a_inv = np.asarray(a_inv, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    au = a_inv @ u
    va = v @ a_inv
    denom = 1.0 + v @ au
    if abs(denom) < _SM_TOL:
        raise SingularUpdateError(f"rank-1 update denominator {denom:.3e} is singular")
    return a_inv - np.outer(au, va) / denom


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a x = b`` for symmetric positive-definite ``a`` by Cholesky.

    The matrix is symmetrised as ``(a + a^T) / 2`` first so small asymmetries
    accumulated by repeated rank-1 updates do not break the factorisation.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(a), initial=0.0)):
        raise ValueError("matrix is not symmetric within 1e-10")
    sym = 0.5 * (a + a.T)
    try:
        chol = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefiniteError("matrix is not positive-definite") from err
    y = solve_triangular(chol, b, lower=True, check_finite=False)
    return solve_triangular(chol.T, y, lower=False, check_finite=False)


def sample_standard_normal(rng: Rng, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. N(0, 1) values (ziggurat method)."""
    return rng.normal(int(n))


def project_ball(x: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the centred ball of the given radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x)
    if norm <= radius:
        return x
    return x * (radius / norm)
