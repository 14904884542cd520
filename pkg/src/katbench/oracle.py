"""Brute-force reference computations for the test suite.

Nothing here shares gradient code with the solvers; only objective values
are evaluated through the problem module. Inputs are capped at desk scale.
"""

from __future__ import annotations

import numpy as np
from scipy import optimize

MAX_DIM = 50
MAX_ROWS = 500


def _check_scale(d, n=1):
    if d > MAX_DIM or n > MAX_ROWS:
        raise ValueError(f"oracle inputs limited to d <= {MAX_DIM}, n <= {MAX_ROWS}")


def finite_diff_grad(fn, x, h: float = 1e-5) -> np.ndarray:
    """Central differences ``(fn(x + h e_j) - fn(x - h e_j)) / (2h)``."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    _check_scale(x.size)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return g


def grid_prox_1d(center, g, eta, sigma_psi, anchor, tau, lo=-10.0, hi=10.0, step=1e-4) -> float:
    """Minimize the scalar prox objective by exhaustive search on a grid."""
    if not lo < hi or not step > 0:
        raise ValueError("need lo < hi and step > 0")
    z = np.arange(lo, hi + step / 2, step)
    if z.size > 10_000_001:
        raise ValueError("grid too fine")
    vals = (
        (z - center) ** 2 / (2.0 * eta)
        + g * z
        + 0.5 * sigma_psi * (z - anchor) ** 2
        + tau * np.abs(z)
    )
    return float(z[np.argmin(vals)])


def exact_quadratic_min(A, b, mu_reg: float = 0.0, cond_limit: float = 1e12) -> np.ndarray:
    """Minimizer of ``0.5 ||A x - b||^2 + (mu_reg/2) ||x||^2`` by a direct solve.

    ``A`` may be a dense array or a :class:`~katbench.data.Dataset`.

    Raises
    ------
    numpy.linalg.LinAlgError
        If the regularized normal equations are singular or numerically so.
    """
    if hasattr(A, "dense"):
        A = A.dense()
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_scale(A.shape[1], A.shape[0])
    H = A.T @ A + mu_reg * np.eye(A.shape[1])
    if not np.isfinite(np.linalg.cond(H)) or np.linalg.cond(H) > cond_limit:
        raise np.linalg.LinAlgError("singular normal equations")
    return np.linalg.solve(H, A.T @ b)


def scalar_prox(phi, x: float, gamma: float, lo: float = -50.0, hi: float = 50.0) -> float:
    """``argmin_z phi(z) + (z - x)^2 / (2 gamma)`` for a 1-D ``phi``.

    Minimizes separately on each half-line (``phi`` may have a kink at 0)
    after a coarse grid scan, then keeps the best of the candidates and 0.
    """
    obj = lambda z: phi(z) + (z - x) ** 2 / (2.0 * gamma)
    grid = np.linspace(lo, hi, 20001)
    vals = np.array([obj(z) for z in grid])
    z0 = grid[np.argmin(vals)]
    width = grid[1] - grid[0]
    cands = [0.0, z0]
    for a, c in ((max(lo, z0 - 2 * width), min(hi, z0 + 2 * width)), (lo, 0.0), (0.0, hi)):
        res = optimize.minimize_scalar(obj, bounds=(a, c), method="bounded", options={"xatol": 1e-13})
        cands.append(float(res.x))
    return min(cands, key=obj)


def subgradient_dist_1d(fprime: float, tau: float, z: float) -> float:
    """``dist(0, f'(z) + tau * d|z|)`` for scalar ``z``."""
    if z != 0.0:
        return abs(fprime + tau * np.sign(z))
    return max(abs(fprime) - tau, 0.0)
