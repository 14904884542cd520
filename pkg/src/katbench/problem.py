"""Composite objective ``phi(x) = (1/n) sum_i f_i(x) + psi(x)``.

Each component is ``f_i(x) = loss(a_i . x; b_i) - r2(x)`` and
``psi(x) = ell1_scale * ||x||_1``, where the nonconvex penalty
``lambda * R(x) = r1(x) - r2(x)`` is split into a scaled l1 norm ``r1`` and a
smooth convex ``r2``. Subtracting ``r2`` makes every ``f_i`` weakly convex
with modulus ``mu`` and ``L``-smooth with ``L = mu + max_i ||a_i||^2``.

All vector functions here take and return dense float64 arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from katbench.data import Dataset, max_row_norm_sq


class Loss(str, enum.Enum):
    SQUARED_HINGE = "squared_hinge"
    LEAST_SQUARES = "least_squares"


class RegKind(str, enum.Enum):
    NONE = "none"
    L1 = "l1"
    LSP = "lsp"
    TL1 = "tl1"


@dataclass(frozen=True)
class Regularizer:
    """``lam * R(x)`` for one of the supported penalties.

    ``beta`` is only read by LSP and TL1.
    """

    kind: RegKind = RegKind.NONE
    lam: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", RegKind(self.kind))
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.kind in (RegKind.LSP, RegKind.TL1) and not self.beta > 0:
            raise ValueError("beta must be positive for LSP and TL1")

    @property
    def has_smooth_part(self) -> bool:
        return self.kind in (RegKind.LSP, RegKind.TL1) and self.lam > 0


# --------------------------------------------------------------------------
# penalties


def penalty_value(reg: Regularizer, x) -> float:
    """``lam * R(x)`` evaluated directly (not through the DC split)."""
    ax = np.abs(x)
    lam, beta = reg.lam, reg.beta
    if reg.kind is RegKind.LSP:
        # log(beta + |x|) shifted by the constant log(beta) so that R(0) = 0.
        return float(lam * np.sum(np.log1p(ax / beta)))
    if reg.kind is RegKind.TL1:
        return float(lam * np.sum((beta + 1.0) * ax / (beta + ax)))
    if reg.kind is RegKind.L1:
        return float(lam * np.sum(ax))
    return 0.0


def r2_grad(reg: Regularizer, x: np.ndarray) -> np.ndarray:
    """Gradient of the smooth convex part ``r2``; zeros for L1 and NONE."""
    lam, beta = reg.lam, reg.beta
    if reg.kind is RegKind.LSP:
        # lam * sign(x) * (1/beta - 1/(beta+|x|)) == lam * x / (beta * (beta+|x|))
        return (lam / beta) * x / (beta + np.abs(x))
    if reg.kind is RegKind.TL1:
        ax = np.abs(x)
        d = beta + ax
        return (lam * (beta + 1.0) / beta) * x * (ax + 2.0 * beta) / (d * d)
    return np.zeros_like(x, dtype=np.float64)


def r2_value(reg: Regularizer, x) -> float:
    ax = np.abs(np.asarray(x, dtype=np.float64))
    lam, beta = reg.lam, reg.beta
    if reg.kind is RegKind.LSP:
        return float(lam * np.sum(ax / beta - np.log1p(ax / beta)))
    if reg.kind is RegKind.TL1:
        return float(lam * np.sum((beta + 1.0) * ax * ax / (beta * (beta + ax))))
    return 0.0


def r2_value_grad(reg: Regularizer, x) -> Tuple[float, np.ndarray]:
    """Value and gradient of ``r2`` for LSP or TL1.

    For LSP ``r2(x) = lam * sum(|x|/beta - log(1 + |x|/beta))``; for TL1
    ``r2(x) = lam * sum((beta+1) x^2 / (beta (beta+|x|)))``. Both are smooth
    and vanish with zero gradient at the origin.
    """
    reg = reg if isinstance(reg, Regularizer) else Regularizer(**reg)
    if reg.kind not in (RegKind.LSP, RegKind.TL1):
        raise ValueError(f"r2 is only defined for LSP and TL1, not {reg.kind.value}")
    x = np.asarray(x, dtype=np.float64)
    return r2_value(reg, x), r2_grad(reg, x)


# --------------------------------------------------------------------------
# losses as functions of the margin z = a . x


def loss_values(loss: Loss, z, b):
    if loss is Loss.SQUARED_HINGE:
        m = np.maximum(0.0, 1.0 - b * z)
        return 0.5 * m * m
    r = z - b
    return 0.5 * r * r


def loss_derivs(loss: Loss, z, b):
    """Derivative of the loss with respect to the margin ``z``."""
    if loss is Loss.SQUARED_HINGE:
        return -b * np.maximum(0.0, 1.0 - b * z)
    return z - b


def derive_constants(data: Dataset, loss: Loss, reg: Regularizer) -> Tuple[float, float, float]:
    """Return ``(L, mu, ell1_scale)`` for the problem defined by the inputs.

    ``mu`` is the weak-convexity modulus contributed by ``-r2`` and ell1_scale
    the coefficient of ``||x||_1`` in ``psi``. ``L = mu + max_i ||a_i||^2`` is
    the same worst-case bound for both losses.
    """
    Loss(loss)
    lam, beta = reg.lam, reg.beta
    if reg.kind is RegKind.LSP:
        mu, ell1 = lam / beta**2, lam / beta
    elif reg.kind is RegKind.TL1:
        mu, ell1 = 2.0 * (beta + 1.0) * lam / beta**2, lam * (beta + 1.0) / beta
    elif reg.kind is RegKind.L1:
        mu, ell1 = 0.0, lam
    else:
        mu, ell1 = 0.0, 0.0
    return mu + max_row_norm_sq(data), mu, ell1


@dataclass(frozen=True, eq=False)
class CompositeProblem:
    """Immutable problem instance; construct with :func:`make_problem`."""

    data: Dataset
    loss: Loss
    reg: Regularizer
    L: float
    mu: float
    ell1_scale: float

    def __post_init__(self):
        if not (self.L >= self.mu >= 0):
            raise ValueError("need L >= mu >= 0")
        if self.ell1_scale < 0:
            raise ValueError("ell1_scale must be non-negative")

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def dim(self) -> int:
        return self.data.dim

    def margins(self, x) -> np.ndarray:
        return self.data.csr() @ x

    def loss_mean(self, x) -> float:
        return float(np.mean(loss_values(self.loss, self.margins(x), self.data.labels)))

    def loss_grad(self, x) -> np.ndarray:
        coef = loss_derivs(self.loss, self.margins(x), self.data.labels)
        return (self.data.csr().T @ coef) / self.n

    def smooth_value(self, x) -> float:
        """``(1/n) sum_i f_i(x)``."""
        return self.loss_mean(x) - r2_value(self.reg, x)

    def smooth_grad(self, x) -> np.ndarray:
        """``(1/n) sum_i grad f_i(x)``; costs ``n`` component gradients."""
        return self.loss_grad(x) - r2_grad(self.reg, x)

    def psi(self, x) -> float:
        return self.ell1_scale * float(np.sum(np.abs(x)))

    def objective(self, x) -> float:
        return self.smooth_value(x) + self.psi(x)

    def direct_objective(self, x) -> float:
        """``(1/n) sum loss_i(x) + lam R(x)`` without the DC split."""
        return self.loss_mean(x) + penalty_value(self.reg, x)


def make_problem(data: Dataset, loss="squared_hinge", reg: Optional[Regularizer] = None) -> CompositeProblem:
    loss = Loss(loss)
    reg = reg if reg is not None else Regularizer()
    if loss is Loss.SQUARED_HINGE and not data.is_binary():
        raise ValueError("squared hinge loss needs labels in {-1, +1}")
    L, mu, ell1 = derive_constants(data, loss, reg)
    return CompositeProblem(data, loss, reg, L, mu, ell1)


def loss_value_grad(problem: CompositeProblem, i: int, x) -> Tuple[float, np.ndarray]:
    """Loss of component ``i`` and its gradient (supported on ``a_i``)."""
    x = np.asarray(x, dtype=np.float64)
    row = problem.data.row(i)
    z = float(row.values @ x[row.indices])
    b = problem.data.labels[i]
    grad = np.zeros(problem.dim)
    grad[row.indices] = loss_derivs(problem.loss, z, b) * row.values
    return float(loss_values(problem.loss, z, b)), grad


def f_i_grad(problem: CompositeProblem, i: int, x, counter=None) -> np.ndarray:
    """``grad loss_i(x) - grad r2(x)``; charges one gradient to ``counter``."""
    x = np.asarray(x, dtype=np.float64)
    _, g = loss_value_grad(problem, i, x)
    if counter is not None:
        counter.charge(1)
    return g - r2_grad(problem.reg, x)


def objective(problem: CompositeProblem, x) -> float:
    return problem.objective(np.asarray(x, dtype=np.float64))


# --------------------------------------------------------------------------
# proximal maps


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def prox_shifted_l1(center, g, eta: float, sigma_psi: float, anchor, tau: float) -> np.ndarray:
    """Exact minimizer over ``z`` of

        (1/(2 eta)) ||z - center||^2 + <g, z> + (sigma_psi/2) ||z - anchor||^2 + tau ||z||_1

    computed coordinate-wise by soft thresholding.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    if sigma_psi < 0 or tau < 0:
        raise ValueError("sigma_psi and tau must be non-negative")
    inv_eta = 1.0 / eta
    denom = inv_eta + sigma_psi
    v = (np.asarray(center) * inv_eta - np.asarray(g) + sigma_psi * np.asarray(anchor)) / denom
    return soft_threshold(v, tau / denom)
