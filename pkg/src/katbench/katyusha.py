"""Modified Katyusha for ``min (1/n) sum_i fhat_i(x) + psihat(x)``.

Each ``fhat_i`` is convex and ``Lhat``-smooth, ``psihat`` is
``sigma``-strongly convex with an exact prox. Unlike the original Katyusha,
``tau1`` does not depend on ``m`` and the inner length ``m`` is derived from
``theta = 1 + eta * sigma`` so that one call shrinks the objective gap by a
fixed factor per epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from katbench.errors import ConfigError, DivergenceError
from katbench.metrics import GradCounter
from katbench.problem import (
    CompositeProblem,
    Loss,
    loss_derivs,
    loss_values,
    r2_grad,
    r2_value,
)


@dataclass(frozen=True)
class KatyushaParams:
    tau1: float
    tau2: float
    eta: float
    theta: float
    m: int
    K: int
    sigma: float
    Lhat: float

    @property
    def weight_total(self) -> float:
        """``sum_{t<m} theta^t``, the normaliser of the epoch average."""
        es = self.eta * self.sigma
        return math.expm1(self.m * math.log1p(es)) / es

    def epoch_cost(self, n: int) -> int:
        return n + 2 * self.m

    def with_epochs(self, K: int) -> "KatyushaParams":
        return make_params_from(self, K)


def make_params(n: int, sigma: float, Lhat: float, K: int) -> KatyushaParams:
    """Inner-solver constants.

    ``tau1 = min(sqrt(n sigma / (3 Lhat)), 1/2)``, ``eta = 1/(3 tau1 Lhat)``,
    ``theta = 1 + eta sigma`` and
    ``m = ceil(log(2 tau1 + 2/theta - 1) / log(theta)) + 1``.
    Both logarithms go through ``log1p`` because ``eta * sigma`` is often tiny.
    """
    if not sigma > 0 or not Lhat > 0:
        raise ConfigError("sigma and Lhat must be positive")
    if sigma > Lhat:
        raise ConfigError(f"sigma={sigma} exceeds Lhat={Lhat}")
    if n < 1 or K < 1:
        raise ConfigError("n and K must be at least 1")
    tau1 = min(math.sqrt(n * sigma / (3.0 * Lhat)), 0.5)
    eta = 1.0 / (3.0 * tau1 * Lhat)
    es = eta * sigma
    theta = 1.0 + es
    # 2 tau1 + 2/theta - 1 == 1 + (2 tau1 - 2 es / theta)
    m = math.ceil(math.log1p(2.0 * tau1 - 2.0 * es / theta) / math.log1p(es)) + 1
    return KatyushaParams(tau1, 0.5, eta, theta, int(m), int(K), float(sigma), float(Lhat))


def make_params_from(p: KatyushaParams, K: int) -> KatyushaParams:
    return KatyushaParams(p.tau1, p.tau2, p.eta, p.theta, p.m, int(K), p.sigma, p.Lhat)


def contraction_bound(params: KatyushaParams, gap0: float, dist0_sq: float, constant: float = 4.0) -> float:
    """Expected-gap bound after ``params.K`` epochs started at ``x0``:

        constant * tau1 * theta^(-m K) * ((1 - tau1)/tau1 * gap0 + dist0_sq / (2 eta))

    where ``gap0 = f(x0) - f(x)`` and ``dist0_sq = ||x0 - x||^2``.
    """
    p = params
    decay = math.exp(-p.m * p.K * math.log1p(p.eta * p.sigma))
    return constant * p.tau1 * decay * ((1 - p.tau1) / p.tau1 * gap0 + dist0_sq / (2 * p.eta))


class Snapshot:
    """Quantities at the epoch anchor ``xtilde`` reused by every inner step."""

    __slots__ = ("x", "grad", "lderiv", "r2g")

    def __init__(self, x, grad, lderiv, r2g):
        self.x = x
        self.grad = grad
        self.lderiv = lderiv
        self.r2g = r2g


class StageSubproblem:
    """``(1/n) sum_i [f_i(x) + (shift/2)||x - anchor||^2] + psihat(x)`` with

        psihat(x) = (sigma_psi/2) ||x - anchor||^2 + tau ||x||_1

    built on a :class:`CompositeProblem`. ``tau`` defaults to the problem's
    l1 coefficient.
    """

    def __init__(
        self,
        problem: CompositeProblem,
        anchor,
        shift: float,
        sigma_psi: float,
        tau: Optional[float] = None,
    ):
        self.problem = problem
        self.anchor = np.array(anchor, dtype=np.float64)
        self.anchor.setflags(write=False)
        self.shift = float(shift)
        self.sigma_psi = float(sigma_psi)
        self.tau = problem.ell1_scale if tau is None else float(tau)
        data = problem.data
        self._indptr = data.indptr
        self._indices = data.indices
        self._values = data.values
        self._labels = data.labels
        self._hinge = problem.loss is Loss.SQUARED_HINGE
        self._smooth_reg = problem.reg.has_smooth_part
        self._prox_cache = None

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def dim(self) -> int:
        return self.problem.dim

    def smooth_value(self, x) -> float:
        d = x - self.anchor
        return self.problem.smooth_value(x) + 0.5 * self.shift * float(d @ d)

    def psi_value(self, x) -> float:
        d = x - self.anchor
        return 0.5 * self.sigma_psi * float(d @ d) + self.tau * float(np.sum(np.abs(x)))

    def value(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return self.smooth_value(x) + self.psi_value(x)

    def component_value(self, i: int, x) -> float:
        lo, hi = self._indptr[i], self._indptr[i + 1]
        z = self._values[lo:hi] @ x[self._indices[lo:hi]]
        d = x - self.anchor
        return (
            float(loss_values(self.problem.loss, z, self._labels[i]))
            - r2_value(self.problem.reg, x)
            + 0.5 * self.shift * float(d @ d)
        )

    def component_grad(self, i: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        lo, hi = self._indptr[i], self._indptr[i + 1]
        idx, vals = self._indices[lo:hi], self._values[lo:hi]
        z = vals @ x[idx]
        g = self.shift * (x - self.anchor) - r2_grad(self.problem.reg, x)
        g[idx] += loss_derivs(self.problem.loss, z, self._labels[i]) * vals
        return g

    def full_grad(self, x) -> np.ndarray:
        return self.problem.smooth_grad(x) + self.shift * (x - self.anchor)

    def prox(self, center, g, eta: float) -> np.ndarray:
        """:func:`~katbench.problem.prox_shifted_l1` with constants cached per ``eta``."""
        c = self._prox_cache
        if c is None or c[0] != eta:
            if not eta > 0:
                raise ValueError("eta must be positive")
            denom = 1.0 / eta + self.sigma_psi
            offset = (self.sigma_psi / denom) * self.anchor if self.sigma_psi else None
            c = self._prox_cache = (eta, 1.0 / (eta * denom), 1.0 / denom, offset, self.tau / denom)
        _, c_center, c_g, offset, thr = c
        v = center * c_center - g * c_g
        if offset is not None:
            v += offset
        if thr:
            v -= np.clip(v, -thr, thr)
        return v

    def snapshot(self, xt) -> Snapshot:
        problem = self.problem
        z = problem.margins(xt)
        lderiv = loss_derivs(problem.loss, z, self._labels)
        r2g = r2_grad(problem.reg, xt)
        grad = (problem.data.csr().T @ lderiv) / problem.n - r2g + self.shift * (xt - self.anchor)
        return Snapshot(xt, grad, lderiv, r2g)

    def vr_grad(self, i: int, x: np.ndarray, snap: Snapshot) -> np.ndarray:
        """``grad fhat(xt) + grad fhat_i(x) - grad fhat_i(xt)`` for ``xt = snap.x``."""
        lo = self._indptr[i]
        hi = self._indptr[i + 1]
        idx = self._indices[lo:hi]
        vals = self._values[lo:hi]
        z = vals @ x[idx]
        b = self._labels[i]
        if self._hinge:
            r = 1.0 - b * z
            s = -b * r if r > 0.0 else 0.0
        else:
            s = z - b
        # anchor terms of the shift cancel in the difference
        if self.shift:
            g = snap.grad + self.shift * (x - snap.x)
        else:
            g = snap.grad.copy()
        if self._smooth_reg:
            g -= r2_grad(self.problem.reg, x) - snap.r2g
        g[idx] += (s - snap.lderiv[i]) * vals
        return g

    def vr_grad_batch(self, batch, x: np.ndarray, snap: Snapshot) -> np.ndarray:
        """Mini-batch average of :meth:`vr_grad` over the indices in ``batch``."""
        batch = np.asarray(batch)
        rows = self.problem.data.csr()[batch]
        z = rows @ x
        coef = loss_derivs(self.problem.loss, z, self._labels[batch]) - snap.lderiv[batch]
        g = snap.grad + (rows.T @ coef) / batch.size
        if self.shift:
            g += self.shift * (x - snap.x)
        if self._smooth_reg:
            g -= r2_grad(self.problem.reg, x) - snap.r2g
        return g


@dataclass
class InnerState:
    """Solver state handed to the callback.

    ``epoch_complete`` is False for mid-epoch checkpoints, in which case
    :meth:`current` is the weighted average of the inner iterates so far.
    """

    epoch: int
    step: int
    y: np.ndarray
    zeta: np.ndarray
    xtilde: np.ndarray
    snapshot_grad: Optional[np.ndarray]
    weighted_sum: np.ndarray
    weight_total: float
    epoch_complete: bool

    def current(self) -> np.ndarray:
        if self.epoch_complete or self.weight_total == 0.0:
            return self.xtilde
        return self.weighted_sum / self.weight_total


def run(
    subproblem,
    x0,
    params: KatyushaParams,
    rng: np.random.Generator,
    counter: Optional[GradCounter] = None,
    callback: Optional[Callable[[InnerState], None]] = None,
    checkpoint: Optional[int] = None,
) -> np.ndarray:
    """Run ``params.K`` epochs of modified Katyusha from ``x0``.

    ``subproblem`` needs ``n``, ``snapshot(x)``, ``vr_grad(i, x, snap)`` and
    ``prox(center, g, eta)`` (see :class:`StageSubproblem`). Every epoch charges
    ``n`` for the snapshot and 2 per inner step to ``counter``; if the budget
    runs out the run stops and returns the current estimate (the weighted
    average of the inner iterates so far, or the last epoch output).

    The ``y`` step is a plain gradient step that leaves ``psihat`` out, so
    when ``psihat`` is active at the solution the epoch outputs settle about
    ``||grad fhat|| / (3 Lhat)`` away from the exact minimizer.

    ``callback`` fires after every epoch and, when ``checkpoint`` is set,
    each time the counter crosses a multiple of ``checkpoint``.
    """
    p = params
    n = subproblem.n
    tau1, tau2 = p.tau1, p.tau2
    tau3 = 1.0 - tau1 - tau2
    eta, theta, m = p.eta, p.theta, p.m
    y_step = 1.0 / (3.0 * p.Lhat)
    xt = np.array(x0, dtype=np.float64)
    y = xt.copy()
    zeta = xt.copy()
    next_mark = None
    if checkpoint and counter is not None:
        next_mark = (counter.count // checkpoint + 1) * checkpoint

    for k in range(p.K):
        if counter is not None and not counter.try_charge(n):
            break
        snap = subproblem.snapshot(xt)
        wsum = np.zeros_like(xt)
        wtot = 0.0
        draws = rng.integers(0, n, size=m)
        anchor_term = tau2 * xt
        cut = False
        for t in range(m):
            if counter is not None and not counter.try_charge(2):
                cut = True
                break
            x = tau1 * zeta + anchor_term
            x += tau3 * y
            g = subproblem.vr_grad(int(draws[t]), x, snap)
            zeta = subproblem.prox(zeta, g, eta)
            y = x - y_step * g
            w = theta**t
            wsum += w * y
            wtot += w
            if not math.isfinite(float(y @ y)):
                raise DivergenceError(
                    f"non-finite iterate at epoch {k}, iteration {t}", epoch=k, iteration=t
                )
            if next_mark is not None and counter.count >= next_mark and t + 1 < m:
                next_mark = (counter.count // checkpoint + 1) * checkpoint
                if callback is not None:
                    callback(InnerState(k, t + 1, y, zeta, xt, snap.grad, wsum, wtot, False))
        if cut:
            if wtot > 0.0:
                state = InnerState(k, t, y, zeta, xt, snap.grad, wsum, wtot, False)
                xt = state.current()
                if callback is not None:
                    callback(state)
            break
        xt = wsum / wtot
        if next_mark is not None and counter.count >= next_mark:
            next_mark = (counter.count // checkpoint + 1) * checkpoint
        if callback is not None:
            callback(InnerState(k + 1, m, y, zeta, xt, snap.grad, wsum, wtot, True))
    return xt
