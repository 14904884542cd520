"""Katalyst outer loop.

Stage ``s`` approximately minimizes ``f_s(x) = phi(x) + (1/(2 gamma)) ||x - x_{s-1}||^2``
with ``gamma = 1/(2 mu)``. The quadratic is split between the components,
which become convex (``fhat_i = f_i + (mu/2)||x - x_{s-1}||^2``), and the
prox term, which becomes ``mu``-strongly convex. Katyusha is warm-started at
``x_{s-1}`` and run for a stage-dependent number of epochs; the returned
point is drawn from the stage outputs with weights ``w_s = s^alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from katbench import katyusha
from katbench.errors import ConfigError, DivergenceError
from katbench.metrics import MOREAU_PROXY, GradCounter, Recorder, SolverTrace
from katbench.problem import CompositeProblem


@dataclass(frozen=True)
class KatalystConfig:
    """Outer-loop settings; build with :meth:`for_problem`.

    The loop runs stages ``s = 1 .. S+1``. ``smooth_mode`` uses the
    stage-independent epoch count that suffices when ``psi = 0``.
    """

    S: int
    alpha: float
    L: float
    mu: float
    smooth_mode: bool = False

    def __post_init__(self):
        if self.S < 0:
            raise ConfigError("S must be non-negative")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not self.mu > 0:
            raise ConfigError(
                "Katalyst needs a positive weak-convexity modulus mu (gamma = 1/(2 mu))"
            )
        if self.L < 0:
            raise ConfigError("L must be non-negative")

    @classmethod
    def for_problem(cls, problem: CompositeProblem, S: int, alpha: float = 1.0, smooth_mode=None, mu=None):
        """Take ``L`` and ``mu`` from ``problem``; ``mu`` may be overridden by a floor."""
        mu = problem.mu if mu is None else mu
        if smooth_mode is None:
            smooth_mode = problem.ell1_scale == 0.0
        return cls(S=S, alpha=alpha, L=problem.L, mu=mu, smooth_mode=bool(smooth_mode))

    @property
    def gamma(self) -> float:
        return 1.0 / (2.0 * self.mu)

    @property
    def sigma(self) -> float:
        return self.mu

    @property
    def Lhat(self) -> float:
        return self.L + self.mu

    def weights(self, count: Optional[int] = None) -> np.ndarray:
        count = self.S + 1 if count is None else count
        return np.arange(1, count + 1, dtype=np.float64) ** self.alpha


def selection_probabilities(cfg: KatalystConfig, count: Optional[int] = None) -> np.ndarray:
    """``p_tau = w_{tau+1} / sum_k w_{k+1}`` over ``tau = 0 .. count-1``."""
    w = cfg.weights(count)
    return w / w.sum()


def log_stage_D(s: int, cfg: KatalystConfig) -> float:
    """``log D_s`` with ``D_s = max(24 Lhat/mu, 2 Lhat^3/mu^3, 8 L^2 s/mu^2)``.

    In smooth mode the last, stage-dependent term is dropped. Computed in
    log space since ``Lhat/mu`` can be huge.
    """
    r = math.log(cfg.Lhat / cfg.mu)
    terms = [math.log(24.0) + r, math.log(2.0) + 3.0 * r]
    if not cfg.smooth_mode:
        terms.append(math.log(8.0) + 2.0 * math.log(cfg.L / cfg.mu) + math.log(s))
    return max(terms)


def stage_epochs(s: int, cfg: KatalystConfig, m: int, theta: float) -> int:
    """``K_s = ceil(log(D_s) / (m log(theta)))``, at least 1."""
    if s < 1:
        raise ValueError("stages are numbered from 1")
    K = math.ceil(log_stage_D(s, cfg) / (m * math.log1p(theta - 1.0)))
    return max(int(K), 1)


@dataclass(frozen=True)
class StageRecord:
    s: int
    x_start: np.ndarray = field(repr=False)
    x_end: np.ndarray = field(repr=False)
    K_s: int
    grads: int
    objective_end: float
    moreau_proxy: float


def moreau_grad_proxy(rec: StageRecord, gamma: float) -> float:
    """``||x_start - x_end|| / gamma``, standing in for ``||grad phi_gamma(x_start)||``."""
    return float(np.linalg.norm(rec.x_start - rec.x_end) / gamma)


@dataclass
class KatalystResult:
    """``solution`` is the randomly selected ``x_{tau+1}``; ``last`` the final iterate.

    When the budget cut the run short, ``tau`` is drawn among the completed
    stages only, and is None if no stage completed.
    """

    solution: np.ndarray
    tau: Optional[int]
    records: List[StageRecord]
    last: np.ndarray
    truncated: bool = False

    def __iter__(self):
        return iter((self.solution, self.tau, self.records))


def stage_subproblem(problem: CompositeProblem, anchor, cfg: KatalystConfig) -> katyusha.StageSubproblem:
    return katyusha.StageSubproblem(problem, anchor, shift=cfg.mu, sigma_psi=1.0 / cfg.gamma - cfg.mu)


def run_katalyst(
    problem: CompositeProblem,
    x0,
    cfg: KatalystConfig,
    rng: np.random.Generator,
    trace: Optional[SolverTrace] = None,
    counter: Optional[GradCounter] = None,
    solver_id: str = "katalyst",
    checkpoint: Optional[int] = None,
    deterministic_time: bool = False,
) -> KatalystResult:
    """Run stages ``1 .. S+1`` (or until ``counter``'s budget runs out).

    Trace points carry ``phi`` of the current estimate and, as stationarity,
    its distance to the stage anchor divided by ``gamma``.
    """
    counter = counter if counter is not None else GradCounter()
    rec = Recorder(trace, solver_id, problem.n, deterministic_time)
    base = katyusha.make_params(problem.n, cfg.sigma, cfg.Lhat, 1)
    gamma = cfg.gamma
    x_prev = np.array(x0, dtype=np.float64)
    if rec.active:
        rec.record(0, 0, counter.count, problem.objective(x_prev), float("nan"), MOREAU_PROXY)
    records: List[StageRecord] = []
    last = x_prev

    for s in range(1, cfg.S + 2):
        K_s = stage_epochs(s, cfg, base.m, base.theta)
        sub = stage_subproblem(problem, x_prev, cfg)
        anchor = x_prev

        def on_epoch(state, s=s, anchor=anchor):
            if rec.active:
                x = state.current()
                rec.record(
                    s,
                    state.epoch,
                    counter.count,
                    problem.objective(x),
                    np.linalg.norm(anchor - x) / gamma,
                    MOREAU_PROXY,
                )

        try:
            x_s = katyusha.run(sub, x_prev, base.with_epochs(K_s), rng, counter, on_epoch, checkpoint)
        except DivergenceError as err:
            raise err.at_stage(s) from err
        last = x_s
        if counter.exhausted:
            break
        records.append(
            StageRecord(
                s=s,
                x_start=x_prev,
                x_end=x_s,
                K_s=K_s,
                grads=counter.count,
                objective_end=problem.objective(x_s),
                moreau_proxy=float(np.linalg.norm(x_prev - x_s) / gamma),
            )
        )
        x_prev = x_s

    truncated = counter.exhausted
    if truncated:
        rec.truncate()
    if records:
        p = selection_probabilities(cfg, len(records))
        tau = int(rng.choice(len(records), p=p))
        solution = records[tau].x_end
    else:
        tau, solution = None, last
    return KatalystResult(solution, tau, records, last, truncated)


def weighted_proxy_sq(records: List[StageRecord], cfg: KatalystConfig, count: Optional[int] = None) -> float:
    """``sum_s w_s proxy_s^2 / sum_s w_s`` over the first ``count`` stages.

    This is the expectation of the squared Moreau proxy at the randomly
    selected stage.
    """
    count = len(records) if count is None else count
    w = cfg.weights(count)
    vals = np.array([r.moreau_proxy for r in records[:count]]) ** 2
    return float(w @ vals / w.sum())
