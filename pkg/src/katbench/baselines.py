"""proxSVRG baselines for nonconvex composite finite sums.

Two classical settings are provided: a small step ``1/(3 L n^(2/3))`` with
single-sample steps, and step ``1/(3 L)`` with mini-batches of size
``ceil(n^(2/3))``. Each epoch takes a full-gradient snapshot at the current
point and then ``inner_len`` proximal steps along the variance-reduced
gradient; the last inner iterate starts the next epoch.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from katbench.errors import ConfigError, DivergenceError
from katbench.katyusha import StageSubproblem
from katbench.metrics import PROX_GRAD, GradCounter, Recorder, SolverTrace, prox_gradient_norm
from katbench.problem import CompositeProblem, soft_threshold


class Variant(str, enum.Enum):
    SMALL_STEP = "small_step"
    MINI_BATCH = "mini_batch"


def _n23(n: int) -> float:
    return n ** (2.0 / 3.0)


@dataclass(frozen=True)
class ProxSvrgConfig:
    variant: Variant
    epochs: int
    inner_len: int
    step: float
    batch: int

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.epochs < 0 or self.inner_len < 1 or self.batch < 1:
            raise ConfigError("epochs >= 0, inner_len >= 1 and batch >= 1 required")
        if self.step < 0:
            raise ConfigError("step must be non-negative")

    @classmethod
    def for_problem(
        cls,
        problem: CompositeProblem,
        variant="small_step",
        epochs: int = 1,
        inner_len: Optional[int] = None,
        step: Optional[float] = None,
        batch: Optional[int] = None,
    ) -> "ProxSvrgConfig":
        """Defaults follow the theoretical settings; any field may be overridden."""
        variant = Variant(variant)
        n, L = problem.n, problem.L
        if variant is Variant.SMALL_STEP:
            default_batch, default_step = 1, 1.0 / (3.0 * L * _n23(n))
        else:
            # guard against n^(2/3) landing a hair above an integer
            default_batch, default_step = math.ceil(_n23(n) - 1e-9), 1.0 / (3.0 * L)
        return cls(
            variant=variant,
            epochs=epochs,
            inner_len=n if inner_len is None else inner_len,
            step=default_step if step is None else step,
            batch=default_batch if batch is None else batch,
        )

    def epoch_cost(self, n: int) -> int:
        return n + 2 * self.batch * self.inner_len


def run_prox_svrg(
    problem: CompositeProblem,
    x0,
    cfg: ProxSvrgConfig,
    rng: np.random.Generator,
    trace: Optional[SolverTrace] = None,
    counter: Optional[GradCounter] = None,
    solver_id: str = "prox_svrg",
    checkpoint: Optional[int] = None,
    deterministic_time: bool = False,
) -> np.ndarray:
    """Run ``cfg.epochs`` epochs from ``x0`` and return the final iterate.

    Samples are drawn uniformly with replacement. Trace stationarity is the
    proximal gradient norm with ``eta = 1/L``, evaluated off-budget.
    """
    counter = counter if counter is not None else GradCounter()
    rec = Recorder(trace, solver_id, problem.n, deterministic_time)
    n, b, step = problem.n, cfg.batch, cfg.step
    thresh = step * problem.ell1_scale
    sub = StageSubproblem(problem, np.zeros(problem.dim), shift=0.0, sigma_psi=0.0)
    x = np.array(x0, dtype=np.float64)

    def observe(epoch, x):
        if rec.active:
            rec.record(
                0,
                epoch,
                counter.count,
                problem.objective(x),
                prox_gradient_norm(problem, x, 1.0 / problem.L),
                PROX_GRAD,
            )

    observe(0, x)
    next_mark = None
    if checkpoint:
        next_mark = (counter.count // checkpoint + 1) * checkpoint

    for epoch in range(cfg.epochs):
        if not counter.try_charge(n):
            break
        snap = sub.snapshot(x.copy())
        draws = rng.integers(0, n, size=(cfg.inner_len, b))
        for t in range(cfg.inner_len):
            if not counter.try_charge(2 * b):
                break
            if b == 1:
                v = sub.vr_grad(int(draws[t, 0]), x, snap)
            else:
                v = sub.vr_grad_batch(draws[t], x, snap)
            x = soft_threshold(x - step * v, thresh)
            if not math.isfinite(float(x @ x)):
                raise DivergenceError(
                    f"non-finite iterate at epoch {epoch}, iteration {t}", epoch=epoch, iteration=t
                )
            if next_mark is not None and counter.count >= next_mark:
                next_mark = (counter.count // checkpoint + 1) * checkpoint
                if t + 1 < cfg.inner_len:
                    observe(epoch, x)
        if counter.exhausted:
            observe(epoch, x)
            break
        observe(epoch + 1, x)

    if counter.exhausted:
        rec.truncate()
    return x
