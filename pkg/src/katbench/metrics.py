"""Gradient accounting, stationarity measures and convergence traces."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional

import numpy as np

from katbench.errors import TraceOrderError
from katbench.problem import CompositeProblem, soft_threshold

CSV_COLUMNS = (
    "solver",
    "stage",
    "epoch",
    "grads",
    "grads_over_n",
    "objective",
    "stationarity",
    "measure_id",
    "wall_ns",
)
TRUNCATED_SUFFIX = ":truncated"

MOREAU_PROXY = "moreau_proxy"
PROX_GRAD = "prox_grad"


class GradCounter:
    """Counts component-gradient evaluations against an optional budget.

    A full gradient costs ``n``; a stochastic gradient costs 1 per component
    touched. Solvers ask :meth:`try_charge` before each unit of work and stop
    once it refuses, which sets :attr:`exhausted`.
    """

    def __init__(self, budget: Optional[int] = None):
        if budget is not None and budget < 0:
            raise ValueError("budget must be non-negative")
        self.count = 0
        self.budget = budget
        self.exhausted = False

    def can_afford(self, cost: int) -> bool:
        return self.budget is None or self.count + cost <= self.budget

    def charge(self, cost: int) -> None:
        if cost < 0:
            raise ValueError("cost must be non-negative")
        self.count += int(cost)

    def try_charge(self, cost: int) -> bool:
        if not self.can_afford(cost):
            self.exhausted = True
            return False
        self.charge(cost)
        return True

    def __repr__(self):
        return f"GradCounter(count={self.count}, budget={self.budget})"


def prox_gradient_norm(
    problem: CompositeProblem, x, eta: float, counter: Optional[GradCounter] = None
) -> float:
    """Norm of the proximal gradient mapping

        G_eta(x) = (x - prox_{eta psi}(x - eta grad f(x))) / eta

    The full gradient is charged to ``counter`` when one is given; pass a
    separate diagnostic counter (or None) to keep it off the budget axis.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = problem.smooth_grad(x)
    if counter is not None:
        counter.charge(problem.n)
    p = soft_threshold(x - eta * g, eta * problem.ell1_scale)
    return float(np.linalg.norm(x - p) / eta)


@dataclass(frozen=True)
class TracePoint:
    solver: str
    stage: int
    epoch: int
    grads: int
    grads_over_n: float
    objective: float
    stationarity: float
    measure_id: str
    wall_ns: int = 0
    truncated: bool = False

    def csv_row(self) -> list:
        mid = self.measure_id + (TRUNCATED_SUFFIX if self.truncated else "")
        return [
            self.solver,
            self.stage,
            self.epoch,
            self.grads,
            repr(float(self.grads_over_n)),
            repr(float(self.objective)),
            repr(float(self.stationarity)),
            mid,
            self.wall_ns,
        ]

    @classmethod
    def from_csv_row(cls, row: Dict[str, str]) -> "TracePoint":
        mid = row["measure_id"]
        truncated = mid.endswith(TRUNCATED_SUFFIX)
        if truncated:
            mid = mid[: -len(TRUNCATED_SUFFIX)]
        return cls(
            solver=row["solver"],
            stage=int(row["stage"]),
            epoch=int(row["epoch"]),
            grads=int(row["grads"]),
            grads_over_n=float(row["grads_over_n"]),
            objective=float(row["objective"]),
            stationarity=float(row["stationarity"]),
            measure_id=mid,
            wall_ns=int(row["wall_ns"]),
            truncated=truncated,
        )


class SolverTrace:
    """Append-only list of trace points from one or more solvers.

    Within one solver id the gradient counts must strictly increase.
    """

    def __init__(self, points: Iterable[TracePoint] = ()):
        self.points: List[TracePoint] = []
        self._last: Dict[str, int] = {}
        for p in points:
            self.record(p)

    def record(self, point: TracePoint) -> None:
        last = self._last.get(point.solver)
        if last is not None and point.grads <= last:
            raise TraceOrderError(
                f"{point.solver}: grad count {point.grads} does not exceed previous {last}"
            )
        if not math.isfinite(point.objective):
            raise ValueError(f"{point.solver}: non-finite objective in trace")
        self.points.append(point)
        self._last[point.solver] = point.grads

    def mark_truncated(self, solver: str) -> None:
        """Flag the latest point of ``solver`` as the budget cut-off."""
        for k in range(len(self.points) - 1, -1, -1):
            if self.points[k].solver == solver:
                self.points[k] = replace(self.points[k], truncated=True)
                return
        raise KeyError(solver)

    def last_grads(self, solver: str) -> Optional[int]:
        return self._last.get(solver)

    def for_solver(self, solver: str) -> List[TracePoint]:
        return [p for p in self.points if p.solver == solver]

    @property
    def solvers(self) -> List[str]:
        return list(dict.fromkeys(p.solver for p in self.points))

    def extend(self, other: "SolverTrace") -> None:
        for p in other.points:
            self.record(p)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __eq__(self, other):
        return isinstance(other, SolverTrace) and self.points == other.points

    def to_csv(self, out=None) -> Optional[str]:
        buf = io.StringIO() if out is None else out
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for p in self.points:
            writer.writerow(p.csv_row())
        return buf.getvalue() if out is None else None

    @classmethod
    def from_csv(cls, source) -> "SolverTrace":
        if isinstance(source, str):
            source = io.StringIO(source)
        reader = csv.DictReader(source)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return cls(TracePoint.from_csv_row(row) for row in reader)


class Recorder:
    """Writes points for one solver into a :class:`SolverTrace`.

    ``objective`` and ``stationarity`` are evaluated by the caller; any
    gradients they need belong on a diagnostic counter, not the budget.
    """

    def __init__(self, trace: Optional[SolverTrace], solver: str, n: int, deterministic_time=False):
        self.trace = trace
        self.solver = solver
        self.n = n
        self.deterministic_time = deterministic_time
        self._t0 = time.perf_counter_ns()

    @property
    def active(self) -> bool:
        return self.trace is not None

    def record(self, stage, epoch, grads, objective, stationarity, measure_id) -> None:
        if self.trace is None:
            return
        last = self.trace.last_grads(self.solver)
        if last is not None and grads == last:
            # Same budget position as the previous point: nothing new to say.
            return
        wall = 0 if self.deterministic_time else time.perf_counter_ns() - self._t0
        self.trace.record(
            TracePoint(
                solver=self.solver,
                stage=int(stage),
                epoch=int(epoch),
                grads=int(grads),
                grads_over_n=grads / self.n,
                objective=float(objective),
                stationarity=float(stationarity),
                measure_id=measure_id,
                wall_ns=int(wall),
            )
        )

    def truncate(self) -> None:
        if self.trace is not None and self.trace.last_grads(self.solver) is not None:
            self.trace.mark_truncated(self.solver)
