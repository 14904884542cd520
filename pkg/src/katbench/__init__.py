"""Katalyst: stagewise Katyusha for weakly convex composite finite sums.

The package provides the Katalyst outer loop and its modified Katyusha inner
solver, proxSVRG baselines, nonconvex sparsity penalties (LSP, TL1) written as
a difference of convex functions, stationarity diagnostics and a small
benchmark harness that writes convergence traces as CSV.
"""

from katbench.data import Dataset, SparseRow, dot, dump_libsvm, max_row_norm_sq, parse_libsvm
from katbench.problem import CompositeProblem, Loss, RegKind, Regularizer, make_problem, objective
from katbench.katyusha import KatyushaParams, StageSubproblem, make_params
from katbench.katalyst import KatalystConfig, KatalystResult, run_katalyst, stage_epochs
from katbench.baselines import ProxSvrgConfig, run_prox_svrg
from katbench.metrics import GradCounter, SolverTrace, TracePoint, prox_gradient_norm

__version__ = "0.1.0"

__all__ = [
    "CompositeProblem",
    "Dataset",
    "GradCounter",
    "KatalystConfig",
    "KatalystResult",
    "KatyushaParams",
    "Loss",
    "ProxSvrgConfig",
    "RegKind",
    "Regularizer",
    "SolverTrace",
    "SparseRow",
    "StageSubproblem",
    "TracePoint",
    "dot",
    "dump_libsvm",
    "make_params",
    "make_problem",
    "max_row_norm_sq",
    "objective",
    "parse_libsvm",
    "prox_gradient_norm",
    "run_katalyst",
    "run_prox_svrg",
    "stage_epochs",
]
