"""Benchmark runner: solvers under a shared gradient budget, traces to CSV."""

from __future__ import annotations

import configparser
import dataclasses
import logging
import re
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from katbench.baselines import ProxSvrgConfig, run_prox_svrg
from katbench.data import Dataset, load_libsvm
from katbench.errors import ConfigError
from katbench.katalyst import KatalystConfig, run_katalyst
from katbench.metrics import GradCounter, SolverTrace
from katbench.problem import Loss, RegKind, Regularizer, make_problem

log = logging.getLogger(__name__)

SOLVERS = ("katalyst", "prox_svrg", "prox_svrg_mb")
_SYNTH = re.compile(r"^synthetic:(\d+),(\d+),(-?\d+)$")
_PER_N = re.compile(r"^\s*([0-9.eE+-]*)\s*(/\s*n|\*?\s*n)\s*$")


def resolve_count(spec: Union[str, float, int], n: int) -> float:
    """Evaluate ``"40n"``, ``"0.1/n"``, ``"1/n"`` or a plain number."""
    if isinstance(spec, (int, float)):
        return spec
    text = str(spec).strip()
    m = _PER_N.match(text)
    if m:
        coef = float(m.group(1)) if m.group(1) not in ("", "+", "-") else 1.0
        return coef / n if m.group(2).startswith("/") else coef * n
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot interpret {spec!r} as a number") from None


@dataclass
class ExperimentConfig:
    """One benchmark run. ``budget_grads`` and ``lam`` accept ``n``-relative
    strings such as ``"40n"`` and ``"1/n"``."""

    dataset_path: str = "synthetic:200,50,0"
    loss: str = "squared_hinge"
    reg_kind: str = "lsp"
    beta: float = 1.0
    lam: Union[str, float] = "1/n"
    solvers: List[str] = field(default_factory=lambda: list(SOLVERS))
    budget_grads: Union[str, int] = "40n"
    S: int = 100_000
    alpha: float = 1.0
    seed: int = 0
    output_path: Optional[str] = None
    dim: Optional[int] = None
    checkpoint: Union[str, int] = "1n"
    mu_floor: float = 0.0
    deterministic_time: bool = False

    def __post_init__(self):
        if isinstance(self.solvers, str):
            self.solvers = [s.strip() for s in self.solvers.split(",") if s.strip()]
        if not self.solvers:
            raise ConfigError("select at least one solver")
        unknown = set(self.solvers) - set(SOLVERS)
        if unknown:
            raise ConfigError(f"unknown solvers {sorted(unknown)}; choose from {SOLVERS}")
        try:
            Loss(self.loss)
            RegKind(self.reg_kind)
        except ValueError as err:
            raise ConfigError(str(err)) from None

    _ALIASES = {
        "dataset": "dataset_path",
        "reg": "reg_kind",
        "lambda": "lam",
        "budget": "budget_grads",
        "out": "output_path",
        "output": "output_path",
    }

    @classmethod
    def from_mapping(cls, values: Dict[str, object]) -> "ExperimentConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, val in values.items():
            key = cls._ALIASES.get(key, key)
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, val)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Read flat ``key = value`` lines (``#`` starts a comment)."""
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string("[experiment]\n" + text)
        except configparser.Error as err:
            raise ConfigError(f"{path}: {err}") from None
        return cls.from_mapping(dict(parser["experiment"]))


_INTS = {"S", "seed", "dim"}
_FLOATS = {"beta", "alpha", "mu_floor"}


def _coerce(key, val):
    if not isinstance(val, str):
        return val
    val = val.strip()
    try:
        if key in _INTS:
            return int(val)
        if key in _FLOATS:
            return float(val)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {val!r}") from None
    if key == "deterministic_time":
        if val.lower() not in ("1", "0", "true", "false", "yes", "no"):
            raise ConfigError(f"{key}: expected a boolean, got {val!r}")
        return val.lower() in ("1", "true", "yes")
    if key in ("output_path", "dim") and val.lower() in ("", "none"):
        return None
    return val


def make_synthetic(n: int, d: int, seed: int, density: float = 0.1) -> Dataset:
    """Reproducible sparse binary classification data.

    Each row has Gaussian entries on a random support of expected size
    ``density * d`` (never empty) and is scaled to unit norm, so
    ``max ||a_i||^2 = 1``. Labels are ``sign(a_i . w + noise)`` for a planted
    ``w``.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    w = 3.0 * rng.standard_normal(d)
    mask = rng.random((n, d)) < density
    mask[np.arange(n), rng.integers(0, d, size=n)] = True
    A = np.where(mask, rng.standard_normal((n, d)), 0.0)
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    noise = 0.1 * rng.standard_normal(n)
    labels = np.where(A @ w + noise >= 0.0, 1.0, -1.0)
    return Dataset.from_dense(A, labels)


def load_dataset(spec: str, dim: Optional[int] = None) -> Dataset:
    m = _SYNTH.match(spec.strip())
    if m:
        return make_synthetic(int(m.group(1)), int(m.group(2)), int(m.group(3)))
    return load_libsvm(spec, dim=dim)


def solver_rng(seed: int, solver_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(solver_id.encode())]))


def run_experiment(cfg: ExperimentConfig, data: Optional[Dataset] = None) -> dict:
    """Run every selected solver from ``x0 = 0`` and return a summary.

    The CSV trace goes to ``cfg.output_path`` when set; the summary holds the
    trace itself under ``"trace"`` plus per-solver final values.
    """
    data = load_dataset(cfg.dataset_path, cfg.dim) if data is None else data
    n = data.n
    lam = float(resolve_count(cfg.lam, n))
    reg = Regularizer(RegKind(cfg.reg_kind), lam=lam, beta=cfg.beta)
    problem = make_problem(data, Loss(cfg.loss), reg)
    budget = int(resolve_count(cfg.budget_grads, n))
    if budget <= 0:
        raise ConfigError("budget_grads must be positive")
    checkpoint = int(resolve_count(cfg.checkpoint, n)) or None
    x0 = np.zeros(problem.dim)
    trace = SolverTrace()
    summary = {
        "n": n,
        "dim": problem.dim,
        "L": problem.L,
        "mu": problem.mu,
        "ell1_scale": problem.ell1_scale,
        "lambda": lam,
        "budget": budget,
        "solvers": {},
    }
    common = dict(checkpoint=checkpoint, deterministic_time=cfg.deterministic_time)

    for sid in cfg.solvers:
        rng = solver_rng(cfg.seed, sid)
        counter = GradCounter(budget)
        extra = {}
        if sid == "katalyst":
            mu = max(problem.mu, cfg.mu_floor)
            if not mu > 0:
                raise ConfigError(
                    "katalyst needs mu > 0: use LSP/TL1 with lambda > 0 or set mu_floor"
                )
            kcfg = KatalystConfig.for_problem(problem, cfg.S, cfg.alpha, mu=mu)
            res = run_katalyst(problem, x0, kcfg, rng, trace, counter, solver_id=sid, **common)
            extra = {
                "tau": res.tau,
                "stages_completed": len(res.records),
                "selected_objective": problem.objective(res.solution),
            }
        else:
            variant = "small_step" if sid == "prox_svrg" else "mini_batch"
            pcfg = ProxSvrgConfig.for_problem(problem, variant, epochs=budget // n + 1)
            run_prox_svrg(problem, x0, pcfg, rng, trace, counter, solver_id=sid, **common)
            extra = {"step": pcfg.step, "batch": pcfg.batch}
        last = trace.for_solver(sid)[-1]
        summary["solvers"][sid] = {
            "final_objective": last.objective,
            "final_stationarity": last.stationarity,
            "measure_id": last.measure_id,
            "grads": last.grads,
            "truncated": last.truncated,
            **extra,
        }
        log.info("%s: objective %.6g after %d gradients", sid, last.objective, last.grads)

    if cfg.output_path:
        with open(cfg.output_path, "w", encoding="utf-8", newline="") as fh:
            trace.to_csv(fh)
    summary["trace"] = trace
    return summary


def format_summary(summary: dict) -> str:
    lines = [
        f"n={summary['n']} d={summary['dim']} L={summary['L']:.6g} mu={summary['mu']:.6g} "
        f"budget={summary['budget']} grads",
        f"{'solver':<14}{'grads/n':>9}{'objective':>16}{'stationarity':>16}  measure",
    ]
    n = summary["n"]
    for sid, info in summary["solvers"].items():
        lines.append(
            f"{sid:<14}{info['grads'] / n:>9.2f}{info['final_objective']:>16.8g}"
            f"{info['final_stationarity']:>16.6g}  {info['measure_id']}"
        )
    return "\n".join(lines)
