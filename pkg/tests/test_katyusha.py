import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from katbench.data import Dataset
from katbench.errors import ConfigError, DivergenceError
from katbench.katyusha import StageSubproblem, contraction_bound, make_params, run
from katbench.metrics import GradCounter
from katbench.oracle import finite_diff_grad
from katbench.problem import make_problem


def test_params_example_capped_tau():
    p = make_params(100, 0.01, 1.0, 1)
    assert p.tau1 == 0.5 and p.tau2 == 0.5
    assert p.eta == pytest.approx(2 / 3, rel=1e-12)
    assert p.theta == pytest.approx(1 + 1 / 150, rel=1e-12)
    assert p.m == 105


def test_params_example_small_n():
    p = make_params(3, 1.0, 1.0, 1)
    assert p.tau1 == 0.5
    assert p.eta == pytest.approx(2 / 3, rel=1e-12)
    assert p.theta == pytest.approx(5 / 3, rel=1e-12)
    assert p.m == 2


def test_params_uncapped_tau():
    p = make_params(10, 0.003, 1.0, 2)
    assert p.tau1 == pytest.approx(0.1, rel=1e-12)
    assert p.eta == pytest.approx(1 / 0.3, rel=1e-12)
    assert p.theta == pytest.approx(1.01, rel=1e-12)
    # ceil(log(0.2 + 2/1.01 - 1) / log(1.01)) + 1 = ceil(16.65) + 1
    assert p.m == 18


@settings(max_examples=300, deadline=None)
@given(
    st.integers(1, 10**7),
    st.floats(1e-9, 1.0),
    st.floats(1e-3, 1e3),
)
def test_params_invariants(n, ratio, Lhat):
    p = make_params(n, ratio * Lhat, Lhat, 1)
    assert 0 < p.tau1 <= 0.5 and p.tau1 + p.tau2 <= 1
    assert 2 * p.tau1 + 2 / p.theta - 1 >= 1 - 1e-12
    assert p.m >= 2
    if p.m < 5000:
        assert p.weight_total == pytest.approx(sum(p.theta**t for t in range(p.m)), rel=1e-9)


@pytest.mark.parametrize("args", [(10, 0.0, 1.0, 1), (10, 1.0, 0.0, 1), (10, 2.0, 1.0, 1), (0, 0.1, 1.0, 1), (10, 0.1, 1.0, 0)])
def test_params_errors(args):
    with pytest.raises(ConfigError):
        make_params(*args)


def test_weight_total_identity():
    for n, sigma in ((100, 0.01), (7, 0.3), (5000, 1e-5)):
        p = make_params(n, sigma, 1.0, 1)
        direct = (p.theta**p.m - 1) / (p.theta - 1)
        assert p.weight_total == pytest.approx(direct, rel=1e-9)


def _quadratic_1d():
    # f_1(x) = 0.5 x^2 via one least-squares row a = 1, b = 0
    return make_problem(Dataset.from_dense([[1.0]], [0.0]), "least_squares")


def test_one_dimensional_contraction():
    pb = _quadratic_1d()
    sigma = 0.5
    sub = StageSubproblem(pb, np.zeros(1), shift=0.0, sigma_psi=sigma)
    p = make_params(1, sigma, pb.L, 1)
    out = run(sub, np.array([1.0]), p, np.random.default_rng(0))
    assert abs(out[0]) < 1.0


@pytest.fixture
def stage(nc_problem, rng):
    mu = nc_problem.mu
    anchor = rng.standard_normal(nc_problem.dim)
    sub = StageSubproblem(nc_problem, anchor, shift=mu, sigma_psi=mu)
    return sub, make_params(nc_problem.n, mu, nc_problem.L + mu, 3)


def test_gradient_accounting(stage):
    sub, p = stage
    counter = GradCounter()
    run(sub, sub.anchor, p, np.random.default_rng(0), counter)
    assert counter.count == p.K * (sub.n + 2 * p.m)


def test_deterministic(stage):
    sub, p = stage
    seen = []
    for _ in range(2):
        traj = []
        x = run(sub, sub.anchor, p, np.random.default_rng(11), callback=lambda s: traj.append(s.current().copy()))
        seen.append((x, traj))
    np.testing.assert_array_equal(seen[0][0], seen[1][0])
    for a, b in zip(seen[0][1], seen[1][1]):
        np.testing.assert_array_equal(a, b)


def test_callback_weight_total(stage):
    sub, p = stage
    states = []
    run(sub, sub.anchor, p, np.random.default_rng(2), callback=states.append)
    assert [s.epoch for s in states] == list(range(1, p.K + 1))
    for s in states:
        assert s.epoch_complete
        assert s.weight_total == pytest.approx(p.weight_total, rel=1e-9)


def test_component_gradients(stage, rng):
    sub, _ = stage
    for _ in range(5):
        i = int(rng.integers(sub.n))
        x = rng.standard_normal(sub.dim)
        fd = finite_diff_grad(lambda z: sub.component_value(i, z), x)
        np.testing.assert_allclose(sub.component_grad(i, x), fd, rtol=1e-6, atol=1e-8)
    x = rng.standard_normal(sub.dim)
    fd = finite_diff_grad(sub.smooth_value, x)
    np.testing.assert_allclose(sub.full_grad(x), fd, rtol=1e-6, atol=1e-8)


def test_variance_reduced_gradient(stage, rng):
    sub, _ = stage
    xt = rng.standard_normal(sub.dim)
    snap = sub.snapshot(xt)
    np.testing.assert_allclose(snap.grad, sub.full_grad(xt), rtol=1e-12, atol=1e-14)
    x = rng.standard_normal(sub.dim)
    for i in range(sub.n):
        ref = snap.grad + sub.component_grad(i, x) - sub.component_grad(i, xt)
        np.testing.assert_allclose(sub.vr_grad(i, x, snap), ref, rtol=1e-11, atol=1e-13)
    batch = rng.integers(0, sub.n, size=7)
    ref = np.mean([sub.vr_grad(int(i), x, snap) for i in batch], axis=0)
    np.testing.assert_allclose(sub.vr_grad_batch(batch, x, snap), ref, rtol=1e-11, atol=1e-13)


def test_mean_objective_does_not_increase(stage):
    sub, p = stage
    x0 = sub.anchor.copy()
    vals = [sub.value(run(sub, x0, p, np.random.default_rng(seed))) for seed in range(20)]
    assert np.mean(vals) <= sub.value(x0)


def test_contraction_bound_on_quadratic():
    rng = np.random.default_rng(4)
    n, d = 40, 5
    A = rng.standard_normal((n, d)) / np.sqrt(d)
    b = rng.standard_normal(n)
    pb = make_problem(Dataset.from_dense(A, b), "least_squares")
    sigma = 0.1 * pb.L
    sub = StageSubproblem(pb, np.zeros(d), shift=0.0, sigma_psi=sigma)
    # minimiser of (1/n)(0.5||Ax - b||^2) + (sigma/2)||x||^2
    xs = np.linalg.solve(A.T @ A / n + sigma * np.eye(d), A.T @ b / n)
    x0 = np.zeros(d)
    p = make_params(n, sigma, pb.L, 2)
    gaps = [sub.value(run(sub, x0, p, np.random.default_rng(s))) - sub.value(xs) for s in range(20)]
    assert np.mean(gaps) <= 2 * contraction_bound(p, sub.value(x0) - sub.value(xs), xs @ xs)


def test_divergence_raises(nc_problem):
    sub = StageSubproblem(nc_problem, np.zeros(nc_problem.dim), shift=0.0, sigma_psi=1e-8)
    p = make_params(nc_problem.n, 1e-8, 1e-6, 400)  # Lhat far below the true smoothness
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
        run(sub, np.ones(nc_problem.dim), p, np.random.default_rng(0))
    assert info.value.epoch is not None and info.value.iteration is not None


def test_budget_truncation_returns_partial_average(stage):
    sub, p = stage
    budget = sub.n + 2 * (p.m // 2) + 1
    counter = GradCounter(budget)
    states = []
    x = run(sub, sub.anchor, p, np.random.default_rng(0), counter, states.append)
    assert counter.exhausted and counter.count == sub.n + 2 * (p.m // 2)
    assert len(states) == 1 and not states[0].epoch_complete
    np.testing.assert_allclose(x, states[0].weighted_sum / states[0].weight_total)
    assert np.all(np.isfinite(x))


def test_checkpoint_callbacks(stage):
    sub, p = stage
    counter = GradCounter()
    marks = []
    run(sub, sub.anchor, p.with_epochs(1), np.random.default_rng(0), counter,
        lambda s: marks.append((s.epoch_complete, counter.count)), checkpoint=sub.n)
    assert marks[-1] == (True, sub.n + 2 * p.m)
    assert all(not done for done, _ in marks[:-1])
    assert len(marks) >= 2
