from __future__ import annotations

import numpy as np
import pytest

from model.types import OptimizerConfig
from service import optimizer


def _quadratic(Q: np.ndarray, b: np.ndarray):
    def fun(p):
        r = p - b
        return 0.5 * float(r @ Q @ r), Q @ r

    return fun


def _rosenbrock(p):
    x, y = p
    L = (1.0 - x) ** 2 + 100.0 * (y - x * x) ** 2
    g = np.array([-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)])
    return float(L), g


@pytest.mark.parametrize("dim", [1, 6, 40])
def test_bfgs_unit_bowl_within_dim_plus_two_iterations(dim):
    def bowl(p):
        r = p - 1.0
        return float(r @ r), 2.0 * r

    cfg = OptimizerConfig(max_iters=100, grad_tol=1e-12, loss_tol=1e-18, log_every=0)
    report = optimizer.bfgs_minimize(bowl, np.zeros(dim), cfg)
    assert report.status in ("converged_grad", "converged_loss")
    assert report.iterations <= dim + 2
    assert report.final_loss <= 1e-18
    np.testing.assert_allclose(report.final_p, np.ones(dim), atol=1e-9)


def test_bfgs_solves_a_random_quadratic_bowl():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(6, 6))
    Q = M @ M.T + 6.0 * np.eye(6)
    b = rng.normal(size=6)
    cfg = OptimizerConfig(max_iters=100, grad_tol=1e-10, loss_tol=1e-18, log_every=0)
    report = optimizer.bfgs_minimize(_quadratic(Q, b), np.zeros(6), cfg)
    assert report.status in ("converged_grad", "converged_loss")
    assert report.final_loss <= 1e-16
    assert report.iterations <= 30
    np.testing.assert_allclose(report.final_p, b, atol=1e-7)


def test_bfgs_rosenbrock():
    cfg = OptimizerConfig(max_iters=200, grad_tol=1e-8, loss_tol=1e-14, log_every=0)
    report = optimizer.bfgs_minimize(_rosenbrock, np.array([-1.2, 1.0]), cfg)
    assert report.status in ("converged_grad", "converged_loss")
    assert report.final_loss <= 1e-10
    np.testing.assert_allclose(report.final_p, [1.0, 1.0], atol=1e-4)


@pytest.mark.parametrize("method", ["bfgs", "gradient_descent"])
def test_history_is_monotone(method):
    cfg = OptimizerConfig(max_iters=60, method=method, learning_rate=1e-3, log_every=0)
    report = optimizer.minimize(_rosenbrock, np.array([-1.2, 1.0]), cfg)
    losses = [row.loss for row in report.loss_history]
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert report.loss_history[0].iteration == 0
    assert report.method == method


def test_gradient_descent_on_a_quadratic():
    Q = np.diag([1.0, 2.0])
    cfg = OptimizerConfig(max_iters=500, method="gradient_descent", learning_rate=0.4, loss_tol=1e-12, log_every=0)
    report = optimizer.minimize(_quadratic(Q, np.array([1.0, -1.0])), np.zeros(2), cfg)
    assert report.status == "converged_loss"
    assert report.final_loss <= 1e-12


@pytest.mark.parametrize("method", ["bfgs", "gradient_descent"])
def test_stationary_start_stops_immediately(method):
    calls = []

    def flat(p):
        calls.append(p)
        return 1.0, np.zeros_like(p)

    report = optimizer.minimize(flat, np.ones(3), OptimizerConfig(method=method, log_every=0))
    assert report.status == "converged_grad"
    assert report.iterations == 0
    assert len(report.loss_history) == 1
    assert len(calls) == 1


@pytest.mark.parametrize("method", ["bfgs", "gradient_descent"])
def test_inconsistent_gradient_is_a_line_search_failure(method):
    def liar(p):
        # claims descent along +p while L grows there
        return float(np.sum(p)), -np.ones_like(p)

    cfg = OptimizerConfig(method=method, max_line_evals=20, log_every=0)
    report = optimizer.minimize(liar, np.zeros(2), cfg)
    assert report.status == "line_search_failure"
    assert report.failed
    np.testing.assert_array_equal(report.final_p, [0.0, 0.0])


def test_zero_iterations_returns_start():
    cfg = OptimizerConfig(max_iters=0, log_every=0)
    report = optimizer.bfgs_minimize(_rosenbrock, np.array([-1.2, 1.0]), cfg)
    assert report.status == "max_iters"
    np.testing.assert_array_equal(report.final_p, [-1.2, 1.0])
    assert report.final_loss == pytest.approx(24.2)


def test_strong_wolfe_conditions_hold():
    fun = _quadratic(np.diag([1.0, 10.0]), np.zeros(2))
    p = np.array([1.0, 1.0])
    L0, g0 = fun(p)
    d = -g0
    step = optimizer.strong_wolfe(fun, p, L0, g0, d, c1=1e-4, c2=0.9)
    assert step is not None
    assert step.L <= L0 + 1e-4 * step.alpha * float(g0 @ d)
    assert abs(float(step.g @ d)) <= 0.9 * abs(float(g0 @ d))


def test_strong_wolfe_rejects_ascent_direction():
    fun = _quadratic(np.eye(2), np.zeros(2))
    p = np.array([1.0, 0.0])
    L0, g0 = fun(p)
    assert optimizer.strong_wolfe(fun, p, L0, g0, g0) is None


@pytest.mark.parametrize("c1, c2", [(0.9, 0.1), (0.0, 0.5), (0.5, 1.0), (0.5, 0.5)])
def test_invalid_wolfe_constants(c1, c2):
    with pytest.raises(ValueError):
        OptimizerConfig(wolfe_c1=c1, wolfe_c2=c2)


def test_bfgs_rejects_non_finite_start():
    with pytest.raises(ValueError):
        optimizer.bfgs_minimize(_rosenbrock, np.array([np.nan, 1.0]), OptimizerConfig())
