from __future__ import annotations

import numpy as np
import pytest

from model.types import AffineField, OdeSystem, OptimizerConfig
from service import neuralnet, reference, systems, training
from service.linflow import AffineFlowBase
from service.neuralnet import ScalarNet
from service.training import TrainingDomainError
from service.trial import TrialSolution


def _rotation():
    system = systems.from_expressions(2, ["-y2", "y1"], {}, [1.0, 2.0], 3.0)
    field = AffineField.linear([[0.0, -1.0], [1.0, 0.0]])
    return system, AffineFlowBase(field, system.y0)


def _food_chain_trial(m: int = 3, points: int = 8) -> tuple[TrialSolution, OdeSystem]:
    p = systems.builtin("food_chain")
    base = AffineFlowBase(p.linear_part, p.system.y0)
    nets = [ScalarNet.zeros(m)] * 3
    return TrialSolution.build(base, nets, np.linspace(0.0, 3.0, points)), p.system


def test_linear_system_has_zero_loss_at_zero_nets():
    system, base = _rotation()
    tr = TrialSolution.build(base, [ScalarNet.zeros(4)] * 2, np.linspace(0.0, 3.0, 25))
    state = training.loss_and_grad(tr, system, np.zeros(tr.param_size))
    assert state.L <= 1e-28
    np.testing.assert_allclose(state.g, 0.0, atol=1e-13)


def test_food_chain_loss_is_positive_at_zero_nets():
    tr, system = _food_chain_trial()
    state = training.loss_and_grad(tr, system, np.zeros(tr.param_size))
    assert state.L > 0
    assert state.per_component.shape == (3,)
    assert state.L == pytest.approx(float(np.sum(state.per_component)))


def _coupled_trial(m: int, points: int) -> tuple[TrialSolution, OdeSystem]:
    system = systems.from_expressions(
        3,
        ["-y1 + 0.5*y2*y3", "sin(y1) - y2 + 0.2*y1*y3", "y1*y2 - 0.3*y3^2 + t"],
        {},
        [0.5, -0.3, 0.8],
        1.0,
    )
    field = AffineField.linear([[-1.0, 0.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, -0.3]])
    base = AffineFlowBase(field, system.y0)
    return TrialSolution.build(base, [ScalarNet.zeros(m)] * 3, np.linspace(0.0, 1.0, points)), system


def _preset_trial(name: str, m: int, points: int) -> tuple[TrialSolution, OdeSystem]:
    if name == "coupled":
        return _coupled_trial(m, points)
    p = systems.builtin(name)
    base = AffineFlowBase(p.linear_part, p.system.y0)
    grid = np.linspace(*p.train_interval, points)
    return TrialSolution.build(base, [ScalarNet.zeros(m)] * p.system.dim, grid), p.system


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("name", ["food_chain", "rossler", "lorenz", "coupled"])
def test_gradient_matches_central_differences(name, seed):
    tr, system = _preset_trial(name, m=4, points=8)
    rng = np.random.default_rng(seed)
    p = 0.3 * training.initial_params(system.dim, 4, seed=seed)
    g = training.loss_and_grad(tr, system, p).g
    h = 1e-6
    for i in rng.choice(p.size, size=20, replace=False):
        up, down = p.copy(), p.copy()
        up[i] += h
        down[i] -= h
        fd = (training.loss_and_grad(tr, system, up).L - training.loss_and_grad(tr, system, down).L) / (2 * h)
        assert abs(g[i] - fd) <= 1e-5 * max(1.0, abs(fd)), (name, seed, i)


def test_threaded_loss_matches_serial():
    tr, system = _food_chain_trial(m=4, points=23)
    p = training.initial_params(3, 4, seed=7)
    serial = training.loss_and_grad(tr, system, p, threads=1)
    for threads in (2, 3, 8):
        parallel = training.loss_and_grad(tr, system, p, threads=threads)
        assert abs(parallel.L - serial.L) <= 1e-13 * serial.L
        np.testing.assert_allclose(parallel.g, serial.g, rtol=1e-13, atol=1e-13)


def test_loss_is_deterministic():
    tr, system = _food_chain_trial()
    p = training.initial_params(3, 3, seed=1)
    a = training.loss_and_grad(tr, system, p)
    b = training.loss_and_grad(tr, system, p)
    assert a.L == b.L
    np.testing.assert_array_equal(a.g, b.g)


def test_initial_params_differ_per_component():
    p = training.initial_params(3, 5, seed=0)
    size = neuralnet.param_count(5)
    assert p.size == 3 * size
    assert not np.array_equal(p[:size], p[size : 2 * size])
    np.testing.assert_array_equal(p, training.initial_params(3, 5, seed=0))


def test_domain_error_reports_grid_time():
    system = systems.from_expressions(1, ["log(y1 - 2)"], {}, [1.0], 1.0)
    base = AffineFlowBase(AffineField.zero(1), system.y0)
    tr = TrialSolution.build(base, [ScalarNet.zeros(2)], [0.0, 0.5, 1.0])
    with pytest.raises(TrainingDomainError) as info:
        training.loss_and_grad(tr, system, np.zeros(tr.param_size))
    assert info.value.t == 0.0


def _decay():
    system = systems.from_expressions(1, ["-y1 + 0.1*sin(t)"], {}, [1.0], 1.0)
    return system, AffineFlowBase(AffineField.linear([[-1.0]]), system.y0)


def test_fit_lowers_the_loss_and_is_reproducible():
    system, base = _decay()
    grid = np.linspace(0.0, 1.0, 12)
    cfg = OptimizerConfig(max_iters=40, restarts=2, log_every=0)
    tr, report = training.fit(system, base, grid, hidden_units=4, cfg=cfg, seed=3)
    start = TrialSolution.build(base, [ScalarNet.zeros(4)], grid)
    initial = training.loss_and_grad(start, system, training.initial_params(1, 4, 3)).L
    assert report.final_loss < initial
    assert len(report.restart_losses) == 2
    assert report.final_loss == min(report.restart_losses)
    assert report.seed in (3, 4)
    np.testing.assert_array_equal(tr.params(), report.final_p)

    _, again = training.fit(system, base, grid, hidden_units=4, cfg=cfg, seed=3)
    np.testing.assert_array_equal(again.final_p, report.final_p)
    assert again.final_loss == report.final_loss


def test_rmse_of_identical_trajectories_is_zero():
    tr, _ = _food_chain_trial()
    times = np.linspace(0.0, 3.0, 7)
    assert training.rmse(tr, tr.values_at(times), times) == 0.0


def test_rmse_averages_components():
    system, base = _rotation()
    tr = TrialSolution.build(base, [ScalarNet.zeros(2)] * 2, [0.0, 1.0])
    times = np.linspace(0.0, 1.0, 5)
    shifted = tr.values_at(times)
    shifted[:, 0] -= 0.25
    per = training.rmse_per_component(tr, shifted, times)
    np.testing.assert_allclose(per, [0.25, 0.0], atol=1e-15)
    assert training.rmse(tr, shifted, times) == pytest.approx(0.125)


def test_rmse_against_dense_reference():
    system, base = _rotation()
    tr = TrialSolution.build(base, [ScalarNet.zeros(2)] * 2, [0.0, 1.0])
    sol = reference.rk45(system, (0.0, 3.0), rtol=1e-11, atol=1e-11)
    assert training.rmse(tr, sol, np.linspace(0.0, 3.0, 50)) <= 1e-8


def test_rmse_shape_mismatch():
    tr, _ = _food_chain_trial()
    with pytest.raises(ValueError):
        training.rmse_per_component(tr, np.zeros((4, 2)), np.linspace(0.0, 1.0, 4))

