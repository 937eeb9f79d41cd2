from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from service import reference, systems
from service.reference import OutOfSpanError, StepSizeError


def _decay():
    return systems.from_expressions(1, ["-y1"], {}, [1.0], 1.0)


def _oscillator():
    return systems.from_expressions(2, ["y2", "-y1"], {}, [1.0, 0.0], 20.0)


def test_rk4_decay():
    sol = reference.rk4(_decay(), (0.0, 1.0), 1000)
    assert abs(sol.end_state()[0] - np.exp(-1.0)) <= 1e-9
    assert sol.times.size == 1001
    assert sol.times[-1] == 1.0


def test_rk4_is_fourth_order():
    system = systems.from_expressions(1, ["-y1 + sin(t)"], {}, [1.0], 2.0)
    exact = 0.5 * (np.sin(2.0) - np.cos(2.0)) + 1.5 * np.exp(-2.0)
    errors = [abs(reference.rk4(system, (0.0, 2.0), n).end_state()[0] - exact) for n in (20, 40, 80)]
    for big, small in zip(errors, errors[1:]):
        assert 3.8 <= np.log2(big / small) <= 4.2


def test_constant_solution_stays_put():
    system = systems.from_expressions(2, ["0", "0"], {}, [3.0, -1.5], 1.0)
    for sol in (reference.rk4(system, (0.0, 1.0), 7), reference.rk45(system, (0.0, 1.0))):
        np.testing.assert_array_equal(sol.states, np.tile([3.0, -1.5], (sol.times.size, 1)))


def test_rk45_decay():
    sol = reference.rk45(_decay(), (0.0, 1.0))
    assert abs(sol.end_state()[0] - np.exp(-1.0)) <= 1e-8
    assert sol.accepted_steps > 0
    assert sol.times[0] == 0.0 and sol.times[-1] == 1.0


def test_rk45_conserves_oscillator_energy():
    sol = reference.rk45(_oscillator(), (0.0, 20.0), rtol=1e-10, atol=1e-10)
    energy = np.sum(sol.states**2, axis=1)
    assert np.max(np.abs(energy - 1.0)) <= 1e-7
    np.testing.assert_allclose(sol.end_state(), [np.cos(20.0), -np.sin(20.0)], atol=1e-7)


def test_rk45_matches_scipy():
    p = systems.builtin("van_der_pol")
    sol = reference.rk45(p.system, (0.0, 10.0), rtol=1e-10, atol=1e-10)
    ref = solve_ivp(lambda t, y: p.system.f(t, y), (0.0, 10.0), p.system.y0, method="DOP853", rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(sol.end_state(), ref.y[:, -1], atol=1e-7)


@pytest.mark.parametrize("name", ["food_chain", "van_der_pol", "rossler"])
def test_tolerances_agree_on_presets(name):
    p = systems.builtin(name)
    span = p.test_interval
    loose = reference.rk45(p.system, span, rtol=1e-8, atol=1e-8)
    tight = reference.rk45(p.system, span, rtol=1e-11, atol=1e-11)
    grid = np.linspace(*span, 50)
    diff = reference.sample(loose, grid) - reference.sample(tight, grid)
    assert np.max(np.abs(diff)) <= 1e-5 * max(1.0, float(np.max(np.abs(reference.sample(tight, grid)))))
    assert tight.accepted_steps > loose.accepted_steps


@pytest.mark.slow
def test_lorenz_rk45_against_fine_rk4():
    p = systems.builtin("lorenz")
    fine = reference.rk4(p.system, p.test_interval, 100_000)
    adaptive = reference.rk45(p.system, p.test_interval)
    np.testing.assert_allclose(adaptive.end_state(), fine.end_state(), rtol=0, atol=1e-6)
    grid = np.linspace(*p.test_interval, 200)
    np.testing.assert_allclose(reference.sample(adaptive, grid), reference.sample(fine, grid), rtol=0, atol=1e-4)


def test_backward_integration_returns_to_start():
    p = systems.builtin("van_der_pol")
    forward = reference.rk45(p.system, (0.0, 2.0), rtol=1e-11, atol=1e-11)
    backward = reference.rk45(p.system, (2.0, 0.0), rtol=1e-11, atol=1e-11, y0=forward.end_state())
    assert backward.t0 == 2.0 and backward.t1 == 0.0
    assert np.all(np.diff(backward.times) > 0)
    np.testing.assert_allclose(backward.end_state(), p.system.y0, atol=1e-8)


def test_sample_is_exact_at_knots():
    sol = reference.rk45(_oscillator(), (0.0, 3.0))
    np.testing.assert_array_equal(reference.sample(sol, sol.times), sol.states)


def test_sample_between_knots():
    sol = reference.rk4(_decay(), (0.0, 1.0), 200)
    np.testing.assert_allclose(reference.sample(sol, [0.5]), [[np.exp(-0.5)]], atol=1e-9)
    np.testing.assert_allclose(
        reference.sample(sol, np.linspace(0.0, 1.0, 200))[:, 0],
        np.exp(-np.linspace(0.0, 1.0, 200)),
        atol=1e-9,
    )


def test_sample_outside_span():
    sol = reference.rk4(_decay(), (0.0, 1.0), 10)
    with pytest.raises(OutOfSpanError):
        reference.sample(sol, [0.5, 1.5])
    with pytest.raises(OutOfSpanError):
        reference.sample(sol, [-1e-3])


def test_empty_span():
    sol = reference.rk45(_decay(), (0.5, 0.5))
    assert sol.times.size == 1
    np.testing.assert_array_equal(reference.sample(sol, [0.5, 0.5]), [[1.0], [1.0]])


def test_dense_solution_is_read_only():
    sol = reference.rk4(_decay(), (0.0, 1.0), 4)
    with pytest.raises(ValueError):
        sol.states[0, 0] = 2.0


def test_blow_up_raises():
    system = systems.from_expressions(1, ["y1^2"], {}, [1.0], 2.0)
    # StepSizeError or a domain error from the overflowing power
    with pytest.raises(ArithmeticError):
        reference.rk45(system, (0.0, 2.0))


def test_invalid_arguments():
    with pytest.raises(ValueError):
        reference.rk4(_decay(), (0.0, 1.0), 0)
    with pytest.raises(ValueError):
        reference.rk45(_decay(), (0.0, 1.0), rtol=0.0)


def test_step_budget_exhausted():
    with pytest.raises(StepSizeError):
        reference.rk45(_decay(), (0.0, 1.0), max_steps=2)
