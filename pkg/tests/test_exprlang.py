from __future__ import annotations

import numpy as np
import pytest

from service.exprlang import (
    BinOp,
    DomainError,
    EvaluationError,
    ExprError,
    ExprSyntaxError,
    LexError,
    Neg,
    UnknownIdentifierError,
    evaluate,
    evaluate_dual,
    parse,
    to_source,
)


def test_precedence_multiplication_before_addition():
    assert evaluate(parse("2+3*4"), 0.0, []) == 14.0


def test_food_chain_rhs_cancels_at_initial_point():
    e = parse("a*x - b*x*y", ["x", "y"], ["a", "b"])
    assert evaluate(e, 0.0, [0.5, 1.0], {"a": 1.0, "b": 1.0}) == 0.0


def test_unary_minus_binds_looser_than_power():
    e = parse("-x^2", ["x"])
    assert isinstance(e.root, Neg)
    assert evaluate(e, 0.0, [3.0]) == -9.0


def test_power_is_right_associative_and_takes_negative_exponent():
    assert evaluate(parse("2^3^2"), 0.0, []) == 512.0
    assert evaluate(parse("2^-1"), 0.0, []) == 0.5


def test_left_associative_subtraction_and_division():
    assert evaluate(parse("10-4-3"), 0.0, []) == 3.0
    assert evaluate(parse("64/4/2"), 0.0, []) == 8.0


def test_lorenz_component_value():
    e = parse("sigma*(y2-y1)", ["y1", "y2", "y3"], ["sigma"])
    assert evaluate(e, 0.0, [1.0, 5.0, 10.0], {"sigma": 10.0}) == 40.0


def test_constant_is_constant_everywhere():
    e = parse("3.5", ["y1"])
    for t, y in [(0.0, 0.0), (7.0, -2.0), (1e3, 1e6)]:
        assert evaluate(e, t, [y]) == 3.5


def test_time_is_always_available():
    e = parse("t*y1", ["y1"])
    assert evaluate(e, 2.0, [4.0]) == 8.0


def test_division_by_zero_is_domain_error_with_node():
    e = parse("x/ y", ["x", "y"])
    with pytest.raises(DomainError) as info:
        evaluate(e, 0.0, [1.0, 0.0])
    assert isinstance(info.value.node, BinOp)
    assert info.value.offset == 1


@pytest.mark.parametrize(
    "source, y",
    [
        ("log(x)", 0.0),
        ("log(x)", -1.0),
        ("sqrt(x)", -4.0),
        ("x^-1", 0.0),
        ("x^0.5", -2.0),
        ("exp(x)", 1000.0),
    ],
)
def test_domain_errors_are_raised_not_nan(source, y):
    with pytest.raises(DomainError):
        evaluate(parse(source, ["x"]), 0.0, [y])


def test_vectorised_domain_error_reports_first_bad_index():
    e = parse("1/x", ["x"])
    with pytest.raises(DomainError) as info:
        evaluate(e, np.zeros(4), [np.array([1.0, 2.0, 0.0, 0.0])])
    assert info.value.index == 2


@pytest.mark.parametrize(
    "source, error, offset",
    [
        ("2 $ 3", LexError, 2),
        ("1.2.3", LexError, 0),
        ("3x", LexError, 0),
        ("(1+2", ExprSyntaxError, 4),
        ("1+", ExprSyntaxError, 2),
        ("1+2)", ExprSyntaxError, 3),
        ("* 2", ExprSyntaxError, 0),
        ("foo+1", UnknownIdentifierError, 0),
        ("sin 1", ExprSyntaxError, 4),
    ],
)
def test_parse_errors_report_offset(source, error, offset):
    with pytest.raises(error) as info:
        parse(source, ["x"])
    assert info.value.offset == offset


def test_empty_source_is_syntax_error():
    with pytest.raises(ExprSyntaxError):
        parse("   ")


def test_unknown_parameter_name_is_rejected():
    with pytest.raises(UnknownIdentifierError):
        parse("a*x", ["x"], ["b"])


@pytest.mark.parametrize(
    "variables, params",
    [([], ["t"]), (["x"], ["t", "a"]), (["x"], ["sin"]), (["x"], ["x"]), (["t"], [])],
)
def test_reserved_or_repeated_names_are_rejected(variables, params):
    with pytest.raises(ExprError, match="declared twice or reserved"):
        parse("1", variables, params)


def test_wrong_state_length_and_missing_params():
    e = parse("a*x", ["x"], ["a"])
    with pytest.raises(EvaluationError):
        evaluate(e, 0.0, [1.0, 2.0], {"a": 1.0})
    with pytest.raises(EvaluationError):
        evaluate(e, 0.0, [1.0], {})


def test_dual_product_rule():
    d = evaluate_dual(parse("x*y", ["x", "y"]), 0.0, [2.0, 3.0], None, seed=0)
    assert d.value == 6.0
    assert d.deriv == 3.0


def test_dual_without_state_dependence_has_zero_derivative():
    e = parse("tanh(w*t)", ["y1"], ["w"])
    d = evaluate_dual(e, 0.7, [1.0], {"w": 2.0}, seed=0)
    assert d.deriv == 0.0
    assert d.value == pytest.approx(np.tanh(1.4))


def test_dual_lorenz_second_component_wrt_third_state():
    e = parse("rho*y1 - y2 - y1*y3", ["y1", "y2", "y3"], ["rho"])
    d = evaluate_dual(e, 0.0, [1.0, 5.0, 10.0], {"rho": 28.0}, seed=2)
    assert d.deriv == -1.0
    assert d.value == evaluate(e, 0.0, [1.0, 5.0, 10.0], {"rho": 28.0})


def test_dual_seed_must_be_state_variable():
    with pytest.raises(EvaluationError):
        evaluate_dual(parse("x", ["x"]), 0.0, [1.0], None, seed=1)


SOURCES = [
    "sin(x)*cos(y) + x^2/y",
    "exp(-x*y) - log(1 + x^2)",
    "sqrt(x^2 + y^2) * tanh(a*t)",
    "x^y + abs(x - y)",
    "(x + 2*y)^3 / (1 + exp(x))",
    "tan(0.3*x) - a*y/(2 + sin(t*x))",
]


@pytest.mark.parametrize("source", SOURCES)
def test_dual_matches_central_differences(source):
    e = parse(source, ["x", "y"], ["a"])
    rng = np.random.default_rng(7)
    for _ in range(20):
        y = rng.uniform(0.2, 2.0, 2)
        t = float(rng.uniform(0.0, 1.0))
        for seed in range(2):
            d = evaluate_dual(e, t, list(y), {"a": 0.8}, seed=seed)
            h = 1e-6 * max(1.0, abs(y[seed]))
            up, down = y.copy(), y.copy()
            up[seed] += h
            down[seed] -= h
            fd = (evaluate(e, t, list(up), {"a": 0.8}) - evaluate(e, t, list(down), {"a": 0.8})) / (2 * h)
            assert abs(d.deriv - fd) <= 1e-6 * max(1.0, abs(fd))


@pytest.mark.parametrize("source", SOURCES + ["-x^2", "2^-1", "-(-x)", "1e-05*x - .5"])
def test_canonical_printer_round_trips(source):
    e = parse(source, ["x", "y"], ["a"])
    again = parse(to_source(e), ["x", "y"], ["a"])
    assert again.root == e.root
    assert to_source(again) == to_source(e)


def test_evaluation_is_pure():
    e = parse("sin(x)*exp(y) - x/y", ["x", "y"])
    first = evaluate(e, 0.3, [0.4, 0.9])
    for _ in range(5):
        assert evaluate(e, 0.3, [0.4, 0.9]) == first


def test_vectorised_evaluation_matches_pointwise():
    e = parse("x*y - sin(t)", ["x", "y"])
    t = np.linspace(0.0, 1.0, 5)
    xs = np.linspace(1.0, 2.0, 5)
    ys = np.linspace(-1.0, 1.0, 5)
    vec = evaluate(e, t, [xs, ys])
    pointwise = [evaluate(e, float(t[i]), [float(xs[i]), float(ys[i])]) for i in range(5)]
    np.testing.assert_allclose(vec, pointwise, rtol=1e-14, atol=1e-15)
