import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daeobs.expr import (ExprDomainError, ExprError, ExprSyntaxError, VectorFunction,
                         differentiate, estimate_lipschitz_margin, estimate_monotonicity_margin,
                         functions_used, parse, to_string, variables)


def scalar(text, **vals):
    dims = {"x": 3, "u": 2, "y": 2, "w": 2, "t": 1}
    f = VectorFunction([text], dims)
    args = {k: np.asarray(vals.get(k, np.zeros(n)), float) for k, n in dims.items() if k != "t"}
    return float(f(**args, t=vals.get("t", 0.0))[0])


@pytest.mark.parametrize("text,value", [
    ("-x1^2", -4.0),
    ("x1^2^3", 2.0 ** 8),
    ("2*x1 - 3/x1", 4 - 1.5),
    ("-(x1 - x2)", -1.0),
    ("sin(x1)^2 + cos(x1)^2", 1.0),
    ("exp(log(x1))", 2.0),
    ("sign(-x1) + abs(-x1)", 1.0),
    ("tanh(0) + sqrt(x1*x1)", 2.0),
    ("1e-3*x1", 2e-3),
    ("2 - 3 - 4", -5.0),
    ("8 / 4 / 2", 1.0),
])
def test_precedence_and_values(text, value):
    assert scalar(text, x=[2.0, 1.0, 0.0]) == pytest.approx(value, rel=1e-14)


def test_time_and_blocks():
    assert scalar("t*u2 + y1 - w2", t=2.0, u=[0, 3], y=[1, 0], w=[0, 4]) == pytest.approx(3.0)


@pytest.mark.parametrize("text", ["x1 +", "(x1", "x1 x2", "foo(x1)", "x0", "2 ** 3", "x1)", ""])
def test_syntax_errors(text):
    with pytest.raises(ExprError):
        VectorFunction([text], {"x": 2})


def test_syntax_error_is_expr_error():
    with pytest.raises(ExprSyntaxError):
        parse("x1 + * 2")


def test_undeclared_variable_rejected():
    with pytest.raises(ExprError, match="not declared"):
        VectorFunction(["x3"], {"x": 2})
    with pytest.raises(ExprError):
        VectorFunction(["u1"], {"x": 2})


@pytest.mark.parametrize("text,x", [("log(x1)", 0.0), ("1/x1", 0.0), ("sqrt(x1)", -1.0),
                                    ("x1^0.5", -2.0), ("exp(x1)", 1e4)])
def test_domain_errors(text, x):
    with pytest.raises(ExprDomainError):
        scalar(text, x=[x, 0, 0])


def test_round_trip_text():
    for text in ["-x1^2", "(x1 + x2)*x3", "x1 - (x2 - x3)", "x1/(x2*x3)", "(-x1)^2",
                 "sin(x1 + 2)^3", "x1^(x2^2)", "(x1^x2)^2"]:
        e = parse(text)
        assert parse(to_string(e)) == e


def test_inspection():
    e = parse("sin(x1)*abs(y2) + t")
    assert variables(e) == {"x1", "y2", "t"}
    assert functions_used(e) == {"sin", "abs"}


def test_symbolic_derivatives():
    assert scalar(to_string(differentiate(parse("x1^3 - x1"), "x1")), x=[2, 0, 0]) == 11.0
    d = differentiate(parse("sin(x1*x2)"), "x2")
    assert scalar(to_string(d), x=[2, 0.5, 0]) == pytest.approx(2 * math.cos(1.0))
    assert to_string(differentiate(parse("x2 + 4"), "x1")) == "0"


def test_jacobian_shapes():
    f = VectorFunction(["x1*x2", "u1"], {"x": 2, "u": 1})
    Jx = f.jacobian("x", x=np.array([2.0, 3.0]), u=np.array([1.0]))
    assert Jx.shape == (2, 2)
    assert np.allclose(Jx, [[3, 2], [0, 0]])
    assert np.allclose(f.jacobian("u", x=np.zeros(2), u=np.zeros(1)), [[0], [1]])
    assert f.jacobian("y").shape == (2, 0)


SMOOTH = ["x1^3 - x1*x2", "sin(x1)*exp(-x2^2)", "tanh(x1 + 2*x3) / (1 + x2^2)",
          "cos(x1*x2*x3)", "(x1 - x3)^2*x2", "exp(x1/3)*cos(x2) - x3^4/10"]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(SMOOTH), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_jacobian_matches_finite_differences(text, x):
    f = VectorFunction([text], {"x": 3})
    x = np.array(x)
    J = f.jacobian("x", x=x)[0]
    h = 1e-6
    fd = np.array([(f(x=x + h * e)[0] - f(x=x - h * e)[0]) / (2 * h) for e in np.eye(3)])
    assert np.allclose(J, fd, atol=1e-6 * max(1.0, np.abs(fd).max()))


def test_lipschitz_estimate():
    f = VectorFunction(["sin(x1)"], {"x": 2})
    assert 0.9 < estimate_lipschitz_margin(f, [[1.0, 0.0]]) <= 1.0 + 1e-9
    assert estimate_lipschitz_margin(f, [[0.5, 0.0]]) > 1.0
    assert estimate_lipschitz_margin(f, [[0.0, 1.0]]) > 1.0
    assert estimate_lipschitz_margin(f, [[0.0, 0.0]]) == math.inf


def test_monotonicity_estimate():
    f = VectorFunction(["w1^3"], {"w": 1})
    assert estimate_monotonicity_margin(f, [[1.0]], 0.0) >= 0
    assert estimate_monotonicity_margin(f, [[1.0]], 1.0) < 0
    g = VectorFunction(["-w1"], {"w": 1})
    assert estimate_monotonicity_margin(g, [[1.0]], 0.0) < 0
