from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from herglotz import expr as ex


def ev(src, t, *x):
    return float(ex.evaluate(ex.parse(src), np.float64(t), np.array(x, float)))


def test_polynomial_value():
    assert ev("0.5*x1^2", 0.0, 2.0) == 2.0


def test_time_derivative_matches_fd():
    node = ex.parse("sin(x1)*exp(-t)")
    d = ex.diff(node, "t")
    x = np.array([math.pi / 2])
    got = float(ex.evaluate(d, 0.0, x))
    h = 1e-6
    fd = (float(ex.evaluate(node, h, x)) - float(ex.evaluate(node, -h, x))) / (2 * h)
    assert got == pytest.approx(-1.0, abs=1e-12)
    assert got == pytest.approx(fd, abs=1e-8)


def test_dangling_operator_offset():
    with pytest.raises(ex.ExprSyntaxError) as info:
        ex.parse("x1+")
    assert info.value.offset == 3


def test_unknown_identifier_and_arity():
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse("foo(x1)")
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse("y")
    with pytest.raises(ex.ExpressionError):
        ex.parse("sin(x1, x2)")
    with pytest.raises(ex.ExpressionError):
        ex.parse("sin")


def test_unary_minus_binds_tighter_than_power():
    assert ev("-x1^2", 0.0, 3.0) == 9.0
    assert ev("2^3^2", 0.0, 0.0) == 2.0 ** 9


def test_exponent_literals():
    assert ev("1.5e2 + 2E-1", 0, 0) == pytest.approx(150.2)


def test_nonsmooth_derivative_raises():
    d = ex.diff(ex.parse("abs(x1)"), "x1")
    with pytest.raises(ex.NonSmoothPointError):
        ex.evaluate(d, 0.0, np.array([0.0]))
    d = ex.diff(ex.parse("sqrt(x1)"), "x1")
    with pytest.raises(ex.NonSmoothPointError):
        ex.evaluate(d, 0.0, np.array([0.0]))
    assert float(ex.evaluate(d, 0.0, np.array([4.0]))) == pytest.approx(0.25)


def test_max_index_and_variables():
    node = ex.parse("x3*t + cos(x1)")
    assert ex.max_x_index(node) == 3
    assert ex.variables(node) == {"x1", "x3", "t"}


SOURCES = ["0.5*x1^2", "sin(x1)*exp(-t)", "x1*sin(t)", "0.5*x1^2*(1+t)", "-x1^2/(1+x2^2)",
           "tanh(x1-x2)*cos(t)", "sqrt(1+x1^2)", "abs(x2)+x1/2", "exp(-(x1^2+x2^2))", "(x1-1)^3 - 2*t"]


@pytest.mark.parametrize("src", SOURCES)
def test_round_trip(src):
    node = ex.parse(src)
    assert ex.parse(ex.to_string(node)) == node


# random expression trees
_leaf = st.one_of(st.sampled_from(["t", "x1", "x2"]), st.floats(0.1, 9.0).map(lambda v: f"{v:.3g}"))


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from("+-*"), children).map(lambda a: f"({a[0]}){a[1]}({a[2]})"),
        st.tuples(st.sampled_from(["sin", "cos", "tanh", "exp"]), children).map(lambda a: f"{a[0]}(({a[1]})/10)"),
        children.map(lambda a: f"-({a})"),
        children.map(lambda a: f"({a})^2"),
    )


exprs = st.recursive(_leaf, _combine, max_leaves=8)


@settings(max_examples=60, deadline=None)
@given(exprs)
def test_round_trip_property(src):
    node = ex.parse(src)
    assert ex.parse(ex.to_string(node)) == node


@settings(max_examples=60, deadline=None)
@given(exprs, st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_symbolic_derivatives_match_fd(src, t, x1, x2):
    node = ex.parse(src)
    x = np.array([x1, x2])
    h = 1e-5
    for var in ("t", "x1", "x2"):
        d = float(ex.evaluate(ex.diff(node, var), t, x))
        if var == "t":
            lo, hi = ex.evaluate(node, t - h, x), ex.evaluate(node, t + h, x)
        else:
            k = int(var[1]) - 1
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            lo, hi = ex.evaluate(node, t, xm), ex.evaluate(node, t, xp)
        fd = (float(hi) - float(lo)) / (2 * h)
        if not (math.isfinite(fd) and math.isfinite(d)) or abs(d) > 1e8:
            continue
        assert d == pytest.approx(fd, rel=1e-6, abs=1e-6 * (1 + abs(float(ex.evaluate(node, t, x)))))
