import pytest
from gmpy2 import mpq
from hypothesis import given, strategies as st

from magbnf.expr import ExprError, parse_poly
from magbnf.poly import Poly
from magbnf.surd import Surd

NAMES = ["q1", "q2", "q3"]
small = st.fractions(min_value=-5, max_value=5, max_denominator=7)


def test_parse_rational_and_decimal_literals():
    p = parse_poly("3/4*q1^2 - 0.25*q2 + 1e-2", NAMES)
    assert p.terms == {(2, 0, 0): mpq(3, 4), (0, 1, 0): mpq(-1, 4), (0, 0, 0): mpq(1, 100)}


def test_parse_power_and_parentheses():
    p = parse_poly("(q1 + q2)^2", NAMES)
    assert p == parse_poly("q1^2 + 2*q1*q2 + q2^2", NAMES)
    assert parse_poly("q1**3", NAMES) == parse_poly("q1*q1*q1", NAMES)


@pytest.mark.parametrize("text", ["q1/q2", "q1^(1/2)", "q1^-1", "sin(q1)", "q4 + 1"])
def test_non_polynomial_input_rejected(text):
    with pytest.raises(ExprError):
        parse_poly(text, NAMES)


def test_error_reports_column():
    with pytest.raises(ExprError) as info:
        parse_poly("q1 + $", NAMES)
    assert info.value.column == 6


def test_derivative_is_exact():
    p = parse_poly("q1^3*q2/3 - q2^2", NAMES)
    assert p.diff(0) == parse_poly("q1^2*q2", NAMES)
    assert p.diff(1).diff(1) == Poly.const(3, mpq(-2))


@given(small, small, small)
def test_evaluation_matches_exact_arithmetic(a, b, c):
    p = parse_poly("q1^2*q2 - 7/3*q3 + q1*q2*q3 + 2", NAMES)
    x = [mpq(a.numerator, a.denominator), mpq(b.numerator, b.denominator), mpq(c.numerator, c.denominator)]
    expected = x[0] ** 2 * x[1] - mpq(7, 3) * x[2] + x[0] * x[1] * x[2] + 2
    assert p.evaluate(tuple(x)) == expected


@given(st.lists(small, min_size=3, max_size=3), st.lists(small, min_size=3, max_size=3))
def test_product_rule(u, v):
    p = Poly(2, {(1, 0): mpq(u[0]), (0, 2): mpq(u[1]), (1, 1): mpq(u[2])})
    q = Poly(2, {(0, 0): mpq(v[0]), (2, 1): mpq(v[1]), (0, 1): mpq(v[2])})
    assert (p * q).diff(0) == p.diff(0) * q + p * q.diff(0)


@given(small, small, small, small)
def test_surd_field_operations(a, b, c, d):
    x = Surd(mpq(a), mpq(b))
    y = Surd(mpq(c), mpq(d))
    assert (x + y) - y == x
    assert x * y == y * x
    if y:
        assert (x / y) * y == x
    assert float(x * y) == pytest.approx(float(x) * float(y), abs=1e-12)


def test_surd_sqrt2_squares_to_two():
    r = Surd.sqrt(2)
    assert r * r == 2
    assert Surd(1, 1) > Surd(2, 0)
    with pytest.raises(TypeError):
        Surd(0.5, 1)
