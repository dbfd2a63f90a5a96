import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecstab.poly import (
    PolyParseError,
    Polynomial,
    Universe,
    UniverseMismatch,
    add,
    binomial_count,
    evaluate,
    gradient,
    lie_derivative,
    monomial_basis,
    mul,
    parse,
)

U = Universe(["x", "y", "z"])
x, y, z = U.vars(["x", "y", "z"])

coef = st.floats(min_value=-5, max_value=5, allow_nan=False).map(lambda c: round(c, 3))
monos = st.lists(st.integers(0, 2), min_size=3, max_size=3)


@st.composite
def polys(draw, max_terms=5):
    terms = {}
    for exps in draw(st.lists(monos, max_size=max_terms)):
        m = tuple((i, e) for i, e in enumerate(exps) if e)
        terms[m] = terms.get(m, 0.0) + draw(coef)
    return Polynomial(U, terms)


def close(p, q, tol=1e-12):
    scale = 1.0 + max(p.max_abs_coeff(), q.max_abs_coeff())
    return (p - q).max_abs_coeff() <= tol * scale


# -- arithmetic examples -------------------------------------------------------

def test_add_cancels():
    assert add(x ** 2 + 1, -(x ** 2)) == Polynomial.constant(U, 1.0)


def test_add_zero_identity():
    p = 3 * x * y - z
    assert p + Polynomial.zero(U) == p


def test_add_collects():
    assert (x + y) + (x - y) == 2 * x


def test_mul_difference_of_squares():
    assert mul(x + y, x - y) == x ** 2 - y ** 2


def test_mul_one_identity():
    p = 2 * x ** 3 - y
    assert p * Polynomial.constant(U, 1.0) == p


def test_square_expansion():
    assert (x ** 2 - y ** 2) ** 2 == x ** 4 - 2 * x ** 2 * y ** 2 + y ** 4


def test_cross_universe_is_error():
    other = Universe(["x", "w"]).var("x")
    with pytest.raises(UniverseMismatch):
        x + other
    with pytest.raises(UniverseMismatch):
        x * other


def test_zero_coefficients_dropped():
    p = Polynomial(U, {((0, 1),): 1e-14, ((1, 1),): 2.0})
    assert p.terms == {((1, 1),): 2.0}


# -- evaluation ----------------------------------------------------------------

def test_evaluate_example():
    assert evaluate(x ** 2 + 2 * x * y, {"x": 1, "y": 2}) == 5


def test_evaluate_origin_gives_constant():
    p = 3 * x ** 2 - 4 * y * z + 7.5
    assert p.evaluate({"x": 0, "y": 0, "z": 0}) == 7.5


def test_evaluate_missing_variable():
    with pytest.raises(KeyError, match="y"):
        (x + y).evaluate({"x": 1.0})


def test_evaluate_matches_termwise_oracle(rng):
    W = Universe(["a", "b", "c", "d"])
    basis = monomial_basis(range(4), 4)
    coeffs = rng.normal(size=len(basis))
    p = Polynomial.from_monomials(W, basis, coeffs)
    pts = rng.uniform(-2, 2, size=(100, 4))
    oracle = np.array([sum(c * math.prod(pt[i] ** e for i, e in m) for m, c in zip(basis, coeffs)) for pt in pts])
    direct = np.array([p.evaluate(dict(zip(W.names, pt))) for pt in pts])
    vec = p.evaluate_array(pts)
    assert np.allclose(direct, oracle, rtol=1e-12, atol=1e-12)
    assert np.allclose(vec, oracle, rtol=1e-12, atol=1e-12)


# -- calculus ------------------------------------------------------------------

def test_gradient_examples():
    assert gradient(x ** 2 + y ** 2, ["x", "y"]) == [2 * x, 2 * y]
    assert gradient(Polynomial.constant(U, 4.0), ["x", "y"]) == [Polynomial.zero(U)] * 2


def test_gradient_central_differences(rng):
    p = 0.3 * x ** 4 - x * y * z + 2 * y ** 3 - z ** 2 + x
    grad = gradient(p, ["x", "y", "z"])
    h = 1e-5
    for pt in rng.uniform(-1, 1, size=(20, 3)):
        for k, g in enumerate(grad):
            e = np.zeros(3)
            e[k] = h
            fd = (p.evaluate_array(pt + e)[0] - p.evaluate_array(pt - e)[0]) / (2 * h)
            assert abs(fd - g.evaluate_array(pt)[0]) <= 1e-6


def test_lie_derivative_examples():
    assert lie_derivative(x ** 2, [-x], ["x"]) == -2 * x ** 2
    assert lie_derivative(x ** 2 + y ** 2, [y, -x], ["x", "y"]).is_zero()


def test_lie_derivative_length_mismatch():
    with pytest.raises(ValueError):
        lie_derivative(x ** 2, [x, y], ["x"])


def test_lie_derivative_along_trajectory(seed1, seed1_lfs):
    from vecstab.sim import integrate

    net, _ = seed1
    lf = seed1_lfs[1]
    idx = net.state_indices(1)
    vd = lie_derivative(lf.V, list(net.subsystem(1).f), idx)
    x0 = np.zeros(len(net.universe))
    x0[idx] = [0.3, -0.2]
    from vecstab.model import Network

    solo = Network(net.universe, [net.subsystem(1)], [])
    dt = 1e-4
    tr = integrate(solo, x0, T=20 * dt, dt=dt)
    V = lf.V.evaluate_array(tr.states[:, 0, :])
    k = 10
    numeric = (V[k + 1] - V[k - 1]) / (2 * dt)
    assert abs(numeric - vd.evaluate_array(tr.states[k, 0])[0]) <= 1e-6


# -- monomial bases ------------------------------------------------------------

def test_monomial_basis_examples():
    assert monomial_basis([0, 1], 1, 0) == [(), ((0, 1),), ((1, 1),)]
    assert monomial_basis([0], 2, 2) == [((0, 2),)]
    assert len(monomial_basis(range(4), 3, 0)) == 35


@pytest.mark.parametrize("n", range(1, 7))
def test_monomial_basis_count_closed_form(n):
    for d in range(7):
        assert len(monomial_basis(range(n), d, 0)) == binomial_count(n, d)
        assert len(monomial_basis(range(n), d, d)) == math.comb(n + d - 1, d)


def test_monomial_basis_rejects_negative_degree():
    with pytest.raises(ValueError):
        monomial_basis([0], 2, -1)


# -- text form -----------------------------------------------------------------

def test_parse_example():
    W = Universe(["x1", "x2"])
    p = parse("3.5*x1^2*x2 - 1.0", W)
    a, b = W.vars(["x1", "x2"])
    assert p == 3.5 * a ** 2 * b - 1.0


def test_parse_parentheses_and_unary_minus():
    assert parse("-(x + y)^2 + 2*x*y", U) == -(x ** 2) - y ** 2


def test_print_is_canonical():
    p = parse("1 + y - 2*x^2 + x*y", U)
    assert p.to_text() == "-2.0*x^2 + x*y + y + 1.0"
    assert parse(p.to_text(), U).to_text() == p.to_text()


def test_parse_unknown_variable_names_it():
    with pytest.raises(PolyParseError, match="unknown variable 'w' at column 5"):
        parse("x + w", U)


def test_parse_error_reports_column():
    with pytest.raises(PolyParseError) as exc:
        parse("x + $y", U)
    assert exc.value.pos == 4
    assert "column 5" in str(exc.value)


# -- properties ----------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(polys(), polys(), polys())
def test_ring_axioms(p, q, r):
    assert close(p + q, q + p)
    assert close(p * q, q * p)
    assert close((p + q) + r, p + (q + r))
    assert close((p * q) * r, p * (q * r))
    assert close(p * (q + r), p * q + p * r)


@settings(max_examples=60, deadline=None)
@given(polys())
def test_normalize_idempotent(p):
    assert p.normalize().normalize() == p.normalize()


@settings(max_examples=60, deadline=None)
@given(polys())
def test_text_round_trip_exact(p):
    assert parse(p.to_text(), U) == p
