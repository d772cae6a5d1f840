import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finslerkit import jets
from finslerkit.jets import (
    Jet,
    JetDomainError,
    JetMismatchError,
    JetOrderError,
    SupportElement,
    contract,
    jet_arithmetic,
    jet_eval,
    monomials,
)
from oracles import fd_coefficients


def site(x, y):
    return SupportElement(np.asarray(x, float), np.asarray(y, float))


def test_monomials_graded_prefix():
    low = monomials(4, 3)
    high = monomials(4, 5)
    assert high[: len(low)] == low
    assert len(high) == math.comb(9, 5)
    degrees = [sum(m) for m in high]
    assert degrees == sorted(degrees)


def test_constant_field():
    u = site([0.1, -0.4], [1.0, 2.0])
    J = jet_eval(lambda x, y: 7.0, u, 2)
    assert J.value == 7.0
    assert np.all(J.coeffs[1:] == 0.0)


def test_bilinear_monomial():
    u = site([0.0, 0.0], [1.0, 2.0])
    J = jet_eval(lambda x, y: y[0] * y[1], u, 2)
    assert J.value == pytest.approx(2.0)
    assert J.coeff((0, 0, 1, 1)) == pytest.approx(1.0)
    assert J.coeff((0, 0, 2, 0)) == 0.0
    assert J.coeff((0, 0, 1, 0)) == pytest.approx(2.0)


def test_exp_times_square_against_fd():
    u = site([0.3, 0.0], [1.5, 0.2])

    def f(x, y):
        return jets.exp(x[0]) * y[0] * y[0]

    J = jet_eval(f, u, 4)
    assert J.coeff((1, 0, 2, 0)) == pytest.approx(2 * math.exp(0.3), rel=1e-14)

    def plain(z):
        return np.exp(z[..., 0]) * z[..., 2] ** 2

    fd, _ = fd_coefficients(plain, np.concatenate([u.x, u.y])[None], 4)
    scale = np.maximum(1.0, np.abs(J.coeffs))
    assert np.max(np.abs(fd[0] - J.coeffs) / scale) <= 1e-5


def test_product_of_sum_and_difference():
    # (x + y)(x - y) = x^2 - y^2 in one base and one fiber variable
    u = site([1.0], [2.0])
    a = jet_eval(lambda x, y: x[0] + y[0], u, 3)
    b = jet_eval(lambda x, y: x[0] - y[0], u, 3)
    p = jet_arithmetic(a, b, "mul")
    assert p.value == pytest.approx(1.0 - 4.0)
    assert p.coeff((1, 0)) == pytest.approx(2.0)
    assert p.coeff((0, 1)) == pytest.approx(-4.0)
    assert p.coeff((2, 0)) == pytest.approx(2.0)
    assert p.coeff((0, 2)) == pytest.approx(-2.0)
    assert p.coeff((1, 1)) == 0.0
    assert np.all(p.coeffs[6:] == 0.0)


def test_reciprocal_identity_and_cancellation():
    u = site([0.2, 0.7], [0.4, -1.1])
    f = jet_eval(lambda x, y: 2.0 + jets.sin(x[0] * y[1]) + y[0] * y[0], u, 5)
    one = jet_arithmetic(f, jet_arithmetic(f, None, "reciprocal"), "mul")
    assert one.value == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(one.coeffs[1:])) <= 1e-12
    zero = jet_arithmetic(f, jet_arithmetic(f, None, "scale", factor=-1.0), "add")
    assert np.max(np.abs(zero.coeffs)) == 0.0


def test_strict_arithmetic_rejects_mismatch():
    u = site([0.0], [1.0])
    v = site([0.5], [1.0])
    a = jet_eval(lambda x, y: x[0] + y[0], u, 3)
    with pytest.raises(JetMismatchError):
        jet_arithmetic(a, jet_eval(lambda x, y: x[0], u, 2), "add")
    with pytest.raises(JetMismatchError):
        jet_arithmetic(a, jet_eval(lambda x, y: x[0], v, 3), "mul")
    with pytest.raises(JetDomainError):
        jet_arithmetic(jet_eval(lambda x, y: x[0] * y[0], site([0.0], [1.0]), 2), None, "reciprocal")


def test_domain_error_names_multi_index():
    u = site([0.0], [1.0])
    with pytest.raises(JetDomainError) as info:
        jet_eval(lambda x, y: jets.log(x[0]), u, 2)
    assert info.value.multi_index is not None


def test_order_exhaustion():
    u = site([0.0], [1.0])
    J = jet_eval(lambda x, y: x[0] * y[0], u, 1)
    with pytest.raises(JetOrderError):
        J.d(0).d(1)
    with pytest.raises(JetOrderError):
        J.coeff((1, 1))


def test_env_order(monkeypatch):
    monkeypatch.setenv("FINSLER_MAX_JET_ORDER", "3")
    assert jets.max_jet_order() == 3
    J = jet_eval(lambda x, y: y[0], site([0.0], [1.0]))
    assert J.order == 3
    monkeypatch.delenv("FINSLER_MAX_JET_ORDER")
    assert jets.max_jet_order() == 6


def test_zero_section_rejected():
    with pytest.raises(ValueError):
        site([0.0, 0.0], [0.0, 0.0])


def test_batched_matches_single():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 2))
    y = rng.normal(size=(5, 2))

    def f(x, y):
        return jets.exp(x[0] * 0.3) * jets.sqrt(y[0] * y[0] + 2 * y[1] * y[1]) + x[1] * y[0]

    batch = jet_eval(f, SupportElement(x, y), 4)
    for k in range(5):
        single = jet_eval(f, SupportElement(x[k], y[k]), 4)
        np.testing.assert_array_equal(batch.coeffs[k], single.coeffs)


def test_contract_matches_componentwise_products():
    u = site([0.1, 0.2], [0.3, 1.0])
    xs, ys = jets.variables(u, 3)
    A = Jet.stack([Jet.stack([xs[0] * ys[1], ys[0]]), Jet.stack([xs[1], ys[0] * ys[0]])])
    v = Jet.stack(ys)
    Av = contract("ij,j->i", A, v)
    first = xs[0] * ys[1] * ys[0] + ys[0] * ys[1]
    np.testing.assert_allclose(Av[0].coeffs, first.coeffs, atol=1e-14)


def test_inverse_matrix_jet():
    u = site([0.4, -0.2], [1.0, 0.5])
    xs, ys = jets.variables(u, 4)
    g = Jet.stack([Jet.stack([2.0 + xs[0] * ys[0], xs[1]]), Jet.stack([xs[1], 1.0 + ys[1] * ys[1]])])
    ginv = jets.inverse_matrix(g)
    eye = contract("ij,jk->ik", g, ginv)
    assert np.max(np.abs(eye.value - np.eye(2))) <= 1e-14
    assert np.max(np.abs(eye.coeffs[..., 1:])) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4),
    st.lists(st.integers(-3, 3), min_size=6, max_size=6),
)
def test_polynomial_exactness(point, c):
    """A degree-4 polynomial has an exact order-4 jet (compared with the hand expansion)."""
    u = site(point[:2], [point[2] + 2.0, point[3] - 2.0])

    def f(x, y):
        return c[0] * x[0] ** 2 * y[0] ** 2 + c[1] * x[1] * y[1] ** 3 + c[2] * y[0] * y[1] + c[3] * x[0] + c[4] + c[5] * x[1] ** 4

    J = jet_eval(f, u, 4)
    x1, x2, y1, y2 = u.x[0], u.x[1], u.y[0], u.y[1]
    expected = {
        (0, 0, 0, 0): f([x1, x2], [y1, y2]),
        (1, 0, 1, 0): 4 * c[0] * x1 * y1,
        (0, 1, 0, 2): 6 * c[1] * y2,
        (0, 0, 1, 1): c[2],
        (0, 4, 0, 0): 24 * c[5],
        (2, 0, 2, 0): 4 * c[0],
        (0, 1, 0, 3): 6 * c[1],
        (1, 0, 0, 0): 2 * c[0] * x1 * y1**2 + c[3],
    }
    for mi, val in expected.items():
        assert J.coeff(mi) == pytest.approx(val, abs=1e-12 * max(1.0, abs(val)))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=6, max_size=6))
def test_clairaut_symmetry(p):
    """Differentiating in either order lands on the same stored coefficient."""
    u = site(p[:3], [p[3] + 1.5, p[4], p[5] - 1.5])

    def f(x, y):
        return jets.sin(x[0] * y[1]) * jets.exp(x[2] * y[0]) + jets.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])

    J = jet_eval(f, u, 4)
    for a, b in [(0, 4), (2, 3), (1, 5)]:
        np.testing.assert_array_equal(J.d(a).d(b).coeffs, J.d(b).d(a).coeffs)
