import numpy as np
import pytest

from finslerkit import jets, lagrangian
from finslerkit.jets import SupportElement
from finslerkit.sampling import SampleSpec
from models import families, sigma_linear


def test_euclidean_validates():
    rep = lagrangian.validate_structure(lagrangian.euclidean(3), SampleSpec(count=20, seed=0))
    assert rep.passed
    assert rep["positive_definite"].details["min_value"] == pytest.approx(1.0)
    assert rep["homogeneity"].max_abs <= 1e-14


def test_quartic_degree_two_lagrangian_fails_homogeneity():
    # L^2 = sum y^4 makes L homogeneous of degree 2, so y.dL/dy - L = L
    model = lagrangian.custom(2, lambda x, y: y[0] ** 4 + y[1] ** 4)
    u = SampleSpec(count=10, seed=3).draw(2)
    rep = lagrangian.validate_structure(model, u)
    assert not rep["homogeneity"].passed
    lag = np.sqrt(u.y[:, 0] ** 4 + u.y[:, 1] ** 4)
    assert rep["homogeneity"].max_abs == pytest.approx(lag.max(), rel=1e-10)


def test_randers_admissibility():
    ok = lagrangian.randers(2, lambda x: [[1.0, 0.0], [0.0, 1.0]], lambda x: [0.5, 0.0])
    assert lagrangian.validate_structure(ok, SampleSpec(count=30, seed=1)).passed
    with pytest.warns(RuntimeWarning, match=r"\|b\|_a"):
        bad = lagrangian.randers(2, lambda x: [[1.0, 0.0], [0.0, 1.0]], lambda x: [1.5, 0.0])
    rep = lagrangian.validate_structure(bad, SampleSpec(count=30, seed=1))
    assert not rep["positive_definite"].passed
    assert not rep.passed


def test_randers_b_norm_on_grid():
    model = lagrangian.randers(2, lambda x: [[4.0, 0.0], [0.0, 1.0]], lambda x: [1.0, 0.0])
    assert lagrangian.randers_b_norm(model) == pytest.approx(0.5)


def test_constant_zero_lift_is_identity():
    model = lagrangian.euclidean(2)
    lifted = lagrangian.conformal_lift(model, lagrangian.constant_sigma(0.0))
    u = SampleSpec(count=5, seed=0).draw(2)
    np.testing.assert_allclose(lifted.energy_jet(u, 3).coeffs, model.energy_jet(u, 3).coeffs, atol=0)


def test_constant_lift_scales_metric():
    c = 0.35
    model, spec = families()["randers"]
    u = spec.with_seed(9).draw(3)
    lifted = lagrangian.conformal_lift(model, lagrangian.constant_sigma(c))
    ratio = lifted.energy_value(u.x, u.y) / model.energy_value(u.x, u.y)
    np.testing.assert_allclose(ratio, np.exp(2 * c), rtol=1e-14)


def test_linear_sigma_metric_on_euclidean():
    sigma = lagrangian.linear_sigma([1.0, 0.0])
    lifted = lagrangian.conformal_lift(lagrangian.euclidean(2), sigma)
    u = SupportElement(np.array([0.4, -1.0]), np.array([1.0, 2.0]))
    E = lifted.energy_jet(u, 2)
    g = np.array([[E.d(2 + i).d(2 + j).value for j in range(2)] for i in range(2)])
    np.testing.assert_allclose(g, np.exp(0.8) * np.eye(2), rtol=1e-14)


@pytest.mark.parametrize("name", list(families()))
def test_lift_metric_is_exp_two_sigma_times_base(name):
    model, spec = families()[name]
    sigma = sigma_linear(model.dim)
    u = spec.with_seed(11).draw(model.dim)
    n = model.dim
    base = model.energy_jet(u, 2)
    lift = lagrangian.conformal_lift(model, sigma).energy_jet(u, 2)
    gb = np.stack([np.stack([base.d(n + i).d(n + j).value for j in range(n)], -1) for i in range(n)], -2)
    gl = np.stack([np.stack([lift.d(n + i).d(n + j).value for j in range(n)], -1) for i in range(n)], -2)
    factor = np.exp(2 * sigma.value(u.x))[:, None, None]
    np.testing.assert_allclose(gl, factor * gb, rtol=1e-13, atol=1e-14)
    assert lagrangian.validate_structure(lagrangian.conformal_lift(model, sigma), u).passed


def test_scaled_model():
    model = lagrangian.scaled(lagrangian.sphere(), 4.0)
    u = SampleSpec(count=4, seed=2, low=0.5, high=1.0).draw(2)
    np.testing.assert_allclose(model.lagrangian_value(u.x, u.y), 2.0 * lagrangian.sphere().lagrangian_value(u.x, u.y))


def test_sigma_families():
    bump = lagrangian.gaussian_bump(0.4, [0.0, 0.0], 0.5)
    assert bump.value(np.array([0.0, 0.0])) == pytest.approx(0.4)
    assert bump.value(np.array([5.0, 5.0])) < 1e-80
    assert lagrangian.constant_sigma(1.0).is_constant()
    lin = lagrangian.linear_sigma([2.0, -1.0], 0.5)
    np.testing.assert_allclose(lin.value(np.array([[1.0, 1.0], [0.0, 2.0]])), [1.5, -1.5])
    # sigma jets carry no fiber dependence
    u = SupportElement(np.array([0.1, 0.2]), np.array([1.0, 0.0]))
    J = bump.jet(u, 3)
    assert J.d(2).coeffs.max() == 0.0 and J.d(3).coeffs.max() == 0.0


def test_evaluation_failure_is_recorded():
    model = lagrangian.custom(1, lambda x, y: jets.log(x[0]) * y[0] * y[0])
    rep = lagrangian.validate_structure(model, SupportElement(np.array([[0.0], [2.0]]), np.array([[1.0], [1.0]])))
    assert not rep.passed
    assert rep.details["failures"]
