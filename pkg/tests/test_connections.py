import numpy as np
import pytest

from finslerkit import connections, lagrangian
from finslerkit.jets import JetOrderError, SupportElement
from finslerkit.geometry import LocalGeometry
from models import families
from oracles import christoffel_fd


def test_euclidean_connection_is_flat():
    model, spec = families()["euclidean"]
    u = spec.draw(3)
    bar = connections.barthel(model, u)
    cart = connections.cartan_coeffs(model, u)
    for block in (bar.G, bar.G_i, bar.G_ij, cart.h_coeffs, cart.v_coeffs):
        assert np.abs(block).max() == 0.0


def test_sphere_spray_values():
    theta = np.pi / 4
    u = SupportElement(np.array([[theta, 0.0], [np.pi / 2, 0.0]]), np.array([[1.0, 1.0], [0.0, 1.0]]))
    G = connections.spray(lagrangian.sphere(), u).G
    # G^h = 1/2 Gamma^h_ij y^i y^j with Gamma^t_pp = -sin cos, Gamma^p_tp = cot
    np.testing.assert_allclose(G[0], [-0.25, 1.0], atol=1e-14)
    np.testing.assert_allclose(G[1], [0.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("name", list(families()))
def test_homogeneity_and_deflection(name):
    model, spec = families()[name]
    u = spec.with_seed(31).draw(model.dim)
    assert connections.barthel(model, u).homogeneity_residual().max() <= 1e-10
    assert connections.cartan_coeffs(model, u).deflection_residual().max() <= 1e-10
    assert connections.berwald_coeffs(model, u).deflection_residual().max() <= 1e-10
    np.testing.assert_allclose(
        connections.spray(model, u).G, connections.spray_from_christoffel(model, u), rtol=1e-11, atol=1e-12
    )


@pytest.mark.parametrize("name", ["sphere", "riemannian"])
def test_riemannian_coefficients_match_levi_civita(name):
    model, spec = families()[name]
    u = spec.with_seed(6).draw(model.dim)[:10]
    cart = connections.cartan_coeffs(model, u)
    metric = model.params["metric"]
    for k in range(len(u)):
        fd = christoffel_fd(metric, u.x[k])
        assert np.abs(cart.h_coeffs[k] - fd).max() <= 1e-8 * max(1.0, np.abs(fd).max())
        np.testing.assert_allclose(connections.berwald_coeffs(model, u[k]).h_coeffs, cart.h_coeffs[k], atol=1e-12)


@pytest.mark.parametrize("name", list(families()))
def test_cartan_metric_compatibility(name):
    model, spec = families()[name]
    u = spec.with_seed(12).draw(model.dim)[:20]
    h = connections.covariant_derivative(model, "g", "h-cartan", u)
    v = connections.covariant_derivative(model, "g", "v-cartan", u)
    assert h.variance == "lll"
    assert np.abs(h.components).max() <= 1e-10
    assert np.abs(v.components).max() <= 1e-12


@pytest.mark.parametrize("name", list(families()))
def test_berwald_cartan_identity(name):
    model, spec = families()[name]
    u = spec.with_seed(13).draw(model.dim)[:30]
    assert connections.berwald_cartan_defect(model, u).max() <= 1e-8


def test_covariant_derivative_of_user_fields():
    model, spec = families()["randers"]
    u = spec.draw(3)[:5]
    const = connections.covariant_derivative(model, lambda x, y: 3.0, "v-cartan", u)
    assert np.abs(const.components).max() == 0.0
    # the y field is horizontally parallel for the Cartan connection (deflection)
    dy = connections.covariant_derivative(model, "y", "h-cartan", u)
    assert np.abs(dy.components).max() <= 1e-10
    # and its vertical derivative is the identity
    vy = connections.covariant_derivative(model, "y", "v-cartan", u)
    np.testing.assert_allclose(vy.components, np.broadcast_to(np.eye(3), vy.components.shape), atol=1e-12)
    with pytest.raises(ValueError):
        connections.covariant_derivative(model, lambda x, y: [x[0], y[0], 1.0], "h-cartan", u)
    with pytest.raises(ValueError):
        connections.covariant_derivative(model, "g", "sideways", u)


def test_homothety_leaves_connections_unchanged():
    model, spec = families()["custom"]
    u = spec.draw(2)
    a = connections.cartan_coeffs(model, u)
    b = connections.cartan_coeffs(lagrangian.scaled(model, 3.7), u)
    np.testing.assert_allclose(b.h_coeffs, a.h_coeffs, atol=1e-12)
    np.testing.assert_allclose(b.v_coeffs, a.v_coeffs, atol=1e-12)
    np.testing.assert_allclose(b.barthel, a.barthel, atol=1e-12)


def test_connection_needs_order_four():
    model, spec = families()["custom"]
    geo = LocalGeometry(model, spec.draw(2), order=3)
    # the Barthel coefficients need order 3 only
    assert geo.G_i.value.shape == (100, 2, 2)
    with pytest.raises(JetOrderError):
        connections.cartan_coeffs(geo)
