import csv
import json

import numpy as np
import pytest

from finslerkit import dynamics, jets, lagrangian
from finslerkit.dynamics import NotAGeodesicError
from models import randers3, sigma_bump


def test_euclidean_straight_line():
    traj = dynamics.geodesic_integrate(lagrangian.euclidean(2), [0.0, 0.0], [1.0, 0.0], (0.0, 1.0), 1e-2)
    assert traj.complete and traj.reason is None
    assert len(traj.t) == 101 and traj.t[-1] == pytest.approx(1.0)
    np.testing.assert_allclose(traj.x[-1], [1.0, 0.0], atol=1e-10)
    assert traj.drift == 0.0


def test_randers_conserves_the_lagrangian():
    traj = dynamics.geodesic_integrate(randers3(), [0.1, -0.2, 0.3], [0.6, 0.3, -0.2], (0.0, 1.0), 1e-2)
    assert traj.complete
    assert traj.drift <= 1e-8
    assert np.abs(traj.x[-1] - traj.x[0]).max() > 0.1


def test_sphere_equator_is_a_geodesic():
    traj = dynamics.geodesic_integrate(lagrangian.sphere(), [np.pi / 2, 0.0], [0.0, 1.0], (0.0, 2.0), 1e-2)
    np.testing.assert_allclose(traj.x[:, 0], np.pi / 2, atol=1e-14)
    np.testing.assert_allclose(traj.x[:, 1], traj.t, atol=1e-12)


def test_zero_section_is_refused():
    with pytest.raises(ValueError, match="zero section"):
        dynamics.geodesic_integrate(lagrangian.euclidean(2), [0.0, 0.0], [0.0, 0.0], (0.0, 1.0), 0.1)
    with pytest.raises(ValueError):
        dynamics.geodesic_integrate(lagrangian.euclidean(2), [0.0, 0.0], [1.0, 0.0], (0.0, 1.0), -0.1)


def test_run_truncates_when_the_model_breaks_down():
    # the metric needs x1 > 0; the curve walks out of the domain
    model = lagrangian.riemannian(2, lambda x: [[jets.sqrt(x[0]), 0.0], [0.0, 1.0]])
    traj = dynamics.geodesic_integrate(model, [0.3, 0.0], [-1.0, 0.0], (0.0, 1.0), 1e-2)
    assert not traj.complete
    assert traj.reason
    assert traj.t[-1] < 1.0
    assert np.all(traj.x[:, 0] > 0)


def test_jacobi_on_euclidean_space_is_affine():
    model = lagrangian.euclidean(2)
    geo = dynamics.geodesic_integrate(model, [0.0, 0.0], [1.0, 0.5], (0.0, 1.0), 1e-2)
    field = dynamics.jacobi_integrate(model, geo, [0.2, -0.1], [0.3, 1.0])
    expected = np.array([0.2, -0.1]) + geo.t[:, None] * np.array([0.3, 1.0])
    np.testing.assert_allclose(field.xi, expected, atol=1e-12)
    np.testing.assert_allclose(field.dxi, np.broadcast_to([0.3, 1.0], field.dxi.shape), atol=1e-12)
    states = field.jacobi_states()
    assert states[0].xi.tolist() == [0.2, -0.1]
    with pytest.raises(ValueError):
        geo.jacobi_states()


def test_jacobi_is_linear():
    model = randers3()
    geo = dynamics.geodesic_integrate(model, [0.1, -0.2, 0.3], [0.6, 0.3, -0.2], (0.0, 0.5), 1e-2)
    a = dynamics.jacobi_integrate(model, geo, [0.0, 0.1, 0.0], [0.0, 0.2, 1.0])
    b = dynamics.jacobi_integrate(model, geo, [0.0, 0.2, 0.0], [0.0, 0.4, 2.0])
    np.testing.assert_allclose(b.xi, 2.0 * a.xi, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(b.dxi, 2.0 * a.dxi, rtol=1e-12, atol=1e-15)


def test_jacobi_refuses_non_geodesics():
    sphere = lagrangian.sphere()
    latitude = dynamics.geodesic_integrate(lagrangian.euclidean(2), [1.0, 0.0], [0.0, 1.0], (0.0, 1.0), 1e-2)
    with pytest.raises(NotAGeodesicError, match="geodesic"):
        dynamics.jacobi_integrate(sphere, latitude, [0.0, 0.0], [1.0, 0.0])


def test_trajectory_writers(tmp_path):
    model = lagrangian.euclidean(2)
    geo = dynamics.geodesic_integrate(model, [0.0, 0.0], [1.0, 0.0], (0.0, 0.1), 5e-2)
    field = dynamics.jacobi_integrate(model, geo, [0.0, 0.0], [0.0, 1.0])
    dynamics.write_jsonl(field, tmp_path / "j.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "j.jsonl").read_text().splitlines()]
    assert len(rows) == 3
    assert rows[2]["xi"] == pytest.approx([0.0, 0.1])
    assert set(rows[0]) >= {"t", "x", "y", "xi", "dxi"}
    dynamics.write_csv(geo, tmp_path / "g.csv")
    with open(tmp_path / "g.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0][:5] == ["t", "x1", "x2", "y1", "y2"]
    assert len(table) == 4
    assert float(table[-1][1]) == pytest.approx(0.1)


def test_constant_sigma_keeps_geodesics_and_jacobi_fields():
    model = randers3()
    geo = dynamics.geodesic_integrate(model, [0.1, -0.2, 0.3], [0.6, 0.3, -0.2], (0.0, 0.3), 1e-2)
    sigma = lagrangian.constant_sigma(0.5)
    rep = dynamics.geodesic_correspondence(model, sigma, geo)
    assert rep.passed
    assert rep.details["B_vanishes"] and rep.details["lifted_geodesic"]
    jrep = dynamics.jacobi_correspondence(model, sigma, geo, [0.0, 0.0, 0.0], [0.0, 0.2, 1.0])
    assert jrep.details["status"] == "hypotheses hold"
    assert jrep.passed and jrep["jacobi_correspondence"].samples == len(geo.t)


def test_linear_sigma_breaks_euclidean_geodesics_consistently():
    model = lagrangian.euclidean(2)
    geo = dynamics.geodesic_integrate(model, [0.0, 0.0], [1.0, 0.0], (0.0, 0.5), 1e-2)
    rep = dynamics.geodesic_correspondence(model, lagrangian.linear_sigma([0.0, 1.0]), geo)
    assert rep.passed
    assert not rep.details["B_vanishes"] and not rep.details["lifted_geodesic"]
    assert rep.details["max_B"] == pytest.approx(0.5)
    assert rep["b_theta_theta"].passed


def test_geodesic_correspondence_threshold_consistency():
    rng = np.random.default_rng(0)
    model = lagrangian.euclidean(2)
    for k in range(20):
        x0, y0 = rng.uniform(-1, 1, 2), rng.normal(size=2)
        coeffs = rng.normal(size=2) if k % 4 else np.zeros(2)
        geo = dynamics.geodesic_integrate(model, x0, y0, (0.0, 0.2), 5e-2)
        rep = dynamics.geodesic_correspondence(model, lagrangian.linear_sigma(coeffs, 0.3), geo)
        assert rep.passed
        assert rep.details["B_vanishes"] == (k % 4 == 0)


def test_bump_far_from_the_curve():
    model = lagrangian.euclidean(2)
    geo = dynamics.geodesic_integrate(model, [0.0, 0.0], [1.0, 0.0], (0.0, 1.0), 1e-2)
    sigma = lagrangian.gaussian_bump(0.5, [0.5, 12.0], 1.0)
    rep = dynamics.geodesic_correspondence(model, sigma, geo)
    assert rep.passed and rep.details["lifted_geodesic"]
    lifted = dynamics.geodesic_integrate(lagrangian.conformal_lift(model, sigma), [0.0, 0.0], [1.0, 0.0], (0.0, 1.0), 1e-2)
    np.testing.assert_allclose(lifted.x, geo.x, atol=1e-8)


def test_jacobi_correspondence_reports_violated_hypotheses():
    model = randers3()
    geo = dynamics.geodesic_integrate(model, [0.1, -0.2, 0.3], [0.6, 0.3, -0.2], (0.0, 0.2), 1e-2)
    rep = dynamics.jacobi_correspondence(model, sigma_bump(3), geo, [0.0, 0.0, 0.0], [0.0, 0.2, 1.0])
    assert rep.details["status"] == "hypotheses violated, equivalence not asserted"
    assert rep["jacobi_correspondence"].details["absent"] == "hypotheses violated, equivalence not asserted"
    assert rep.details["max_i_theta_B"] > 1e-10


def test_first_return_on_a_circle():
    t = np.linspace(0, 3 * np.pi, 3001)
    traj = dynamics.Trajectory(t, np.stack([np.cos(t), np.sin(t)], 1), np.zeros((len(t), 2)), np.ones(len(t)), t[1], "test")
    assert dynamics.first_return(traj) == pytest.approx(2 * np.pi, abs=1e-5)
    short = dynamics.Trajectory(t[:500], traj.x[:500], traj.y[:500], traj.lagrangian[:500], t[1], "test")
    assert dynamics.first_return(short) is None


def test_grid_stays_inside_the_span():
    traj = dynamics.geodesic_integrate(lagrangian.euclidean(1), [0.0], [1.0], (0.0, 0.25), 0.1)
    np.testing.assert_allclose(traj.t, [0.0, 0.1, 0.2])
    traj = dynamics.geodesic_integrate(lagrangian.euclidean(1), [0.0], [1.0], (0.0, 0.3), 0.1)
    assert len(traj.t) == 4
