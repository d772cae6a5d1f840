"""Geodesics ``x'' + 2 G(x, x') = 0`` and Jacobi fields along them, plus the
conformal geodesic and Jacobi correspondence checks."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import LocalGeometry
from .jets import JetError, SupportElement
from .lagrangian import ConformalFactor, FinslerModel, conformal_lift
from .report import CheckResult, VerificationReport

MIN_SPEED = 1e-8


class NotAGeodesicError(ValueError):
    """Jacobi integration was asked to run along a curve that is not a geodesic."""


@dataclass(frozen=True)
class GeodesicState:
    t: float
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class JacobiState:
    t: float
    xi: np.ndarray
    dxi: np.ndarray


@dataclass
class Trajectory:
    """Sampled solution; ``xi``/``dxi`` are filled for Jacobi runs."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lagrangian: np.ndarray
    step: float
    model_family: str
    complete: bool = True
    reason: str | None = None
    xi: np.ndarray | None = None
    dxi: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def drift(self) -> float:
        """``max |L(t) - L(0)|`` along the trajectory."""
        return float(np.abs(self.lagrangian - self.lagrangian[0]).max())

    def states(self) -> list[GeodesicState]:
        return [GeodesicState(float(t), x, y) for t, x, y in zip(self.t, self.x, self.y)]

    def jacobi_states(self) -> list[JacobiState]:
        if self.xi is None:
            raise ValueError("not a Jacobi trajectory")
        return [JacobiState(float(t), a, b) for t, a, b in zip(self.t, self.xi, self.dxi)]

    def rows(self):
        for k in range(len(self.t)):
            row = {"t": float(self.t[k]), "x": self.x[k].tolist(), "y": self.y[k].tolist()}
            if self.xi is not None:
                row["xi"] = self.xi[k].tolist()
                row["dxi"] = self.dxi[k].tolist()
            yield row


def write_jsonl(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        for row in traj.rows():
            fh.write(json.dumps(row) + "\n")


def write_csv(traj: Trajectory, path) -> None:
    n = traj.x.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)]
    if traj.xi is not None:
        header += [f"xi{i + 1}" for i in range(n)] + [f"dxi{i + 1}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(traj.t)):
            row = [traj.t[k], *traj.x[k], *traj.y[k]]
            if traj.xi is not None:
                row += [*traj.xi[k], *traj.dxi[k]]
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# vector fields


def spray_at(model: FinslerModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return LocalGeometry(model, SupportElement(x, y), order=2, strict=False).G.value


def _geodesic_rhs(model, x, y):
    return y, -2.0 * spray_at(model, x, y)


def _jacobi_rhs(model, x, y, xi, eta):
    """``xi' = eta - Gamma^h_jk xi^j x'^k`` and
    ``eta' = -Gamma^h_jk eta^j x'^k - R^h_kij x'^k x'^i xi^j``."""
    geo = LocalGeometry(model, SupportElement(x, y), order=4, strict=False)
    Gamma = geo.Gamma.value
    R = geo.cartan_curvature[0].value
    G = geo.G.value
    dxi = eta - np.einsum("hjk,j,k->h", Gamma, xi, y)
    deta = -np.einsum("hjk,j,k->h", Gamma, eta, y) - np.einsum("hkij,k,i,j->h", R, y, y, xi)
    return y, -2.0 * G, dxi, deta


def _rk4(f, state, h):
    k1 = f(*state)
    k2 = f(*[s + 0.5 * h * k for s, k in zip(state, k1)])
    k3 = f(*[s + 0.5 * h * k for s, k in zip(state, k2)])
    k4 = f(*[s + h * k for s, k in zip(state, k3)])
    return tuple(s + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d) for s, a, b, c, d in zip(state, k1, k2, k3, k4))


def _steps(t_span, step):
    t0, t1 = map(float, t_span)
    if step <= 0:
        raise ValueError("step must be positive")
    # the last grid point inside the span; the run never overshoots t1
    count = int(np.floor((t1 - t0) / step + 1e-9))
    return t0, count


def _lag(model, x, y) -> float:
    return float(np.sqrt(2.0 * model.energy_value(x, y)))


# ---------------------------------------------------------------------------
# integration


def geodesic_integrate(model: FinslerModel, x0, y0, t_span, step: float) -> Trajectory:
    """Classical fourth-order Runge-Kutta with a fixed step.

    Samples sit on the grid ``t0 + k * step`` up to the last point not past ``t1``.

    The run stops early (``complete = False``) when the speed falls below
    ``1e-8``, the state turns non-finite, or the model cannot be evaluated.
    """
    x = np.asarray(x0, dtype=float).copy()
    y = np.asarray(y0, dtype=float).copy()
    if np.linalg.norm(y) < MIN_SPEED:
        raise ValueError("initial velocity lies on the zero section")
    t, count = _steps(t_span, step)
    ts, xs, ys, ls = [t], [x], [y], [_lag(model, x, y)]
    reason = None
    for k in range(count):
        try:
            x, y = _rk4(lambda a, b: _geodesic_rhs(model, a, b), (x, y), step)
        except (JetError, ArithmeticError, ValueError) as exc:
            reason = f"evaluation failed after t={t:.6g}: {exc}"
            break
        t = ts[0] + (k + 1) * step
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            reason = f"non-finite state at t={t:.6g}"
            break
        if np.linalg.norm(y) < MIN_SPEED:
            reason = f"speed fell below {MIN_SPEED:g} at t={t:.6g}"
            break
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ls.append(_lag(model, x, y))
    return Trajectory(
        np.array(ts), np.array(xs), np.array(ys), np.array(ls), step, model.family, reason is None, reason,
        meta={"kind": "geodesic"},
    )


def jacobi_integrate(model: FinslerModel, geodesic: Trajectory, xi0, dxi0, tol: float = 1e-9) -> Trajectory:
    """Jacobi field along ``geodesic`` with ``xi(0) = xi0`` and ``D xi/dt (0) = dxi0``.

    The geodesic is re-integrated jointly with the field using the same step;
    if the joint run departs from the supplied curve by more than ``tol``
    (relative), the curve is not a geodesic of ``model`` and the call is
    refused with :class:`NotAGeodesicError`.
    """
    h = geodesic.step
    x, y = geodesic.x[0].copy(), geodesic.y[0].copy()
    xi = np.asarray(xi0, dtype=float).copy()
    eta = np.asarray(dxi0, dtype=float).copy()
    out_xi, out_eta = [xi], [eta]
    scale = max(1.0, float(np.abs(geodesic.x).max()), float(np.abs(geodesic.y).max()))
    for k in range(1, len(geodesic.t)):
        x, y, xi, eta = _rk4(lambda a, b, c, d: _jacobi_rhs(model, a, b, c, d), (x, y, xi, eta), h)
        dev = max(float(np.abs(x - geodesic.x[k]).max()), float(np.abs(y - geodesic.y[k]).max()))
        if dev > tol * scale:
            raise NotAGeodesicError(
                f"curve departs from the {model.family} geodesic flow by {dev:.3e} at t={geodesic.t[k]:.6g}; "
                "Jacobi integration needs a geodesic"
            )
        out_xi.append(xi)
        out_eta.append(eta)
    return Trajectory(
        geodesic.t.copy(), geodesic.x.copy(), geodesic.y.copy(), geodesic.lagrangian.copy(), h, model.family,
        geodesic.complete, geodesic.reason, np.array(out_xi), np.array(out_eta), {"kind": "jacobi"},
    )


# ---------------------------------------------------------------------------
# conformal correspondence


def _curve_sites(traj: Trajectory) -> SupportElement:
    return SupportElement(traj.x, traj.y)


def _per_sample(v: np.ndarray) -> np.ndarray:
    return np.abs(v).reshape(v.shape[0], -1).max(axis=1)


def geodesic_correspondence(model: FinslerModel, sigma: ConformalFactor, geodesic: Trajectory, tol: float = 1e-8) -> VerificationReport:
    """A base geodesic is a geodesic of the lifted structure iff ``B(theta, theta) = 0``.

    Along the curve the lifted residual ``x'' + 2 G~(x, x')`` is evaluated
    with ``x'' = -2 G(x, x')`` from the base model and ``G~`` from the lifted
    model; it is compared (as a predicate) with ``max |B^h|`` from the
    difference tensors.
    """
    from .conformal import DeltaJets

    u = _curve_sites(geodesic)
    base = LocalGeometry(model, u, strict=False)
    lifted = LocalGeometry(conformal_lift(model, sigma), u, order=2, strict=False)
    d = DeltaJets(base, sigma)
    B = d.B.value
    B_theta = np.einsum("...hji,...j,...i->...h", d.A.value, u.y, u.y)  # -B(theta, theta)
    residual = 2.0 * (lifted.G.value - base.G.value)
    b_max = _per_sample(B)
    r_max = _per_sample(residual)
    b_flag = bool(b_max.max() > tol)
    r_flag = bool(r_max.max() > tol)
    report = VerificationReport(title=f"geodesic_correspondence[{model.family} x {sigma.family}]")
    report.details.update(
        {
            "max_B": float(b_max.max()),
            "max_B_theta_theta": float(_per_sample(B_theta).max()),
            "max_lifted_residual": float(r_max.max()),
            "B_vanishes": not b_flag,
            "lifted_geodesic": not r_flag,
        }
    )
    report.checks.append(
        CheckResult(
            "geodesic_correspondence",
            "geodesics: a base geodesic stays a geodesic iff B(theta, theta) = 0",
            len(geodesic.t),
            float(r_max.max()),
            float(b_max.max()),
            tol,
            b_flag == r_flag,
            {"B_vanishes": not b_flag, "lifted_geodesic": not r_flag},
        )
    )
    report.checks.append(
        CheckResult.from_residuals(
            "b_theta_theta",
            "geodesics: B(theta, theta) = -2 B^h along the curve",
            B_theta,
            2.0 * B,
            tol,
        )
    )
    return report


def jacobi_correspondence(
    model: FinslerModel,
    sigma: ConformalFactor,
    geodesic: Trajectory,
    xi0,
    dxi0,
    tol: float = 1e-8,
    hypothesis_tol: float = 1e-10,
) -> VerificationReport:
    """Jacobi fields agree for both structures when ``H(theta, X) theta = 0`` and ``i_theta B = 0``.

    The hypotheses are evaluated along the curve first; when they fail the
    equivalence is reported as not applicable rather than asserted.
    """
    from .conformal import DeltaJets

    u = _curve_sites(geodesic)
    base = LocalGeometry(model, u, strict=False)
    d = DeltaJets(base, sigma)
    y = u.y
    H_theta = np.einsum("...hkij,...k,...i->...hj", d.H_cartan.value, y, y)
    iB = -np.einsum("...hji,...i->...hj", d.A.value, y)
    h_max = float(_per_sample(H_theta).max())
    b_max = float(_per_sample(iB).max())
    report = VerificationReport(title=f"jacobi_correspondence[{model.family} x {sigma.family}]")
    report.details.update({"max_H_theta": h_max, "max_i_theta_B": b_max})
    anchor = "Jacobi fields: same fields for both structures under H(theta, X) theta = 0 and i_theta B = 0"
    if h_max > hypothesis_tol or b_max > hypothesis_tol:
        report.details["status"] = "hypotheses violated, equivalence not asserted"
        report.checks.append(CheckResult.absent("jacobi_correspondence", anchor, "hypotheses violated, equivalence not asserted"))
        return report
    base_field = jacobi_integrate(model, geodesic, xi0, dxi0)
    lifted_model = conformal_lift(model, sigma)
    lifted_field = jacobi_integrate(lifted_model, geodesic, xi0, dxi0)
    report.details["status"] = "hypotheses hold"
    report.checks.append(
        CheckResult.from_residuals(
            "jacobi_correspondence",
            anchor,
            np.concatenate([lifted_field.xi, lifted_field.dxi], axis=1),
            np.concatenate([base_field.xi, base_field.dxi], axis=1),
            tol,
        )
    )
    return report


def first_return(traj: Trajectory, embed=None, after: float | None = None) -> float | None:
    """Time at which the curve next passes its starting point.

    The crossing is detected as a sign change of ``(p(t) - p(0)) . v0`` from
    negative to non-negative, where ``p`` is ``embed(x)`` (the chart itself by
    default) and ``v0`` the initial direction of ``p``, and is located by
    linear interpolation between the bracketing steps.  Returns ``None`` when
    the curve does not come back.
    """
    p = traj.x if embed is None else np.asarray(embed(traj.x))
    v0 = p[1] - p[0]
    v0 = v0 / np.linalg.norm(v0)
    s = (p - p[0]) @ v0
    t = traj.t
    if after is None:
        after = t[0] + 0.5 * (t[-1] - t[0]) / max(len(t) - 1, 1) * 4
    hits = np.flatnonzero((s[:-1] < 0) & (s[1:] >= 0) & (t[:-1] > after))
    if not hits.size:
        return None
    k = int(hits[0])
    return float(t[k] + (t[k + 1] - t[k]) * (-s[k]) / (s[k + 1] - s[k]))
