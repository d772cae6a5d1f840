"""Finsler structure models, conformal factors and structure validation.

Models hand out jets of the energy ``E = L^2 / 2``.  Custom evaluators are
plain Python callables ``f(x, y)`` over sequences of coordinate values;
they must use the arithmetic operators and the math functions exported by
:mod:`finslerkit.jets` so the same callable works on jets and on ordinary
(real or complex) numbers.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import jets
from .jets import Jet, SupportElement, jet_eval
from .report import CheckResult, VerificationReport
from .sampling import SampleSpec

EnergyFn = Callable[[Sequence[Any], Sequence[Any]], Any]
ScalarFn = Callable[[Sequence[Any]], Any]


@dataclass(frozen=True)
class FinslerModel:
    """A Finsler structure given by its energy ``E(x, y) = L^2 / 2``.

    ``energy`` is evaluated on coordinate sequences; it is jet-aware.
    """

    dim: int
    family: str
    energy: EnergyFn
    params: dict = field(default_factory=dict, compare=False)

    def energy_jet(self, u: SupportElement, order: int | None = None) -> Jet:
        if u.dim != self.dim:
            raise ValueError(f"support element has dim {u.dim}, model has dim {self.dim}")
        return jet_eval(self.energy, u, order)

    def energy_value(self, x, y):
        """Energy on plain arrays ``x``, ``y`` of shape ``(..., n)`` (complex allowed)."""
        xs = [x[..., i] for i in range(self.dim)]
        ys = [y[..., i] for i in range(self.dim)]
        return self.energy(xs, ys)

    def lagrangian_value(self, x, y):
        return np.sqrt(2.0 * self.energy_value(x, y))


@dataclass(frozen=True)
class ConformalFactor:
    """A scalar field ``sigma(x)`` on the base manifold."""

    family: str
    fn: ScalarFn
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, xs):
        return self.fn(xs)

    def jet(self, u: SupportElement, order: int | None = None) -> Jet:
        # sigma sees only base coordinates, so every fiber derivative is exactly 0
        return jet_eval(lambda x, y: self.fn(x), u, order)

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.fn([x[..., i] for i in range(x.shape[-1])])
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()

    def is_constant(self) -> bool:
        return self.family == "constant"


# ---------------------------------------------------------------------------
# model families


def _quadratic(matrix, ys):
    n = len(ys)
    total = 0.0
    for i in range(n):
        for j in range(n):
            entry = matrix[i][j]
            if isinstance(entry, (int, float)) and entry == 0:
                continue
            total = total + entry * ys[i] * ys[j]
    return total


def euclidean(dim: int) -> FinslerModel:
    def energy(x, y):
        return 0.5 * sum(yi * yi for yi in y)

    return FinslerModel(dim, "euclidean", energy)


def riemannian(dim: int, metric: Callable[[Sequence[Any]], Sequence[Sequence[Any]]], name: str = "riemannian") -> FinslerModel:
    """``E = a_ij(x) y^i y^j / 2`` for a user metric ``a_ij(x)``."""

    def energy(x, y):
        return 0.5 * _quadratic(metric(x), y)

    return FinslerModel(dim, name, energy, {"metric": metric})


def sphere(radius: float = 1.0) -> FinslerModel:
    """Round 2-sphere in the chart ``(theta, phi)``: ``diag(r^2, r^2 sin^2 theta)``."""
    r2 = radius * radius

    def metric(x):
        s = jets.sin(x[0])
        return [[r2, 0.0], [0.0, r2 * s * s]]

    model = riemannian(2, metric, name="sphere")
    return FinslerModel(2, "sphere", model.energy, {"metric": metric, "radius": radius})


def randers(
    dim: int,
    a: Callable[[Sequence[Any]], Sequence[Sequence[Any]]],
    b: Callable[[Sequence[Any]], Sequence[Any]],
    check_box: tuple[Sequence[float], Sequence[float]] | None = None,
    grid: int = 5,
) -> FinslerModel:
    """``L = sqrt(a_ij(x) y^i y^j) + b_i(x) y^i``.

    Admissibility ``|b|_a < 1`` is probed on a base-point grid over
    ``check_box`` (default ``[-1, 1]^n``); a violation only warns.
    """

    def energy(x, y):
        alpha = jets.sqrt(_quadratic(a(x), y))
        bx = b(x)
        beta = sum(bx[i] * y[i] for i in range(dim))
        lag = alpha + beta
        return 0.5 * lag * lag

    model = FinslerModel(dim, "randers", energy, {"a": a, "b": b})
    worst = randers_b_norm(model, check_box, grid)
    if worst >= 1.0:
        warnings.warn(
            f"Randers drift has |b|_a = {worst:.3g} >= 1 on the check grid; "
            "the structure is not positive definite everywhere",
            RuntimeWarning,
            stacklevel=2,
        )
    return model


def randers_b_norm(model: FinslerModel, box=None, grid: int = 5) -> float:
    """Largest ``|b|_a`` over a base-point grid."""
    dim = model.dim
    a, b = model.params["a"], model.params["b"]
    lo, hi = (np.full(dim, -1.0), np.full(dim, 1.0)) if box is None else map(np.asarray, box)
    axes = [np.linspace(lo[i], hi[i], grid) for i in range(dim)]
    mesh = [m.ravel() for m in np.meshgrid(*axes, indexing="ij")]
    count = mesh[0].size
    amat = np.empty((count, dim, dim))
    bvec = np.empty((count, dim))
    avals, bvals = a(mesh), b(mesh)
    for i in range(dim):
        bvec[:, i] = np.broadcast_to(np.real(bvals[i]), (count,))
        for j in range(dim):
            amat[:, i, j] = np.broadcast_to(np.real(avals[i][j]), (count,))
    norms = np.einsum("pi,pi->p", bvec, np.linalg.solve(amat, bvec[..., None])[..., 0])
    return float(np.sqrt(np.max(norms)))


def custom(dim: int, lagrangian_squared: Callable[[Sequence[Any], Sequence[Any]], Any], name: str = "custom") -> FinslerModel:
    """Model from a user ``L^2(x, y)`` evaluator (``L^2`` avoids the square root)."""

    def energy(x, y):
        return 0.5 * lagrangian_squared(x, y)

    return FinslerModel(dim, name, energy, {"L2": lagrangian_squared})


def scaled(model: FinslerModel, factor: float) -> FinslerModel:
    """``E -> factor * E`` (a homothety when ``factor > 0``)."""

    def energy(x, y):
        return factor * model.energy(x, y)

    return FinslerModel(model.dim, f"scaled({model.family})", energy, {"base": model, "factor": factor})


# ---------------------------------------------------------------------------
# conformal factors


def constant_sigma(value: float) -> ConformalFactor:
    return ConformalFactor("constant", lambda x: float(value), {"value": float(value)})


def linear_sigma(coeffs: Sequence[float], offset: float = 0.0) -> ConformalFactor:
    coeffs = [float(c) for c in coeffs]

    def fn(x):
        total = offset
        for c, xi in zip(coeffs, x):
            if c != 0.0:
                total = total + c * xi
        return total

    return ConformalFactor("linear", fn, {"coeffs": coeffs, "offset": float(offset)})


def gaussian_bump(amplitude: float, center: Sequence[float], width: float) -> ConformalFactor:
    center = [float(c) for c in center]

    def fn(x):
        r2 = 0.0
        for c, xi in zip(center, x):
            d = xi - c
            r2 = r2 + d * d
        return amplitude * jets.exp(r2 * (-1.0 / (width * width)))

    return ConformalFactor(
        "gaussian_bump", fn, {"amplitude": float(amplitude), "center": center, "width": float(width)}
    )


def custom_sigma(fn: ScalarFn, name: str = "custom") -> ConformalFactor:
    return ConformalFactor(name, fn)


def conformal_lift(model: FinslerModel, sigma: ConformalFactor) -> FinslerModel:
    """The conformally changed structure ``E~ = exp(2 sigma(x)) E``."""

    def energy(x, y):
        return jets.exp(2.0 * _promote(sigma.fn(x), x)) * model.energy(x, y)

    return FinslerModel(
        model.dim,
        f"conformal({model.family})",
        energy,
        {"base": model, "sigma": sigma},
    )


def _promote(value, like):
    if isinstance(value, Jet):
        return value
    if like and isinstance(like[0], Jet):
        return like[0] * 0.0 + value
    return value


# ---------------------------------------------------------------------------
# validation


def validate_structure(
    model: FinslerModel,
    samples: SampleSpec | SupportElement,
    homogeneity_tol: float = 1e-10,
) -> VerificationReport:
    """Check homogeneity, positive definiteness and positivity of ``L``.

    Evaluation failures are recorded per sample instead of aborting.
    """
    u = samples.draw(model.dim) if isinstance(samples, SampleSpec) else samples
    euler, min_eig, lag_min, failures = [], [], [], []
    for idx in range(len(u)):
        site = u[idx] if u.batch_shape else u
        try:
            E = model.energy_jet(site, 2)
        except (ArithmeticError, ValueError) as exc:
            failures.append({"sample": idx, "error": str(exc)})
            continue
        n = model.dim
        e0 = float(E.value)
        if not e0 > 0:
            euler.append(np.nan)
            min_eig.append(np.nan)
            lag_min.append(np.sqrt(max(2 * e0, 0.0)) if np.isfinite(e0) else np.nan)
            failures.append({"sample": idx, "error": "non-positive energy"})
            continue
        lag = jets.sqrt(E * 2.0)
        grad = np.array([float(lag.d(n + i).value) for i in range(n)])
        euler.append(abs(grad @ site.y - float(lag.value)))
        hess = np.array([[float(E.d(n + i).d(n + j).value) for j in range(n)] for i in range(n)])
        min_eig.append(float(np.linalg.eigvalsh(hess).min()))
        lag_min.append(float(lag.value))
    euler_arr, eig_arr, lag_arr = map(lambda v: np.asarray(v, dtype=float), (euler, min_eig, lag_min))
    lag_scale = float(np.nanmax(lag_arr)) if lag_arr.size and np.isfinite(lag_arr).any() else 1.0
    checks = [
        CheckResult.from_values(
            "homogeneity",
            "finsler structure: degree-1 homogeneity of L",
            euler_arr,
            homogeneity_tol * max(1.0, lag_scale),
            note="max |y^i dL/dy^i - L|",
        ),
        CheckResult.threshold(
            "positive_definite",
            "finsler structure: fiber Hessian of E positive definite",
            eig_arr,
            lower=0.0,
            note="minimum eigenvalue of g_ij (must stay > 0)",
        ),
        CheckResult.threshold(
            "positive_lagrangian",
            "finsler structure: L > 0 on the slit bundle",
            lag_arr,
            lower=0.0,
            note="minimum of L (must stay > 0)",
        ),
    ]
    report = VerificationReport(title=f"validate_structure[{model.family}]", checks=checks)
    report.details["failures"] = failures
    if failures:
        for check in checks:
            check.details["failed_samples"] = len(failures)
            check.passed = False
    return report
