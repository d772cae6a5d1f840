"""Conformal changes ``g -> exp(2 sigma(x)) g``: difference tensors, the
transformation-law suite, the invariant suite, homothety equivalences and
the conformality test.

Every difference tensor is assembled from base-model quantities only.  The
laws are then checked against the pipeline run on the directly lifted
energy ``exp(2 sigma) E``, so the two sides of each comparison share no
intermediate values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import LocalGeometry
from .jets import Jet, JetOrderError, SupportElement, contract
from .lagrangian import ConformalFactor, FinslerModel, conformal_lift
from .report import CheckResult, VerificationReport
from .sampling import SampleSpec

CONNECTION_TOL = 1e-8
CURVATURE_TOL = 1e-5
INVARIANT_TOL = 1e-8
SIGMA_INVARIANT_TOL = 1e-7
HOMOTHETY_TOL = 1e-10

ORIENTATION = "G~^h_j = G^h_j - B^h_j (L(delta_i) = -B^h_i dot d_h, N_o = -2 B^h)"


class ConventionError(RuntimeError):
    """The sign of the Barthel difference does not match the stored orientation."""


def _sites(samples, dim: int) -> SupportElement:
    """Always batched, so every value carries a leading sample axis."""
    if isinstance(samples, SampleSpec):
        return samples.draw(dim)
    if isinstance(samples, SupportElement):
        if samples.batch_shape:
            return SupportElement(samples.x.reshape(-1, dim), samples.y.reshape(-1, dim))
        return SupportElement(samples.x[None], samples.y[None])
    raise TypeError("samples must be a SampleSpec or a SupportElement")


def _antisym(T: Jet) -> Jet:
    """``U_ij {T}`` on the last two slots."""
    axes = list(range(T.rank))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return T - T.transpose(*axes)


class DeltaJets:
    """Jets of the difference tensors, built from a base geometry and sigma."""

    def __init__(self, base: LocalGeometry, sigma: ConformalFactor):
        self.geo = base
        self.sigma_factor = sigma
        self.n = base.n

    @cached_property
    def sigma(self) -> Jet:
        return self.sigma_factor.jet(self.geo.u, self.geo.order)

    @cached_property
    def sigma_j(self) -> Jet:
        return self.sigma.grad(range(self.n))

    @cached_property
    def sigma_o(self) -> Jet:
        return contract("j,j->", self.sigma_j, self.geo.Y)

    @cached_property
    def sigma_up(self) -> Jet:
        return contract("hj,j->h", self.geo.ginv, self.sigma_j)

    @cached_property
    def B(self) -> Jet:
        """``B^h = (E g^{hj} - y^h y^j) sigma_j``."""
        geo = self.geo
        return geo.E * self.sigma_up - geo.Y * self.sigma_o

    @cached_property
    def B_j(self) -> Jet:
        """``B^h_j = y_j sigma^h - delta^h_j sigma_o - y^h sigma_j - L^2 C^h_j``."""
        geo = self.geo
        eye = np.eye(self.n)
        Cr = contract("hjk,k->hj", contract("hjr,rk->hjk", geo.C, geo.ginv), self.sigma_j)
        return (
            contract("j,h->hj", geo.y_low, self.sigma_up)
            - contract("hj,->hj", eye, self.sigma_o)
            - contract("h,j->hj", geo.Y, self.sigma_j)
            - geo.L2 * Cr
        )

    @cached_property
    def U(self) -> Jet:
        geo = self.geo
        eye = np.eye(self.n)
        C, Bj, sj = geo.C, self.B_j, self.sigma_j
        return (
            contract("ij,h->hij", geo.g, self.sigma_up)
            - contract("hi,j->hij", eye, sj)
            - contract("hj,i->hij", eye, sj)
            - contract("him,mj->hij", C, Bj)
            - contract("hjm,mi->hij", C, Bj)
            + contract("hr,ijr->hij", geo.ginv, contract("ijm,mr->ijr", geo.C_low, Bj))
        )

    @cached_property
    def A(self) -> Jet:
        """``A^h_ij = U^h_ij + C^h_im B^m_j``: change of the h-coefficients along the old ``delta_j``."""
        return self.U + contract("him,mj->hij", self.geo.C, self.B_j)

    @cached_property
    def Psi(self) -> Jet:
        """``Psi^h_ij = B^h_ij = dot d_j B^h_i``."""
        return self.geo.dot(self.B_j)

    @cached_property
    def H_barthel(self) -> Jet:
        geo = self.geo
        Bj = self.B_j
        inner = geo.h_cartan(Bj, "ul") + contract("him,mj->hij", self.Psi - geo.C_stroke_o, Bj)
        return -_antisym(inner)

    @cached_property
    def V_cartan(self) -> Jet:
        geo = self.geo
        _, _, S = geo.cartan_curvature
        Bj, U, C = self.B_j, self.U, geo.C
        return (
            2.0 * contract("mi,hkjm->hkij", Bj, S)
            + geo.dot(self.A)
            - contract("him,mkj->hkij", U, C)
            + contract("mki,hjm->hkij", U, C)
        )

    @cached_property
    def H_cartan(self) -> Jet:
        geo = self.geo
        _, P, S = geo.cartan_curvature
        Bj, U, A = self.B_j, self.U, self.A
        SBB = contract("hkmj,mi->hkij", contract("hkml,lj->hkmj", S, Bj), Bj)
        inner = (
            geo.h_cartan(A, "ull")
            + contract("mj,hkim->hkij", Bj, geo.dot(A))
            + contract("mkj,him->hkij", U, U)
            - contract("mj,hkim->hkij", Bj, P)
        )
        return 2.0 * SBB - _antisym(inner)

    @cached_property
    def V_berwald(self) -> Jet:
        """``V*^h_kij = dot d_j B^h_ki``."""
        return self.geo.dot(self.Psi)

    @cached_property
    def H_berwald(self) -> Jet:
        geo = self.geo
        geo.need(5, "the Berwald curvature difference")
        Bj, Psi = self.B_j, self.Psi
        inner = (
            contract("hikm,mj->hkij", geo.dot(geo.G_ij), Bj)
            - geo.h_berwald(Psi, "ull").transpose(0, 2, 1, 3)
            - contract("hikm,mj->hkij", geo.dot(Psi), Bj)
            - contract("him,mkj->hkij", Psi, Psi)
        )
        return _antisym(inner)


@dataclass(frozen=True)
class ConformalDeltas:
    """Difference tensors at a batch of sites (values, not jets)."""

    B: np.ndarray
    B_j: np.ndarray
    U: np.ndarray
    A_cartan: np.ndarray  # vertical Cartan difference, identically zero
    A: np.ndarray
    Psi: np.ndarray
    H_barthel: np.ndarray
    V_cartan: np.ndarray
    H_cartan: np.ndarray
    V_berwald: np.ndarray
    H_berwald: np.ndarray
    N: np.ndarray  # N(dbar_i) = -B^h_i dbar_h
    N_o: np.ndarray  # N(eta) = -2 B^h
    sigma_snapshot: dict = field(default_factory=dict)
    site: SupportElement | None = None

    def blocks(self) -> dict[str, np.ndarray]:
        return {
            k: getattr(self, k)
            for k in ("B", "B_j", "U", "A_cartan", "Psi", "H_barthel", "V_cartan", "H_cartan", "V_berwald", "H_berwald")
        }

    def max_abs(self) -> float:
        return max(float(np.abs(v).max()) for v in self.blocks().values())


class ConformalPair:
    """Base and lifted pipelines plus difference jets, cached for reuse."""

    def __init__(self, model: FinslerModel, sigma: ConformalFactor, samples, order: int | None = None):
        self.model = model
        self.sigma = sigma
        self.u = _sites(samples, model.dim)
        self.order = order

    @cached_property
    def lifted_model(self) -> FinslerModel:
        return conformal_lift(self.model, self.sigma)

    @cached_property
    def base(self) -> LocalGeometry:
        return LocalGeometry(self.model, self.u, order=self.order, strict=False)

    @cached_property
    def lifted(self) -> LocalGeometry:
        return LocalGeometry(self.lifted_model, self.u, order=self.order, strict=False)

    @cached_property
    def deltas(self) -> DeltaJets:
        return DeltaJets(self.base, self.sigma)

    @cached_property
    def mask(self) -> np.ndarray:
        return self.base.valid & self.lifted.valid

    @cached_property
    def exp2s(self) -> np.ndarray:
        return np.exp(2.0 * self.deltas.sigma.value)


def conformal_deltas(model: FinslerModel, sigma: ConformalFactor, u: SupportElement, order: int | None = None) -> ConformalDeltas:
    geo = LocalGeometry(model, u, order=order)
    if geo.order < 5:
        raise JetOrderError(f"the curvature difference blocks need energy jets of order >= 5, have {geo.order}")
    d = DeltaJets(geo, sigma)
    Bj = np.array(d.B_j.value)
    B = np.array(d.B.value)
    snapshot = {
        "sigma": np.array(d.sigma.value),
        "sigma_j": np.array(d.sigma_j.value),
        "sigma_o": np.array(d.sigma_o.value),
        "sigma_up": np.array(d.sigma_up.value),
        "sigma_1": np.array(d.sigma_o.value),  # d_G sigma = y^i d_i sigma
    }
    return ConformalDeltas(
        B=B,
        B_j=Bj,
        U=np.array(d.U.value),
        A_cartan=np.zeros_like(np.array(d.U.value)),
        A=np.array(d.A.value),
        Psi=np.array(d.Psi.value),
        H_barthel=np.array(d.H_barthel.value),
        V_cartan=np.array(d.V_cartan.value),
        H_cartan=np.array(d.H_cartan.value),
        V_berwald=np.array(d.V_berwald.value),
        H_berwald=np.array(d.H_berwald.value),
        N=-Bj,
        N_o=-2.0 * B,
        sigma_snapshot=snapshot,
        site=u,
    )


# ---------------------------------------------------------------------------
# sign self-calibration


def sign_probe(pair: ConformalPair, sample: int | None = None, tol: float = 1e-8) -> str:
    """Pin the orientation of the Barthel difference on one probe sample.

    Returns ``"minus"`` when ``G~_j = G_j - B_j`` fits, ``"indeterminate"``
    when ``B_j`` vanishes there; raises :class:`ConventionError` if only the
    opposite orientation fits or neither does.
    """
    Gt = pair.lifted.G_i.value
    G = pair.base.G_i.value
    Bj = pair.deltas.B_j.value
    if sample is None:
        sizes = np.abs(Bj).reshape(len(Bj), -1).max(-1)
        sizes = np.where(pair.mask, sizes, -1.0)
        sample = int(np.argmax(sizes))
    scale = max(1.0, float(np.abs(Gt[sample]).max()), float(np.abs(G[sample]).max()))
    minus = float(np.abs(Gt[sample] - (G[sample] - Bj[sample])).max()) / scale
    plus = float(np.abs(Gt[sample] - (G[sample] + Bj[sample])).max()) / scale
    if float(np.abs(Bj[sample]).max()) <= tol * scale:
        return "indeterminate"
    if minus <= tol:
        return "minus"
    if plus <= tol:
        raise ConventionError(
            "the lifted Barthel coefficients fit G_j + B_j; the stored orientation "
            f"({ORIENTATION}) is wrong for this engine"
        )
    raise ConventionError(f"neither orientation fits the Barthel difference (residuals {minus:.3e}, {plus:.3e})")


# ---------------------------------------------------------------------------
# transformation laws


def _exp_scale(pair: ConformalPair, values: np.ndarray) -> np.ndarray:
    f = pair.exp2s
    return values * f.reshape(f.shape + (1,) * (values.ndim - f.ndim))


def _sigma_wedge(pair: ConformalPair) -> np.ndarray:
    """``exp(2 sigma) (Omega + 2 d sigma ^ d_J E)`` on the coordinate frame."""
    from .tensors import omega_components

    base = pair.base
    n = base.n
    om = omega_components(base)
    batch = om.shape[:-2]
    ds = np.zeros(batch + (2 * n,))
    ds[..., :n] = pair.deltas.sigma_j.value
    th = np.zeros(batch + (2 * n,))
    th[..., :n] = base.y_low.value  # d_J E = y_i dx^i
    wedge = ds[..., :, None] * th[..., None, :] - th[..., :, None] * ds[..., None, :]
    return _exp_scale(pair, om + 2.0 * wedge)


def transformation_laws(pair: ConformalPair) -> list[tuple[str, str, str, callable, callable]]:
    """``(name, anchor, level, direct, predicted)`` for every law."""
    from .tensors import omega_components

    b, t, d = pair.base, pair.lifted, pair.deltas
    n = b.n

    def berwald_S():
        # the Berwald connection has no v-coefficients on either side
        _, _, S = t.curvatures(t.G_ij, None)
        return np.zeros((len(pair.u),) + (n,) * 4) if S is None else S.value

    return [
        ("energy", "conformal change: energy scales by exp(2 sigma)", "connection",
         lambda: t.E.value, lambda: _exp_scale(pair, b.E.value)),
        ("metric", "conformal change: metric scales by exp(2 sigma)", "connection",
         lambda: t.g.value, lambda: _exp_scale(pair, b.g.value)),
        ("spray", "conformal change: spray coefficients G~ = G - B", "connection",
         lambda: t.G.value, lambda: b.G.value - d.B.value),
        ("spray_global", "conformal change: spray field difference 2(E grad_v sigma - sigma_1 C)", "connection",
         lambda: -2.0 * (t.G.value - b.G.value),
         lambda: 2.0 * (b.E.value[..., None] * d.sigma_up.value - d.sigma_o.value[..., None] * pair.u.y)),
        ("barthel", "conformal change: Barthel coefficients G~_j = G_j - B_j", "connection",
         lambda: t.G_i.value, lambda: b.G_i.value - d.B_j.value),
        ("barthel_difference_closed_form", "conformal change: B_j equals the fiber derivative of B", "connection",
         lambda: b.dot(d.B).value, lambda: d.B_j.value),
        ("barthel_difference_euler", "conformal change: N(eta) = N_o, i.e. B^h_j y^j = 2 B^h", "connection",
         lambda: np.einsum("...hj,...j->...h", d.B_j.value, pair.u.y), lambda: 2.0 * d.B.value),
        ("cartan_h_coefficients", "conformal change: Cartan h-coefficients Gamma~ = Gamma - U", "connection",
         lambda: t.Gamma.value, lambda: b.Gamma.value - d.U.value),
        ("cartan_v_coefficients", "conformal change: Cartan v-coefficients C~ = C", "connection",
         lambda: t.C.value, lambda: b.C.value),
        ("cartan_difference_deflection", "conformal change: U^h_ij y^j = B^h_i", "connection",
         lambda: np.einsum("...hij,...j->...hi", d.U.value, pair.u.y), lambda: d.B_j.value),
        ("berwald_h_coefficients", "conformal change: Berwald coefficients G~_ij = G_ij - Psi", "connection",
         lambda: t.G_ij.value, lambda: b.G_ij.value - d.Psi.value),
        ("fundamental_form", "conformal change: Omega~ = exp(2 sigma)(Omega + 2 d sigma ^ i_C Omega)", "connection",
         lambda: omega_components(t), lambda: _sigma_wedge(pair)),
        ("barthel_curvature", "conformal change: Barthel curvature R~ = R + H", "curvature",
         lambda: t.barthel_curvature.value, lambda: b.barthel_curvature.value + d.H_barthel.value),
        ("cartan_v_curvature", "conformal change: Cartan v-curvature S~ = S", "curvature",
         lambda: t.cartan_curvature[2].value, lambda: b.cartan_curvature[2].value),
        ("cartan_hv_curvature", "conformal change: Cartan hv-curvature P~ = P - V", "curvature",
         lambda: t.cartan_curvature[1].value, lambda: b.cartan_curvature[1].value - d.V_cartan.value),
        ("cartan_h_curvature", "conformal change: Cartan h-curvature R~ = R + H", "curvature",
         lambda: t.cartan_curvature[0].value, lambda: b.cartan_curvature[0].value + d.H_cartan.value),
        ("berwald_v_curvature", "conformal change: Berwald v-curvature S*~ = S* = 0", "curvature",
         berwald_S, berwald_S),
        ("berwald_hv_curvature", "conformal change: Berwald hv-curvature P*~ = P* - V*", "curvature",
         lambda: t.berwald_curvature[1].value, lambda: b.berwald_curvature[1].value - d.V_berwald.value),
        ("berwald_h_curvature", "conformal change: Berwald h-curvature R*~ = R* + H*", "curvature",
         lambda: t.berwald_curvature[0].value, lambda: b.berwald_curvature[0].value + d.H_berwald.value),
    ]


def verify_transformation_laws(
    model: FinslerModel,
    sigma: ConformalFactor,
    samples,
    tol_connection: float = CONNECTION_TOL,
    tol_curvature: float = CURVATURE_TOL,
    pair: ConformalPair | None = None,
) -> VerificationReport:
    """Direct (lifted model) versus predicted (base model plus deltas) for every law."""
    pair = pair or ConformalPair(model, sigma, samples)
    probe = sign_probe(pair)
    report = VerificationReport(title=f"transformation_laws[{model.family} x {sigma.family}]")
    report.header.update({"sign_probe": probe, "orientation": ORIENTATION})
    for name, anchor, level, direct, predicted in transformation_laws(pair):
        tol = tol_connection if level == "connection" else tol_curvature
        try:
            dv = np.asarray(direct(), dtype=float)
            pv = np.asarray(predicted(), dtype=float)
        except (ArithmeticError, ValueError) as exc:
            report.checks.append(CheckResult(name, anchor, 0, float("nan"), float("nan"), tol, False, {"error": str(exc)}))
            continue
        report.checks.append(CheckResult.from_residuals(name, anchor, dv, pv, tol, mask=pair.mask, level=level))
    excluded = int((~pair.mask).sum())
    if excluded:
        report.details["excluded_samples"] = excluded
    return report


# ---------------------------------------------------------------------------
# invariants


def _scale_free(values: np.ndarray) -> np.ndarray:
    return values.reshape(values.shape[0], -1)


def _fiber_log_derivative(geo: LocalGeometry) -> np.ndarray:
    """``dot d_i L / L = y_i / L^2``, read from the jet of ``L = sqrt(2E)``."""
    from . import jets

    L = jets.sqrt(geo.E.truncate(1) * 2.0)
    return L.grad(range(geo.n, 2 * geo.n)).value / L.value[..., None]


def _hbar(geo: LocalGeometry) -> np.ndarray:
    yl = geo.y_low.value
    return geo.g.value - yl[..., :, None] * yl[..., None, :] / (2.0 * geo.E.value)[..., None, None]


def _test_field(geo: LocalGeometry) -> Jet:
    """A fixed vector field ``X^h = cos(x^h) y^h + x^h`` independent of the structure."""
    from . import jets

    xs, ys = jets.variables(geo.u, geo.order)
    return Jet.stack([jets.cos(xs[h]) * ys[h] + xs[h] for h in range(geo.n)])


def _conditional(
    name: str,
    anchor: str,
    hypothesis: np.ndarray,
    direct: np.ndarray,
    predicted: np.ndarray,
    tol: float,
    hyp_tol: float,
    mask: np.ndarray,
) -> CheckResult:
    """Test the conclusion only where the hypothesis holds within ``hyp_tol``."""
    h = _scale_free(hypothesis)
    holds = (np.abs(h).max(axis=1) <= hyp_tol) & mask
    rate = float(holds.sum()) / max(1, int(mask.sum()))
    res = CheckResult.from_residuals(name, anchor, direct, predicted, tol, mask=holds)
    res.details.update({"hypothesis_rate": rate, "hypothesis_samples": int(holds.sum())})
    return res


def invariant_suite(
    model: FinslerModel,
    sigma: ConformalFactor,
    samples,
    tol_invariant: float = INVARIANT_TOL,
    tol_sigma: float = SIGMA_INVARIANT_TOL,
    tol_conditional: float = CURVATURE_TOL,
    pair: ConformalPair | None = None,
) -> VerificationReport:
    """Conformal invariants, sigma-invariants and the conditional invariants."""
    from .curvature import ricci

    pair = pair or ConformalPair(model, sigma, samples)
    b, t, d = pair.base, pair.lifted, pair.deltas
    mask = pair.mask
    n = b.n
    report = VerificationReport(title=f"invariants[{model.family} x {sigma.family}]")
    checks = report.checks

    def inv(name, anchor, direct, predicted, tol=tol_invariant):
        checks.append(CheckResult.from_residuals(name, anchor, direct, predicted, tol, mask=mask))

    S_b = b.cartan_curvature[2].value
    S_t = t.cartan_curvature[2].value
    ginv_b, ginv_t = b.ginv.value, t.ginv.value
    g_b, g_t = b.g.value, t.g.value
    ric_b, ric_t = ricci(S_b), ricci(S_t)
    sc_b = np.einsum("...ab,...ab->...", ginv_b, ric_b)
    sc_t = np.einsum("...ab,...ab->...", ginv_t, ric_t)
    L2_b, L2_t = 2.0 * b.E.value, 2.0 * t.E.value

    inv("cartan_torsion_invariant", "invariant: mixed Cartan torsion C^h_ij", t.C.value, b.C.value)
    inv("v_curvature_invariant", "invariant: Cartan v-curvature S", S_t, S_b)
    inv("vertical_ricci_invariant", "invariant: vertical Ricci tensor (trace of S)", ric_t, ric_b)
    inv("vertical_scalar_invariant", "invariant: L^2 Sc^v", L2_t * sc_t, L2_b * sc_b)
    if n > 2:
        f_b = ric_b - sc_b[..., None, None] * _hbar(b) / (2.0 * (n - 2))
        f_t = ric_t - sc_t[..., None, None] * _hbar(t) / (2.0 * (n - 2))
        inv("vertical_f_tensor_invariant", "invariant: F^v = Ric^v - Sc^v hbar / (2(n-2))", f_t, f_b)
    else:
        checks.append(CheckResult.absent("vertical_f_tensor_invariant", "invariant: F^v = Ric^v - Sc^v hbar / (2(n-2))", "n-2 = 0"))
    inv(
        "vertical_einstein_invariant",
        "invariant: vertical Einstein tensor Ric^v - Sc^v g / 2",
        ric_t - 0.5 * sc_t[..., None, None] * g_t,
        ric_b - 0.5 * sc_b[..., None, None] * g_b,
    )
    inv("djl_over_l_invariant", "invariant: d_J L / L", _fiber_log_derivative(t), _fiber_log_derivative(b))
    X_b, X_t = _test_field(b), _test_field(t)
    inv(
        "v_cartan_derivative_invariant",
        "invariant: vertical Cartan derivative of a fixed pi-vector field",
        t.v_cartan(X_t, "u").value,
        b.v_cartan(X_b, "u").value,
    )

    # sigma-invariants: scale by exp(2 sigma)
    from .curvature import t_tensor

    inv("angular_metric_sigma_invariant", "sigma-invariant: angular metric hbar", _hbar(t), _exp_scale(pair, _hbar(b)), tol_sigma)
    inv(
        "t_tensor",
        "sigma-invariant: T-tensor",
        t_tensor(t).components,
        _exp_scale(pair, t_tensor(b).components),
        tol_sigma,
    )
    inv("cartan_lowered_sigma_invariant", "sigma-invariant: lowered Cartan tensor C_ijk", t.C_low.value, _exp_scale(pair, b.C_low.value), tol_sigma)
    inv("energy_sigma_invariant", "sigma-invariant: energy E", t.E.value, _exp_scale(pair, b.E.value), tol_sigma)

    # conditional: traceless H gives horizontal Ricci-type invariants
    R_b, R_t = b.cartan_curvature[0].value, t.cartan_curvature[0].value
    trH = ricci(d.H_cartan.value)
    rich_b, rich_t = ricci(R_b), ricci(R_t)
    sch_b = np.einsum("...ab,...ab->...", ginv_b, rich_b)
    sch_t = np.einsum("...ab,...ab->...", ginv_t, rich_t)
    hyp_tol = tol_conditional
    conditional = [
        ("horizontal_ricci_conditional", "conditional invariant (Tr H = 0): Ric^h", rich_t, rich_b),
        ("horizontal_scalar_conditional", "conditional invariant (Tr H = 0): L^2 Sc^h", L2_t * sch_t, L2_b * sch_b),
        (
            "horizontal_einstein_conditional",
            "conditional invariant (Tr H = 0): Ric^h - Sc^h g / 2",
            rich_t - 0.5 * sch_t[..., None, None] * g_t,
            rich_b - 0.5 * sch_b[..., None, None] * g_b,
        ),
    ]
    if n > 1:
        conditional.append(
            (
                "horizontal_f_tensor_conditional",
                "conditional invariant (Tr H = 0): F^h = Ric^h - Sc^h g / (2(n-1))",
                rich_t - sch_t[..., None, None] * g_t / (2.0 * (n - 1)),
                rich_b - sch_b[..., None, None] * g_b / (2.0 * (n - 1)),
            )
        )
    for name, anchor, dv, pv in conditional:
        checks.append(_conditional(name, anchor, trH, dv, pv, tol_conditional, hyp_tol, mask))

    # conditional: vertically parallel B* leaves P* unchanged
    Ps_b, Ps_t = b.berwald_curvature[1].value, t.berwald_curvature[1].value
    checks.append(
        _conditional(
            "berwald_hv_curvature_conditional",
            "conditional invariant (D_gamma B* = 0): Berwald P*",
            d.V_berwald.value,
            Ps_t,
            Ps_b,
            tol_conditional,
            hyp_tol,
            mask,
        )
    )
    # conditional: traceless H* gives the Berwald horizontal Ricci invariants
    Rs_b, Rs_t = b.berwald_curvature[0].value, t.berwald_curvature[0].value
    trHs = ricci(d.H_berwald.value)
    rics_b, rics_t = ricci(Rs_b), ricci(Rs_t)
    scs_b = np.einsum("...ab,...ab->...", ginv_b, rics_b)
    scs_t = np.einsum("...ab,...ab->...", ginv_t, rics_t)
    for name, anchor, dv, pv in [
        ("berwald_horizontal_ricci_conditional", "conditional invariant (Tr H* = 0): Ric*^h", rics_t, rics_b),
        ("berwald_horizontal_scalar_conditional", "conditional invariant (Tr H* = 0): L^2 Sc*^h", L2_t * scs_t, L2_b * scs_b),
        (
            "berwald_horizontal_einstein_conditional",
            "conditional invariant (Tr H* = 0): Ric*^h - Sc*^h g / 2",
            rics_t - 0.5 * scs_t[..., None, None] * g_t,
            rics_b - 0.5 * scs_b[..., None, None] * g_b,
        ),
    ]:
        checks.append(_conditional(name, anchor, trHs, dv, pv, tol_conditional, hyp_tol, mask))
    return report


# ---------------------------------------------------------------------------
# homothety and conformality


@dataclass
class HomothetyResult:
    predicates: dict  # name -> {"holds", "max_residual", "violations", "witness"}
    agree: bool
    homothetic: bool
    report: VerificationReport


HOMOTHETY_PREDICATES = {
    "a": "B^h_j vanishes",
    "b": "B^h vanishes",
    "c": "Barthel coefficients unchanged",
    "d": "Cartan coefficients unchanged",
    "e": "d sigma vanishes",
}


def homothety_test(
    model: FinslerModel,
    sigma: ConformalFactor,
    samples,
    tol: float = HOMOTHETY_TOL,
    pair: ConformalPair | None = None,
) -> HomothetyResult:
    """Evaluate the five equivalent homothety predicates and check that they agree.

    Each predicate holds when its per-sample residual stays within ``tol``
    at every sample.  The test is local: a factor whose gradient vanishes on
    the sample box counts as a homothety there.
    """
    pair = pair or ConformalPair(model, sigma, samples)
    b, t, d = pair.base, pair.lifted, pair.deltas

    def per_sample(v):
        return np.abs(v).reshape(v.shape[0], -1).max(axis=1)

    residuals = {
        "a": per_sample(d.B_j.value),
        "b": per_sample(d.B.value),
        "c": per_sample(t.G_i.value - b.G_i.value),
        "d": per_sample(t.Gamma.value - b.Gamma.value) + per_sample(t.C.value - b.C.value),
        "e": per_sample(d.sigma_j.value),
    }
    predicates = {}
    report = VerificationReport(title=f"homothety[{model.family} x {sigma.family}]")
    for key, r in residuals.items():
        r = np.where(pair.mask, r, 0.0)
        bad = np.flatnonzero(r > tol)
        predicates[key] = {
            "statement": HOMOTHETY_PREDICATES[key],
            "holds": bool(bad.size == 0),
            "max_residual": float(r.max()),
            "violations": int(bad.size),
            "witness": int(bad[np.argmax(r[bad])]) if bad.size else None,
        }
    states = {p["holds"] for p in predicates.values()}
    agree = len(states) == 1
    homothetic = agree and states == {True}
    report.checks.append(
        CheckResult(
            "homothety_equivalence",
            "homothety: the five predicates are all true or all false",
            len(pair.u),
            max(p["max_residual"] for p in predicates.values()),
            0.0,
            tol,
            agree,
            {"predicates": predicates, "homothetic": homothetic},
        )
    )
    return HomothetyResult(predicates, agree, homothetic, report)


@dataclass
class ConformalityResult:
    conformal: bool
    sigma_estimate: np.ndarray | None
    base_points: np.ndarray
    residual: np.ndarray
    witness: dict | None
    report: VerificationReport


def conformality_test(model_a: FinslerModel, model_b: FinslerModel, samples, tol: float = 1e-9) -> ConformalityResult:
    """Two structures are conformal iff ``d_J L / L`` agrees everywhere.

    On success ``sigma_hat = log(L_B / L_A)`` is returned at the sample base
    points after confirming it does not depend on the fiber direction.
    """
    if model_a.dim != model_b.dim:
        raise ValueError("models live on manifolds of different dimension")
    u = _sites(samples, model_a.dim)
    ga = LocalGeometry(model_a, u, order=1, strict=False)
    gb = LocalGeometry(model_b, u, order=1, strict=False)
    ra, rb = _fiber_log_derivative(ga), _fiber_log_derivative(gb)
    scale = np.maximum(1.0, np.maximum(np.abs(ra).max(-1), np.abs(rb).max(-1)))
    residual = np.abs(rb - ra).max(-1) / scale
    report = VerificationReport(title=f"conformality[{model_a.family} vs {model_b.family}]")
    check = CheckResult.from_residuals("djl_over_l_match", "conformality: d_J L / L agrees", rb, ra, tol)
    report.checks.append(check)
    if not check.passed:
        k = int(np.argmax(residual))
        witness = {"sample": k, "x": u.x[k].tolist(), "y": u.y[k].tolist(), "residual": float(residual[k])}
        report.details["witness"] = witness
        return ConformalityResult(False, None, u.x, residual, witness, report)
    sigma_hat = 0.5 * np.log(gb.E.value / ga.E.value)
    # y-independence: re-evaluate at a second, rotated fiber direction
    y2 = np.roll(u.y, 1, axis=-1) * 1.7 + 0.3 * u.y
    alt = SupportElement(u.x, y2)
    sigma_alt = 0.5 * np.log(model_b.energy_value(alt.x, alt.y) / model_a.energy_value(alt.x, alt.y))
    fiber = CheckResult.from_residuals(
        "sigma_fiber_independence", "conformality: log(L_B / L_A) is independent of y", sigma_alt, sigma_hat, tol
    )
    report.checks.append(fiber)
    return ConformalityResult(fiber.passed, sigma_hat, u.x, residual, None, report)
