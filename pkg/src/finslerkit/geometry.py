"""Batched jet pipeline shared by the tensor, connection and curvature modules.

Every object is kept as a jet so that ``d_k``, ``dot d_k`` and the adapted
derivative ``delta_k = d_k - G^m_k dot d_m`` of any quantity are read straight
from its coefficients.  Each derivative costs one jet order; with the energy
at order ``K`` the pipeline ends with

    g, g^-1 : K-2     C, G : K-3 / K-2     G_i, Gamma : K-3
    G_ij : K-4        curvatures : K-4 (Cartan), K-5 (Berwald)

Tensor axes follow the index order of the component symbols: ``g[i, j]``,
``C[h, i, j] = C^h_ij``, ``Gi[h, i] = G^h_i``, ``R[h, k, i, j] = R^h_kij``.
"""
from __future__ import annotations

import string
from functools import cached_property

import numpy as np

from . import jets
from .jets import Jet, JetOrderError, SupportElement, contract

COND_LIMIT = 1e10
# Least energy order that reaches every block (Berwald curvatures and the
# conformal H* block end at order 0).
PIPELINE_ORDER = 5


def pipeline_order() -> int:
    return min(PIPELINE_ORDER, jets.max_jet_order())


class DegenerateMetricError(ArithmeticError):
    """The fiber Hessian of the energy is not positive definite."""

    def __init__(self, message: str, eigenvalue: float, sample: int | None = None):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.sample = sample


_FREE = string.ascii_lowercase[:12]


def _idx(rank: int, skip: str = "") -> str:
    letters = [c for c in _FREE if c not in skip]
    return "".join(letters[:rank])


def frame_derivative(T: Jet, G_i: Jet, n: int) -> Jet:
    """``delta_k T = d_k T - G^m_k dot d_m T`` with ``k`` appended last."""
    dx = T.grad(range(n))
    dy = T.grad(range(n, 2 * n))
    a = _idx(T.rank, "mkz")
    return dx - contract(f"{a}m,mk->{a}k", dy, G_i)


def fiber_derivative(T: Jet, n: int) -> Jet:
    return T.grad(range(n, 2 * n))


def covariant(T: Jet, variance: str, base: Jet, coeff: Jet) -> Jet:
    """Covariant derivative from a precomputed ``base`` (``delta`` or ``dot d``).

    ``coeff[h, a, k]`` is the connection coefficient of ``nabla_k dbar_a``;
    ``variance`` has one ``u``/``l`` per tensor slot of ``T``.
    """
    if len(variance) != T.rank:
        raise ValueError(f"variance {variance!r} does not match tensor rank {T.rank}")
    out = base
    a = _idx(T.rank, "mkz")
    for slot, kind in enumerate(variance):
        src = a[:slot] + "m" + a[slot + 1 :]
        if kind == "u":
            out = out + contract(f"{src},{a[slot]}mk->{a}k", T, coeff)
        elif kind == "l":
            out = out - contract(f"{src},m{a[slot]}k->{a}k", T, coeff)
        else:
            raise ValueError(f"variance letters are 'u' or 'l', got {kind!r}")
    return out


class LocalGeometry:
    """Lazily built jets of every local Finsler quantity at a batch of sites.

    ``energy`` may be supplied directly (a jet of ``E``); otherwise it is
    evaluated from ``model`` at order ``order`` (default :func:`pipeline_order`).
    """

    def __init__(self, model=None, u: SupportElement | None = None, order: int | None = None, energy: Jet | None = None, strict: bool = True):
        if energy is None:
            if model is None or u is None:
                raise ValueError("need a model and a support element, or an energy jet")
            if order is None:
                order = pipeline_order()
            energy = model.energy_jet(u, order)
        self.model = model
        self.E = energy
        self.u = energy.center if u is None else u
        self.n = energy.nvars // 2
        self.order = energy.order
        self.strict = strict

    # -- metric level ------------------------------------------------------

    def need(self, order: int, what: str):
        if self.order < order:
            raise JetOrderError(f"{what} needs energy jets of order >= {order}, have {self.order}")

    @cached_property
    def Y(self) -> Jet:
        """The fiber coordinate vector ``y^h`` as a rank-1 jet."""
        _, ys = jets.variables(self.u, self.order)
        return Jet.stack(ys)

    @cached_property
    def y_low(self) -> Jet:
        """``y_i = g_ij y^j = dot d_i E``."""
        return fiber_derivative(self.E, self.n)

    @cached_property
    def L2(self) -> Jet:
        return self.E * 2.0

    @cached_property
    def g(self) -> Jet:
        self.need(2, "the metric")
        return fiber_derivative(self.y_low, self.n)

    @cached_property
    def eigen_min(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.g.value).min(axis=-1)

    @cached_property
    def cond(self) -> np.ndarray:
        with np.errstate(all="ignore"):
            return np.linalg.cond(self.g.value)

    @cached_property
    def valid(self) -> np.ndarray:
        """Samples with a positive definite, well-conditioned metric."""
        return (self.eigen_min > 0) & (self.cond <= COND_LIMIT)

    @cached_property
    def ginv(self) -> Jet:
        eig = np.atleast_1d(self.eigen_min)
        if self.strict and not np.all(eig > 0):
            k = int(np.argmin(eig))
            raise DegenerateMetricError(
                f"metric is not positive definite (smallest eigenvalue {eig[k]:.3e})", float(eig[k]), k
            )
        g = self.g
        ok = np.isfinite(self.cond) & (np.abs(np.linalg.det(g.value)) > 0)
        if not np.all(ok):
            # keep the batch alive; singular samples are masked by ``valid``
            coeffs = g.coeffs.copy()
            eye = np.eye(self.n)
            coeffs[~ok] = 0.0
            coeffs[~ok, ..., 0] = eye
            g = g._wrap(coeffs)
        return jets.inverse_matrix(g)

    @cached_property
    def C_low(self) -> Jet:
        """``C_ijk = 1/2 dot d_k g_ij`` (totally symmetric)."""
        return fiber_derivative(self.g, self.n) * 0.5

    @cached_property
    def C(self) -> Jet:
        """``C^h_ij = g^{hl} C_lij``."""
        return contract("hl,lij->hij", self.ginv, self.C_low)

    @cached_property
    def gamma(self) -> Jet:
        """Christoffel-type symbols ``gamma^h_ij`` built from x-derivatives of ``g``."""
        dg = self.g.grad(range(self.n))  # dg[a, b, c] = d_c g_ab
        return contract("hl,lij->hij", self.ginv, self._christoffel_low(dg)) * 0.5

    # -- spray and Barthel -------------------------------------------------

    @cached_property
    def G(self) -> Jet:
        """Spray ``G^h = 1/2 g^{hl}(y^k d_k dot d_l E - d_l E)``.

        Equal to ``1/2 gamma^h_ij y^i y^j`` (the Cartan terms drop out after
        contraction with ``y``) but one jet order cheaper.
        """
        self.need(2, "the spray")
        n = self.n
        mixed = self.y_low.grad(range(n))  # mixed[l, k] = d_k dot d_l E
        dE = self.E.grad(range(n))
        rhs = contract("lk,k->l", mixed, self.Y) - dE
        return contract("hl,l->h", self.ginv, rhs) * 0.5

    @cached_property
    def G_i(self) -> Jet:
        return fiber_derivative(self.G, self.n)

    @cached_property
    def G_ij(self) -> Jet:
        """Berwald coefficients ``G^h_ij = dot d_j G^h_i``."""
        self.need(4, "the Berwald coefficients")
        return fiber_derivative(self.G_i, self.n)

    def delta(self, T: Jet) -> Jet:
        return frame_derivative(T, self.G_i, self.n)

    def dot(self, T: Jet) -> Jet:
        return fiber_derivative(T, self.n)

    @cached_property
    def barthel_curvature(self) -> Jet:
        """``R^h_ij = delta_j G^h_i - delta_i G^h_j``."""
        self.need(4, "the Barthel curvature")
        dG = self.delta(self.G_i)  # dG[h, i, j] = delta_j G^h_i
        return dG - dG.transpose(0, 2, 1)

    # -- Cartan connection ---------------------------------------------------

    @cached_property
    def dg_frame(self) -> Jet:
        return self.delta(self.g)  # [a, b, c] = delta_c g_ab

    @cached_property
    def Gamma(self) -> Jet:
        """``Gamma^h_ij = 1/2 g^{hl}(delta_i g_lj + delta_j g_il - delta_l g_ij)``."""
        self.need(4, "the Cartan h-coefficients")
        return contract("hl,lij->hij", self.ginv, self._christoffel_low(self.dg_frame)) * 0.5

    @staticmethod
    def _christoffel_low(d: Jet) -> Jet:
        # d[a, b, c] = D_c g_ab ; returns low[l, i, j] = D_i g_lj + D_j g_il - D_l g_ij
        t1 = d.transpose(0, 2, 1)  # [l, i, j] <- d[l, j, i] = D_i g_lj
        t2 = d  # [l, i, j] = D_j g_li = D_j g_il
        t3 = d.transpose(2, 0, 1)  # [l, i, j] <- d[i, j, l] = D_l g_ij
        return t1 + t2 - t3

    def h_cartan(self, T: Jet, variance: str) -> Jet:
        return covariant(T, variance, self.delta(T), self.Gamma)

    def v_cartan(self, T: Jet, variance: str) -> Jet:
        return covariant(T, variance, self.dot(T), self.C)

    def h_berwald(self, T: Jet, variance: str) -> Jet:
        return covariant(T, variance, self.delta(T), self.G_ij)

    @cached_property
    def C_stroke_o(self) -> Jet:
        """``C^h_{ij|o} = C^h_{ij|k} y^k``."""
        return contract("hijk,k->hij", self.h_cartan(self.C, "ull"), self.Y)

    # -- curvature -----------------------------------------------------------

    def curvatures(self, F: Jet, Cv: Jet | None):
        """h-, mixed and v-curvature of the connection ``(G^h_i, F, Cv)``.

        ``F[h, k, i]`` and ``Cv[h, k, i]`` are the coefficients of
        ``nabla_{delta_i} dbar_k`` and ``nabla_{dot d_i} dbar_k``.  With the
        frame brackets ``[delta_i, delta_j] = R^m_ij dot d_m`` and
        ``[delta_i, dot d_j] = G^m_ij dot d_m`` this expands the curvature
        operator ``K(X, Y) = -[nabla_X, nabla_Y] + nabla_[X, Y]``.
        """
        dF = self.delta(F)  # [h, k, i, j] = delta_j F^h_ki
        FF = contract("mki,hmj->hkij", F, F)  # F^m_ki F^h_mj
        R = dF - dF.transpose(0, 1, 3, 2) + FF - FF.transpose(0, 1, 3, 2)
        if Cv is None:
            P = self.dot(F)
            S = None
        else:
            R = R + contract("hkm,mij->hkij", Cv, self.barthel_curvature)
            dC = self.delta(Cv)  # [h, k, j, i] = delta_i Cv^h_kj
            P = (
                self.dot(F)
                + contract("mki,hmj->hkij", F, Cv)
                + contract("mij,hkm->hkij", self.G_ij, Cv)
                - dC.transpose(0, 1, 3, 2)
                - contract("mkj,hmi->hkij", Cv, F)
            )
            dv = self.dot(Cv)  # [h, k, i, j] = dot d_j Cv^h_ki
            CC = contract("mki,hmj->hkij", Cv, Cv)
            S = dv - dv.transpose(0, 1, 3, 2) + CC - CC.transpose(0, 1, 3, 2)
        return R, P, S

    @cached_property
    def cartan_curvature(self):
        self.need(4, "the Cartan curvatures")
        return self.curvatures(self.Gamma, self.C)

    @cached_property
    def berwald_curvature(self):
        self.need(5, "the Berwald curvatures")
        return self.curvatures(self.G_ij, None)
