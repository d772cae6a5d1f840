"""Barthel, Cartan and Berwald curvature tensors, Ricci contractions and the
T-tensor.

Component convention: ``R(dbar_i, dbar_j) dbar_k = R^h_kij dbar_h`` for the
curvature operator ``K(X, Y) = -[nabla_X, nabla_Y] + nabla_[X, Y]``; lowered
tensors put the lowered index second, ``R_khij = g_hm R^m_kij``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .jets import SupportElement, contract
from .tensors import TensorBlock, geometry_of


@dataclass(frozen=True)
class CurvatureSet:
    """``R[h, k, i, j] = R^h_kij`` and likewise ``P`` (i horizontal, j vertical) and ``S``."""

    kind: Literal["cartan", "berwald"]
    R: np.ndarray
    P: np.ndarray
    S: np.ndarray
    site: SupportElement

    def lowered(self, block: str = "R", g: np.ndarray | None = None) -> np.ndarray:
        """``X_khij = g_hm X^m_kij``."""
        if g is None:
            raise ValueError("pass the metric values to lower an index")
        return np.einsum("...hm,...mkij->...khij", g, getattr(self, block))


@dataclass(frozen=True)
class RicciSet:
    ric_h: np.ndarray
    ric_v: np.ndarray
    sc_h: np.ndarray
    sc_v: np.ndarray
    einstein_h: np.ndarray
    einstein_v: np.ndarray
    f_h: np.ndarray | None
    f_v: np.ndarray | None
    site: SupportElement
    absent: dict = field(default_factory=dict)


def barthel_curvature(model, u: SupportElement | None = None) -> TensorBlock:
    """``R^h_ij = delta_j G^h_i - delta_i G^h_j``."""
    geo = geometry_of(model, u)
    return TensorBlock(np.array(geo.barthel_curvature.value), "ull", geo.u, "barthel_curvature")


def cartan_curvatures(model, u: SupportElement | None = None) -> CurvatureSet:
    geo = geometry_of(model, u)
    R, P, S = geo.cartan_curvature
    return CurvatureSet("cartan", np.array(R.value), np.array(P.value), np.array(S.value), geo.u)


def berwald_curvatures(model, u: SupportElement | None = None) -> CurvatureSet:
    geo = geometry_of(model, u)
    R, P, _ = geo.berwald_curvature
    R = np.array(R.value)
    return CurvatureSet("berwald", R, np.array(P.value), np.zeros_like(R), geo.u)


def ricci(block: np.ndarray) -> np.ndarray:
    """``Ric_ab`` = trace of ``Z -> K(dbar_a, Z) dbar_b``, i.e. ``X^m_{b a m}``."""
    return np.einsum("...mbam->...ab", block)


def ricci_scalars(model, u: SupportElement | None = None, curv: CurvatureSet | None = None) -> RicciSet:
    """Ricci tensors, scalar curvatures, Einstein tensors and the F tensors.

    ``Sc`` is the trace of the g-raised Ricci map.  ``f_v`` divides by
    ``n - 2`` and is reported absent in dimension 2 (``f_h`` likewise in
    dimension 1).
    """
    geo = geometry_of(model, u)
    if curv is None:
        curv = cartan_curvatures(geo)
    g = geo.g.value
    ginv = geo.ginv.value
    n = geo.n
    ric_h = ricci(curv.R)
    ric_v = ricci(curv.S)
    sc_h = np.einsum("...ab,...ab->...", ginv, ric_h)
    sc_v = np.einsum("...ab,...ab->...", ginv, ric_v)
    yl = geo.y_low.value
    hbar = g - yl[..., :, None] * yl[..., None, :] / (2.0 * geo.E.value)[..., None, None]
    absent = {}
    f_v = f_h = None
    if n > 2:
        f_v = ric_v - sc_v[..., None, None] * hbar / (2.0 * (n - 2))
    else:
        absent["f_v"] = "n-2 = 0"
    if n > 1:
        f_h = ric_h - sc_h[..., None, None] * g / (2.0 * (n - 1))
    else:
        absent["f_h"] = "n-1 = 0"
    return RicciSet(
        ric_h,
        ric_v,
        sc_h,
        sc_v,
        ric_h - 0.5 * sc_h[..., None, None] * g,
        ric_v - 0.5 * sc_v[..., None, None] * g,
        f_h,
        f_v,
        geo.u,
        absent,
    )


def t_tensor(model, u: SupportElement | None = None) -> TensorBlock:
    """``T_ijkl = C_jkl|i + (y_i C_jkl + y_j C_kli + y_k C_lij + y_l C_ijk) / L^2``.

    The first term is the vertical Cartan derivative of the lowered Cartan
    tensor in the direction ``i``; the correction is the cyclic sum over the
    four slots.
    """
    geo = geometry_of(model, u)
    dC = geo.v_cartan(geo.C_low, "lll")  # [j, k, l, i] = C_jkl|i
    first = dC.transpose(3, 0, 1, 2)
    yl = geo.y_low
    Cl = geo.C_low
    cyc = (
        contract("i,jkl->ijkl", yl, Cl)
        + contract("j,kli->ijkl", yl, Cl)
        + contract("k,lij->ijkl", yl, Cl)
        + contract("l,ijk->ijkl", yl, Cl)
    )
    T = first + cyc / geo.L2
    return TensorBlock(np.array(T.value), "llll", geo.u, "T_tensor")
