"""Canonical spray, Barthel connection, Cartan and Berwald coefficients and
covariant derivatives in the adapted frame ``(delta_i, dot d_i)``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from . import jets
from .geometry import LocalGeometry, covariant
from .jets import Jet, SupportElement
from .tensors import TensorBlock, geometry_of


@dataclass(frozen=True)
class SprayData:
    """``G[h]``, ``G_i[h, i] = dot d_i G^h`` and ``G_ij[h, i, j] = dot d_j G^h_i``."""

    G: np.ndarray
    G_i: np.ndarray | None
    G_ij: np.ndarray | None
    site: SupportElement

    def homogeneity_residual(self) -> np.ndarray:
        """Per sample ``max |G^h_i y^i - 2 G^h|`` and ``max |G^h_ij y^j - G^h_i|``."""
        y = self.site.y
        out = np.zeros(self.G.shape[:-1])
        if self.G_i is not None:
            out = np.maximum(out, np.abs(np.einsum("...hi,...i->...h", self.G_i, y) - 2.0 * self.G).max(-1))
        if self.G_ij is not None:
            r = np.einsum("...hij,...j->...hi", self.G_ij, y) - self.G_i
            out = np.maximum(out, np.abs(r).reshape(r.shape[:-2] + (-1,)).max(-1))
        return out


@dataclass(frozen=True)
class ConnectionCoeffs:
    """Coefficients ``(G^h_i, h_coeffs, v_coeffs)``; ``h[h, k, i]`` belongs to
    ``nabla_{delta_i} dbar_k`` and ``v[h, k, i]`` to ``nabla_{dot d_i} dbar_k``."""

    kind: Literal["cartan", "berwald"]
    h_coeffs: np.ndarray
    v_coeffs: np.ndarray
    barthel: np.ndarray
    site: SupportElement

    def deflection_residual(self) -> np.ndarray:
        """Per sample ``max |h^h_ij y^j - G^h_i|``."""
        r = np.einsum("...hij,...j->...hi", self.h_coeffs, self.site.y) - self.barthel
        return np.abs(r).reshape(r.shape[:-2] + (-1,)).max(-1)


def spray(model, u: SupportElement | None = None) -> SprayData:
    geo = geometry_of(model, u)
    return SprayData(np.array(geo.G.value), None, None, geo.u)


def spray_from_christoffel(model, u: SupportElement | None = None) -> np.ndarray:
    """``1/2 gamma^h_ij y^i y^j``; an independent route to the spray."""
    geo = geometry_of(model, u)
    y = geo.u.y
    return 0.5 * np.einsum("...hij,...i,...j->...h", geo.gamma.value, y, y)


def barthel(model, u: SupportElement | None = None) -> SprayData:
    geo = geometry_of(model, u)
    return SprayData(np.array(geo.G.value), np.array(geo.G_i.value), np.array(geo.G_ij.value), geo.u)


def cartan_coeffs(model, u: SupportElement | None = None) -> ConnectionCoeffs:
    geo = geometry_of(model, u)
    return ConnectionCoeffs("cartan", np.array(geo.Gamma.value), np.array(geo.C.value), np.array(geo.G_i.value), geo.u)


def berwald_coeffs(model, u: SupportElement | None = None) -> ConnectionCoeffs:
    geo = geometry_of(model, u)
    Gij = np.array(geo.G_ij.value)
    return ConnectionCoeffs("berwald", Gij, np.zeros_like(Gij), np.array(geo.G_i.value), geo.u)


Kind = Literal["h-cartan", "v-cartan", "h-berwald"]

# named fields that live on the geometry pipeline, with their variance
NAMED_FIELDS = {
    "g": ("g", "ll"),
    "g_inv": ("ginv", "uu"),
    "C": ("C", "ull"),
    "C_low": ("C_low", "lll"),
    "y": ("Y", "u"),
    "y_low": ("y_low", "l"),
    "L2": ("L2", ""),
    "E": ("E", ""),
    "G_i": ("G_i", "ul"),
}


def _field_jet(field, geo: LocalGeometry) -> Jet:
    if isinstance(field, Jet):
        return field
    if isinstance(field, str):
        return getattr(geo, NAMED_FIELDS[field][0])
    if callable(field):
        # a user evaluator f(x, y) -> scalar or nested sequence, jet-aware
        return _evaluate_components(field, geo)
    raise TypeError(f"unsupported field {field!r}")


def _evaluate_components(fn: Callable, geo: LocalGeometry) -> Jet:
    xs, ys = jets.variables(geo.u, geo.order)
    out = fn(xs, ys)

    def to_jet(v):
        if isinstance(v, Jet):
            return v
        if isinstance(v, (list, tuple)):
            return Jet.stack([to_jet(w) for w in v])
        return xs[0] * 0.0 + float(v)

    result = to_jet(out)
    jets._check_finite(result, "field evaluation")
    return result


def covariant_derivative(
    model,
    field,
    kind: Kind,
    u: SupportElement | None = None,
    variance: str | None = None,
    as_jet: bool = False,
):
    """Covariant derivative of ``field`` with one extra lower slot appended.

    ``field`` is a jet, the name of a pipeline field (``"g"``, ``"C"``, ...)
    or a jet-aware evaluator ``f(x, y)`` returning nested component lists.
    """
    geo = geometry_of(model, u)
    T = _field_jet(field, geo)
    if variance is None:
        if isinstance(field, str):
            variance = NAMED_FIELDS[field][1]
        elif T.rank == 0:
            variance = ""
        else:
            raise ValueError("variance is required for this field")
    if kind == "h-cartan":
        out = covariant(T, variance, geo.delta(T), geo.Gamma)
    elif kind == "v-cartan":
        out = covariant(T, variance, geo.dot(T), geo.C)
    elif kind == "h-berwald":
        out = covariant(T, variance, geo.delta(T), geo.G_ij)
    else:
        raise ValueError(f"unknown covariant derivative kind {kind!r}")
    if as_jet:
        return out
    return TensorBlock(np.array(out.value), variance + "l", geo.u, f"{kind} derivative")


def berwald_cartan_defect(model, u: SupportElement | None = None) -> np.ndarray:
    """Per sample ``max |G^h_ij - Gamma^h_ij - C^h_{ij|o}|``."""
    geo = geometry_of(model, u)
    d = geo.G_ij.value - geo.Gamma.value - geo.C_stroke_o.value
    return np.abs(d).reshape(d.shape[:-3] + (-1,)).max(-1)
