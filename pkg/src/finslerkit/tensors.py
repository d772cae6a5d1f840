"""Metric-level objects: g, its inverse, the Cartan tensor, the angular metric
and the fundamental form ``Omega = d d_J E``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .geometry import COND_LIMIT, DegenerateMetricError, LocalGeometry
from .jets import SupportElement

__all__ = [
    "TensorBlock",
    "DegenerateMetricError",
    "geometry_of",
    "metric_tensor",
    "cartan_tensor",
    "angular_metric",
    "fundamental_form",
]


@dataclass(frozen=True)
class TensorBlock:
    """Dense components ``(*batch, n, ..., n)`` with per-slot variance.

    ``variance`` holds one letter per slot, ``u`` (upper) or ``l`` (lower),
    in the order the component symbol is written: ``C^h_ij`` is ``"ull"``.
    """

    components: np.ndarray
    variance: str
    site: SupportElement
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        k = len(self.variance)
        n = self.site.dim
        if set(self.variance) - {"u", "l"}:
            raise ValueError(f"variance letters are 'u' or 'l', got {self.variance!r}")
        if k and comps.shape[comps.ndim - k :] != (n,) * k:
            raise ValueError(f"{self.name or 'block'}: components shape {comps.shape} does not end in {(n,) * k}")
        object.__setattr__(self, "components", comps)

    @property
    def rank(self) -> int:
        return len(self.variance)

    @property
    def dim(self) -> int:
        return self.site.dim

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.components.shape[: self.components.ndim - self.rank]

    def __array__(self, dtype=None, copy=None):
        return self.components if dtype is None else self.components.astype(dtype)

    def __getitem__(self, item):
        return self.components[item]

    def symmetry_defect(self, axes: tuple[int, int], sign: float = 1.0) -> float:
        """Largest ``|T - sign * T^(swap axes)|``; axes index tensor slots."""
        nb = len(self.batch_shape)
        perm = list(range(self.components.ndim))
        i, j = nb + axes[0], nb + axes[1]
        perm[i], perm[j] = perm[j], perm[i]
        diff = self.components - sign * np.transpose(self.components, perm)
        return float(np.abs(diff).max()) if diff.size else 0.0


def geometry_of(model, u: SupportElement | None = None, order: int | None = None, strict: bool = True) -> LocalGeometry:
    """Accept either a model plus site, or an already built :class:`LocalGeometry`."""
    if isinstance(model, LocalGeometry):
        return model
    if u is None:
        raise ValueError("a support element is required")
    return LocalGeometry(model, u, order=order, strict=strict)


def _block(jet, variance: str, geo: LocalGeometry, name: str, **meta) -> TensorBlock:
    return TensorBlock(np.array(jet.value), variance, geo.u, name, meta)


def metric_tensor(model, u: SupportElement | None = None) -> tuple[TensorBlock, TensorBlock]:
    """``g_ij = dot d_i dot d_j E`` and its inverse.

    Raises :class:`DegenerateMetricError` (carrying the eigenvalue) when g is
    not positive definite.  Samples with condition number above ``1e10``
    are listed in ``meta["flagged"]``.
    """
    geo = geometry_of(model, u)
    ginv = geo.ginv  # raises on indefinite metrics
    cond = np.atleast_1d(geo.cond)
    flagged = np.flatnonzero(cond > COND_LIMIT).tolist()
    meta = {"cond": geo.cond, "flagged": flagged}
    return _block(geo.g, "ll", geo, "g", **meta), _block(ginv, "uu", geo, "g_inv", **meta)


class CartanTensors(NamedTuple):
    mixed: TensorBlock  # C^h_ij
    lowered: TensorBlock  # C_ijk
    form: TensorBlock  # C_i = C^h_ih


def cartan_tensor(model, u: SupportElement | None = None) -> CartanTensors:
    geo = geometry_of(model, u)
    mixed = geo.C.value
    form = np.einsum("...hih->...i", mixed)
    return CartanTensors(
        _block(geo.C, "ull", geo, "C_mixed"),
        _block(geo.C_low, "lll", geo, "C_lowered"),
        TensorBlock(form, "l", geo.u, "C_form"),
    )


def angular_metric(model, u: SupportElement | None = None) -> TensorBlock:
    """``hbar_ij = g_ij - y_i y_j / L^2``."""
    geo = geometry_of(model, u)
    g = geo.g.value
    yl = geo.y_low.value
    L2 = 2.0 * geo.E.value
    hbar = g - yl[..., :, None] * yl[..., None, :] / L2[..., None, None]
    return TensorBlock(hbar, "ll", geo.u, "hbar")


@dataclass(frozen=True)
class FundamentalForm:
    """Components ``Omega[a, b] = Omega(e_a, e_b)`` on ``(d_1..d_n, dot d_1..dot d_n)``.

    ``residual`` is ``max |i_G Omega + dE|`` over the coordinate covectors,
    per sample, with ``G = y^i d_i - 2 G^i dot d_i`` the canonical spray.
    """

    omega: np.ndarray
    residual: np.ndarray
    site: SupportElement


def omega_components(geo: LocalGeometry) -> np.ndarray:
    n = geo.n
    mixed = geo.y_low.grad(range(n)).value  # [i, j] = d_j dot d_i E
    g = geo.g.value
    batch = g.shape[:-2]
    om = np.zeros(batch + (2 * n, 2 * n))
    # Omega(d_j, d_i) = d_j dot d_i E - d_i dot d_j E
    om[..., :n, :n] = np.swapaxes(mixed, -1, -2) - mixed
    # Omega(dot d_j, d_i) = g_ji and its antisymmetric partner
    om[..., n:, :n] = g
    om[..., :n, n:] = -np.swapaxes(g, -1, -2)
    return om


def fundamental_form(model, u: SupportElement | None = None) -> FundamentalForm:
    geo = geometry_of(model, u)
    n = geo.n
    om = omega_components(geo)
    y = geo.u.y
    v = np.concatenate([y, -2.0 * geo.G.value], axis=-1)
    dE = np.concatenate([geo.E.grad(range(n)).value, geo.y_low.value], axis=-1)
    res = np.einsum("...a,...ab->...b", v, om) + dE
    return FundamentalForm(om, np.abs(res).max(axis=-1), geo.u)
