"""Finite-difference oracles, independent of the jet kernel.

Mixed partials use tensor products of the central stencil
``delta^k f(z) = sum_j (-1)^j C(k, j) f(z + (k/2 - j) h)`` (error even in
h), refined by Richardson extrapolation over a geometric sequence of steps
with Ridders' error control: the tableau entry with the smallest error
estimate wins, which balances truncation against roundoff separately for
every coefficient.  Evaluation runs in extended precision.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from finslerkit.jets import monomials


RATIO = 1.4
LEVELS = 10


def _stencil(alpha):
    """Offsets (in units of h) and weights for the mixed difference ``alpha``."""
    axes = []
    for k in alpha:
        axes.append([((k / 2 - j), (-1) ** j * math.comb(k, j)) for j in range(k + 1)])
    offsets, weights = [], []
    for combo in itertools.product(*axes):
        offsets.append([c[0] for c in combo])
        weights.append(math.prod(c[1] for c in combo))
    return np.array(offsets, dtype=float), np.array(weights, dtype=float)


def ridders(estimates, ratio: float = RATIO):
    """Richardson (Neville) tableau over steps ``h, h/ratio, ...`` with error control.

    ``estimates`` has shape ``(levels, m)``.  Every tableau entry gets an
    error estimate from its neighbours and, per column m, the entry with the
    smallest estimate is returned together with that estimate.
    """
    levels, m = estimates.shape
    best = estimates[0].copy()
    err = np.full(m, np.inf)
    prev = [estimates[0]]
    for i in range(1, levels):
        row = [estimates[i]]
        fac = ratio**2
        for j in range(1, i + 1):
            row.append((fac * row[j - 1] - prev[j - 1]) / (fac - 1.0))
            fac *= ratio**2
            e = np.maximum(np.abs(row[j] - row[j - 1]), np.abs(row[j] - prev[j - 1]))
            better = e < err
            best = np.where(better, row[j], best)
            err = np.where(better, e, err)
        prev = row
    return best, err


def fd_coefficients(f, z, order: int, n_fiber: int | None = None, reach: float = 0.5, levels: int = LEVELS):
    """All raw partials of ``f`` at the points ``z`` (shape ``(m, nvars)``) up to ``order``.

    ``f`` maps an array ``(..., nvars)`` to values ``(...)`` and is evaluated
    in extended precision.  The initial step puts the outermost stencil point
    at distance ``reach`` (per coordinate); when ``n_fiber`` is given the last
    ``n_fiber`` variables are a fiber and their steps also scale with its
    norm, matching the ``1/|y|^k`` growth of derivatives of homogeneous
    functions.  Returns ``(values, error_estimates)``, both ``(m, n_monomials)``
    in graded-lex order.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.longdouble))
    m, nvars = z.shape
    scale = np.ones_like(z)
    if n_fiber:
        scale[:, nvars - n_fiber :] = np.sqrt((z[:, nvars - n_fiber :] ** 2).sum(axis=1))[:, None]
    mons = monomials(nvars, order)
    out = np.empty((m, len(mons)))
    errs = np.zeros((m, len(mons)))
    for idx, alpha in enumerate(mons):
        k = sum(alpha)
        if k == 0:
            out[:, idx] = f(z)
            continue
        offsets, weights = (a.astype(np.longdouble) for a in _stencil(alpha))
        jac = np.prod(scale ** np.array(alpha), axis=1)
        h0 = reach / (max(alpha) / 2)
        estimates = np.empty((levels, m), dtype=np.longdouble)
        for level in range(levels):
            h = np.longdouble(h0) / np.longdouble(RATIO) ** level
            pts = z[:, None, :] + h * offsets[None] * scale[:, None, :]
            estimates[level] = f(pts) @ weights / h**k / jac
        value, err = ridders(estimates)
        out[:, idx] = value
        errs[:, idx] = err
    return out, errs


def energy_function(model):
    """``E`` on stacked ``(x, y)`` arrays."""
    n = model.dim

    def f(z):
        return np.asarray(model.energy_value(z[..., :n], z[..., n:]))

    return f


def christoffel_fd(metric, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Levi-Civita symbols ``[h, i, j]`` of a metric ``a(x) -> (n, n)`` by central differences."""
    x = np.asarray(x, dtype=float)
    n = x.size
    a = np.asarray(metric(x), dtype=float)
    da = np.empty((n, n, n))  # da[k] = d_k a
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        da[k] = (np.asarray(metric(x + e)) - np.asarray(metric(x - e))) / (2 * h)
    low = 0.5 * (np.einsum("jli->lij", da) + np.einsum("ilj->lij", da) - da)  # [l, i, j]
    return np.einsum("hl,lij->hij", np.linalg.inv(a), low)


def riemann_fd(metric, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """``Riem^h_{kij}`` (classical sign: ``d_i Gamma^h_jk - d_j Gamma^h_ik + ...``) by differencing the symbols."""
    x = np.asarray(x, dtype=float)
    n = x.size
    G = christoffel_fd(metric, x)
    dG = np.empty((n, n, n, n))  # dG[m] = d_m Gamma
    for m in range(n):
        e = np.zeros(n)
        e[m] = h
        dG[m] = (christoffel_fd(metric, x + e) - christoffel_fd(metric, x - e)) / (2 * h)
    R = (
        np.einsum("ihjk->hkij", dG)
        - np.einsum("jhik->hkij", dG)
        + np.einsum("him,mjk->hkij", G, G)
        - np.einsum("hjm,mik->hkij", G, G)
    )
    return R
