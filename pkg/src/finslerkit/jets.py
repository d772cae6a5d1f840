"""Truncated multivariate Taylor jets on the slit tangent bundle.

A :class:`Jet` stores every mixed partial derivative of a (possibly
tensor-valued, possibly batched) field up to a fixed total order.  The
coefficient convention is *raw partial derivatives*: the entry for the
multi-index ``a`` is ``d^|a| f / dz^a`` evaluated at the center, with no
factorial division.  Products therefore carry multinomial weights.

Variables are ordered ``(x^1..x^n, y^1..y^n)``; monomials are stored in
graded lexicographic order so that a jet of lower order is a prefix of
the coefficient vector.

Coefficient arrays have shape ``(*batch, *tensor, N)`` where ``N`` is the
number of monomials of total degree ``<= order`` in ``nvars`` variables.
"""
from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_MAX_ORDER = 6


def max_jet_order() -> int:
    """Engine-wide default jet order (``FINSLER_MAX_JET_ORDER``, default 6)."""
    raw = os.environ.get("FINSLER_MAX_JET_ORDER")
    if raw is None or raw.strip() == "":
        return DEFAULT_MAX_ORDER
    value = int(raw)
    if value < 0:
        raise ValueError("FINSLER_MAX_JET_ORDER must be non-negative")
    return value


class JetError(ValueError):
    """Base class for jet-kernel failures."""


class JetOrderError(JetError):
    """Raised when a derivative would exhaust the available jet order."""


class JetDomainError(JetError):
    """A non-finite coefficient appeared while evaluating a field."""

    def __init__(self, message: str, multi_index: tuple[int, ...] | None = None):
        super().__init__(message)
        self.multi_index = multi_index


class JetMismatchError(JetError):
    """Operands of a strict jet operation do not share center and order."""


@dataclass(frozen=True)
class SupportElement:
    """A point ``(x, y)`` of the slit tangent bundle.

    ``x`` and ``y`` have shape ``(n,)`` or ``(*batch, n)``.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape != y.shape or x.ndim == 0:
            raise ValueError(f"x and y must share a shape (..., n); got {x.shape} and {y.shape}")
        if not np.all(np.linalg.norm(y, axis=-1) > 0):
            raise ValueError("support element lies on the zero section (y = 0)")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return self.x.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.x.shape[:-1]

    def __len__(self) -> int:
        return int(np.prod(self.batch_shape)) if self.batch_shape else 1

    def __getitem__(self, item) -> "SupportElement":
        if not self.batch_shape:
            raise IndexError("unbatched support element")
        return SupportElement(self.x[item], self.y[item])

    def same_as(self, other: "SupportElement") -> bool:
        return (
            self.x.shape == other.x.shape
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )


# ---------------------------------------------------------------------------
# index tables


@functools.lru_cache(maxsize=None)
def monomials(nvars: int, order: int) -> tuple[tuple[int, ...], ...]:
    """All multi-indices of total degree ``<= order``, graded lexicographic."""
    out: list[tuple[int, ...]] = []

    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for first in range(total, -1, -1):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    for degree in range(order + 1):
        out.extend(compositions(degree, nvars))
    return tuple(out)


@functools.lru_cache(maxsize=None)
def monomial_index(nvars: int, order: int) -> dict[tuple[int, ...], int]:
    return {m: i for i, m in enumerate(monomials(nvars, order))}


@functools.lru_cache(maxsize=None)
def n_coeffs(nvars: int, order: int) -> int:
    return math.comb(nvars + order, order)


@functools.lru_cache(maxsize=None)
def _product_table(nvars: int, order: int):
    """Pairs ``(a, b)`` with ``a + b = c`` grouped by ``c`` plus multinomial weights."""
    mons = monomials(nvars, order)
    index = monomial_index(nvars, order)
    ia, ib, weights, starts = [], [], [], []
    for c in mons:
        starts.append(len(ia))
        ranges = [range(ck + 1) for ck in c]
        for a in _product_ranges(ranges):
            b = tuple(ck - ak for ck, ak in zip(c, a))
            w = 1
            for ck, ak in zip(c, a):
                w *= math.comb(ck, ak)
            ia.append(index[a])
            ib.append(index[b])
            weights.append(float(w))
    return (
        np.asarray(ia, dtype=np.intp),
        np.asarray(ib, dtype=np.intp),
        np.asarray(weights),
        np.asarray(starts, dtype=np.intp),
    )


def _product_ranges(ranges):
    if not ranges:
        yield ()
        return
    for head in ranges[0]:
        for tail in _product_ranges(ranges[1:]):
            yield (head,) + tail


@functools.lru_cache(maxsize=None)
def _derivative_table(nvars: int, order: int, var: int) -> np.ndarray:
    """Source positions for ``d/dz_var`` of an order-``order`` jet."""
    index = monomial_index(nvars, order)
    src = []
    for m in monomials(nvars, order - 1):
        shifted = list(m)
        shifted[var] += 1
        src.append(index[tuple(shifted)])
    return np.asarray(src, dtype=np.intp)


# ---------------------------------------------------------------------------
# the jet type


class Jet:
    """Immutable truncated Taylor jet (raw-derivative coefficients).

    ``rank`` counts the tensor axes sitting between the batch axes and the
    coefficient axis.
    """

    __slots__ = ("coeffs", "order", "nvars", "rank", "center")
    __array_priority__ = 1000

    def __init__(self, coeffs, order: int, nvars: int, rank: int = 0, center=None):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != n_coeffs(nvars, order):
            raise JetError(
                f"coefficient axis has length {coeffs.shape[-1]}, "
                f"expected {n_coeffs(nvars, order)} for nvars={nvars}, order={order}"
            )
        if coeffs.ndim < rank + 1:
            raise JetError("coefficient array has fewer axes than the tensor rank")
        self.coeffs = coeffs
        self.order = order
        self.nvars = nvars
        self.rank = rank
        self.center = center

    # -- construction -----------------------------------------------------

    @classmethod
    def variable(cls, value, var: int, nvars: int, order: int, center=None) -> "Jet":
        """Jet of the coordinate function ``z_var`` with value(s) ``value``."""
        value = np.asarray(value, dtype=float)
        coeffs = np.zeros(value.shape + (n_coeffs(nvars, order),))
        coeffs[..., 0] = value
        if order >= 1:
            coeffs[..., 1 + var] = 1.0
        return cls(coeffs, order, nvars, 0, center)

    @classmethod
    def constant(cls, value, like: "Jet", batched: bool = False) -> "Jet":
        """Constant tensor field shaped like ``like``'s batch.

        ``value`` has shape ``(*tensor)``, or ``(*batch, *tensor)`` when
        ``batched`` is true.
        """
        value = np.asarray(value, dtype=float)
        batch = like.batch_shape
        if batched:
            rank = value.ndim - len(batch)
            full = value
        else:
            rank = value.ndim
            full = np.broadcast_to(value, batch + value.shape)
        coeffs = np.zeros(full.shape + (n_coeffs(like.nvars, like.order),))
        coeffs[..., 0] = full
        return cls(coeffs, like.order, like.nvars, rank, like.center)

    # -- shape helpers ----------------------------------------------------

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[: self.coeffs.ndim - self.rank - 1]

    @property
    def tensor_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[self.coeffs.ndim - self.rank - 1 : -1]

    @property
    def value(self) -> np.ndarray:
        """Order-0 coefficient, shape ``(*batch, *tensor)``."""
        return self.coeffs[..., 0]

    def coeff(self, multi_index: Sequence[int]) -> np.ndarray:
        """Raw partial derivative for ``multi_index`` (length ``nvars``)."""
        key = tuple(int(k) for k in multi_index)
        if len(key) != self.nvars:
            raise JetError(f"multi-index must have {self.nvars} entries")
        if sum(key) > self.order:
            raise JetOrderError(f"multi-index {key} exceeds jet order {self.order}")
        return self.coeffs[..., monomial_index(self.nvars, self.order)[key]]

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise JetOrderError(f"cannot raise jet order {self.order} to {order}")
        if order == self.order:
            return self
        n = n_coeffs(self.nvars, order)
        return Jet(self.coeffs[..., :n], order, self.nvars, self.rank, self.center)

    def _wrap(self, coeffs, order=None, rank=None) -> "Jet":
        return Jet(
            coeffs,
            self.order if order is None else order,
            self.nvars,
            self.rank if rank is None else rank,
            self.center,
        )

    def __getitem__(self, key) -> "Jet":
        if not isinstance(key, tuple):
            key = (key,)
        if len(key) > self.rank:
            raise IndexError("too many tensor indices")
        key = key + (slice(None),) * (self.rank - len(key))
        batch_key = (slice(None),) * len(self.batch_shape)
        sub = self.coeffs[batch_key + key + (slice(None),)]
        new_rank = sub.ndim - len(self.batch_shape) - 1
        return self._wrap(sub, rank=new_rank)

    def transpose(self, *axes: int) -> "Jet":
        """Permute tensor axes (``axes`` indexes tensor axes only)."""
        nb = len(self.batch_shape)
        perm = list(range(nb)) + [nb + a for a in axes] + [self.coeffs.ndim - 1]
        return self._wrap(np.transpose(self.coeffs, perm))

    @staticmethod
    def stack(jets: Sequence["Jet"], axis: int = 0) -> "Jet":
        """Stack equal-rank jets along a new tensor axis at position ``axis``."""
        order = min(j.order for j in jets)
        jets = [j.truncate(order) for j in jets]
        rank = jets[0].rank
        if any(j.rank != rank for j in jets):
            raise JetError("stack requires equal ranks")
        nb = len(jets[0].batch_shape)
        coeffs = np.stack([j.coeffs for j in jets], axis=nb + axis)
        return Jet(coeffs, order, jets[0].nvars, rank + 1, jets[0].center)

    # -- differentiation --------------------------------------------------

    def d(self, var: int) -> "Jet":
        """Partial derivative with respect to variable ``var``."""
        if self.order < 1:
            raise JetOrderError("jet order exhausted: cannot differentiate an order-0 jet")
        src = _derivative_table(self.nvars, self.order, var)
        return self._wrap(self.coeffs[..., src], order=self.order - 1)

    def grad(self, variables: Sequence[int]) -> "Jet":
        """Derivatives stacked along a new *last* tensor axis."""
        if self.order < 1:
            raise JetOrderError("jet order exhausted: cannot differentiate an order-0 jet")
        parts = [self.coeffs[..., _derivative_table(self.nvars, self.order, v)] for v in variables]
        return self._wrap(np.stack(parts, axis=-2), order=self.order - 1, rank=self.rank + 1)

    # -- arithmetic -------------------------------------------------------

    def _align(self, other: "Jet"):
        order = min(self.order, other.order)
        a, b = self.truncate(order), other.truncate(order)
        ca, cb = a.coeffs, b.coeffs
        if a.rank == b.rank:
            return ca, cb, order, a.rank
        if a.rank == 0:
            ca = ca.reshape(ca.shape[:-1] + (1,) * b.rank + ca.shape[-1:])
            return ca, cb, order, b.rank
        if b.rank == 0:
            cb = cb.reshape(cb.shape[:-1] + (1,) * a.rank + cb.shape[-1:])
            return ca, cb, order, a.rank
        raise JetError(f"elementwise op between ranks {a.rank} and {b.rank}; use contract()")

    def __add__(self, other):
        if not isinstance(other, Jet):
            arr = np.asarray(other, dtype=float)
            out = self.coeffs.copy()
            out[..., 0] = out[..., 0] + arr
            return self._wrap(out)
        ca, cb, order, rank = self._align(other)
        return Jet(ca + cb, order, self.nvars, rank, self.center)

    __radd__ = __add__

    def __neg__(self):
        return self._wrap(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            arr = np.asarray(other, dtype=float)
            if arr.ndim == 0:
                return self._wrap(self.coeffs * arr)
            return self._wrap(self.coeffs * arr[..., None])
        ca, cb, order, rank = self._align(other)
        return Jet(_pair_product(ca, cb, self.nvars, order), order, self.nvars, rank, self.center)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / np.asarray(other, dtype=float))
        return self * reciprocal(other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, power):
        if isinstance(power, Jet):
            return exp(log(self) * power)
        if float(power).is_integer() and power >= 0:
            p = int(power)
            result = None
            base = self
            while p:
                if p & 1:
                    result = base if result is None else result * base
                p >>= 1
                if p:
                    base = base * base
            return result if result is not None else self * 0.0 + 1.0
        return _compose(self, _power_derivs(float(power)))

    def __repr__(self):
        return (
            f"Jet(order={self.order}, nvars={self.nvars}, batch={self.batch_shape}, "
            f"tensor={self.tensor_shape})"
        )


def _pair_product(ca: np.ndarray, cb: np.ndarray, nvars: int, order: int) -> np.ndarray:
    ia, ib, w, starts = _product_table(nvars, order)
    prod = ca[..., ia] * cb[..., ib]
    prod *= w
    return np.add.reduceat(prod, starts, axis=-1)


# ---------------------------------------------------------------------------
# contraction


def contract(subscripts: str, a, b) -> Jet:
    """``einsum`` over tensor axes of two operands (jets or constant arrays).

    Subscripts name tensor axes only; batch axes are implicit and shared.
    Constant operands are arrays of shape ``(*tensor)`` or ``(*batch, *tensor)``.
    """
    inputs, output = subscripts.replace(" ", "").split("->")
    sa, sb = inputs.split(",")
    if isinstance(a, Jet) and isinstance(b, Jet):
        order = min(a.order, b.order)
        a, b = a.truncate(order), b.truncate(order)
        ia, ib, w, starts = _product_table(a.nvars, order)
        A = a.coeffs[..., ia]
        B = b.coeffs[..., ib]
        prod = np.einsum(f"...{sa}p,...{sb}p,p->...{output}p", A, B, w, optimize=False)
        coeffs = np.add.reduceat(prod, starts, axis=-1)
        return Jet(coeffs, order, a.nvars, len(output), a.center)
    if isinstance(a, Jet):
        coeffs = np.einsum(f"...{sa}p,...{sb}->...{output}p", a.coeffs, np.asarray(b, dtype=float))
        return Jet(coeffs, a.order, a.nvars, len(output), a.center)
    if isinstance(b, Jet):
        coeffs = np.einsum(f"...{sa},...{sb}p->...{output}p", np.asarray(a, dtype=float), b.coeffs)
        return Jet(coeffs, b.order, b.nvars, len(output), b.center)
    raise JetError("contract() needs at least one jet operand")


def trace_jet(subscripts: str, a: Jet) -> Jet:
    """Single-operand ``einsum`` (traces, permutations) on tensor axes."""
    inp, out = subscripts.replace(" ", "").split("->")
    coeffs = np.einsum(f"...{inp}p->...{out}p", a.coeffs)
    return Jet(coeffs, a.order, a.nvars, len(out), a.center)


# ---------------------------------------------------------------------------
# composition with univariate functions


def _compose(f: Jet, derivs: Callable[[np.ndarray, int], list[np.ndarray]]) -> Jet:
    """``phi(f)`` via the Taylor series of ``phi`` at the order-0 value."""
    f0 = f.value
    # out-of-domain values surface as non-finite coefficients, reported below
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ds = derivs(f0, f.order)
        h = f._wrap(f.coeffs.copy())
        h.coeffs[..., 0] = 0.0
        out = np.zeros_like(f.coeffs)
        out[..., 0] = ds[0]
        power = None
        for m in range(1, f.order + 1):
            power = h if power is None else power * h
            out = out + power.coeffs * (ds[m] / math.factorial(m))[..., None]
    result = f._wrap(out)
    _check_finite(result, "composition")
    return result


def _power_derivs(p: float):
    def derivs(v, order):
        out, coef = [], 1.0
        for m in range(order + 1):
            out.append(coef * np.power(v, p - m))
            coef *= p - m
        return out

    return derivs


def _exp_derivs(v, order):
    e = np.exp(v)
    return [e] * (order + 1)


def _log_derivs(v, order):
    out = [np.log(v)]
    for m in range(1, order + 1):
        out.append((-1.0) ** (m - 1) * math.factorial(m - 1) / v**m)
    return out


def _sin_derivs(v, order):
    cycle = [np.sin(v), np.cos(v), -np.sin(v), -np.cos(v)]
    return [cycle[m % 4] for m in range(order + 1)]


def _cos_derivs(v, order):
    cycle = [np.cos(v), -np.sin(v), -np.cos(v), np.sin(v)]
    return [cycle[m % 4] for m in range(order + 1)]


def reciprocal(f: Jet) -> Jet:
    if np.any(f.value == 0):
        raise JetDomainError("reciprocal of a jet with zero order-0 term", (0,) * f.nvars)
    return _compose(f, _power_derivs(-1.0))


# Generic math: dispatch to the jet path for Jets, to numpy otherwise, so that
# one evaluator serves both the jet engine and plain (real or complex) oracles.


def exp(v):
    return _compose(v, _exp_derivs) if isinstance(v, Jet) else np.exp(v)


def log(v):
    return _compose(v, _log_derivs) if isinstance(v, Jet) else np.log(v)


def sqrt(v):
    return _compose(v, _power_derivs(0.5)) if isinstance(v, Jet) else np.sqrt(v)


def sin(v):
    return _compose(v, _sin_derivs) if isinstance(v, Jet) else np.sin(v)


def cos(v):
    return _compose(v, _cos_derivs) if isinstance(v, Jet) else np.cos(v)


def tan(v):
    return sin(v) / cos(v)


MATH_NAMESPACE = {"exp": exp, "log": log, "sqrt": sqrt, "sin": sin, "cos": cos, "tan": tan, "pi": math.pi}


# ---------------------------------------------------------------------------
# matrix inverse


def inverse_matrix(g: Jet) -> Jet:
    """Inverse of a square-matrix-valued jet (last two tensor axes)."""
    g0inv = np.linalg.inv(g.value)
    h = g._wrap(g.coeffs.copy())
    h.coeffs[..., 0] = 0.0
    # (g0 + h)^-1 = sum_m (-g0^-1 h)^m g0^-1, truncated at the jet order
    step = -contract("ij,jk->ik", g0inv, h)
    term = Jet.constant(g0inv, g, batched=True)
    total = term
    for _ in range(g.order):
        term = contract("ij,jk->ik", step, term)
        total = total + term
    return total


# ---------------------------------------------------------------------------
# public operations


def _check_finite(jet: Jet, where: str):
    bad = ~np.isfinite(jet.coeffs)
    if bad.any():
        position = int(np.argwhere(bad)[0][-1])
        mi = monomials(jet.nvars, jet.order)[position]
        raise JetDomainError(f"non-finite coefficient in {where} at multi-index {mi}", mi)


def variables(u: SupportElement, order: int) -> tuple[list[Jet], list[Jet]]:
    """Coordinate jets ``(x^i)``, ``(y^i)`` centered at ``u``."""
    n = u.dim
    nvars = 2 * n
    xs = [Jet.variable(u.x[..., i], i, nvars, order, u) for i in range(n)]
    ys = [Jet.variable(u.y[..., i], n + i, nvars, order, u) for i in range(n)]
    return xs, ys


def jet_eval(f: Callable, u: SupportElement, order: int | None = None) -> Jet:
    """All mixed partials of ``f(x, y)`` at ``u`` up to total order ``order``.

    ``f`` receives sequences of scalar jets ``x`` and ``y`` and must build
    its value with jet-aware arithmetic (operators and the functions of this
    module).  Constant results are promoted to jets.
    """
    if order is None:
        order = max_jet_order()
    if order < 0:
        raise JetOrderError("order must be non-negative")
    xs, ys = variables(u, order)
    value = f(xs, ys)
    if not isinstance(value, Jet):
        value = xs[0] * 0.0 + np.asarray(value, dtype=float)
    if value.order < order:
        raise JetOrderError(f"evaluator returned order {value.order} < requested {order}")
    value.center = u
    _check_finite(value, "jet_eval")
    return value


def jet_arithmetic(a: Jet, b: Jet | None, op: str, factor: float | None = None) -> Jet:
    """Strict arithmetic: operands must share center and order.

    ``op`` is one of ``add``, ``mul``, ``scale``, ``reciprocal``, ``exp-compose``.
    """
    if b is not None:
        if a.order != b.order:
            raise JetMismatchError(f"order mismatch: {a.order} vs {b.order}")
        if a.center is not None and b.center is not None and not a.center.same_as(b.center):
            raise JetMismatchError("center mismatch")
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    if op == "scale":
        if factor is None:
            raise JetError("scale needs a factor")
        return a * factor
    if op == "reciprocal":
        return reciprocal(a)
    if op == "exp-compose":
        return exp(a)
    raise JetError(f"unknown jet operation {op!r}")
