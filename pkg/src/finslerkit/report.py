"""Verification reports: per-check residual statistics and JSON export."""
from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import __version__

DERIVATIVE_CONVENTION = "jet coefficients are raw partial derivatives (no factorial division)"
RICCI_CONVENTION = (
    "Ric(X,Y) = trace of Z -> R(X,Z)Y, i.e. Ric_ab = R^m_{b a m} with "
    "R(d_i, d_j) d_k = R^h_{k i j} d_h"
)
CURVATURE_SIGN = "K(X,Y) = -[nabla_X, nabla_Y] + nabla_[X,Y]; R_{khij} = g_{hm} R^m_{kij}"


@dataclass
class CheckResult:
    name: str
    anchor: str
    samples: int
    max_abs: float
    max_rel: float
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)

    @classmethod
    def from_residuals(
        cls,
        name: str,
        anchor: str,
        direct: np.ndarray,
        predicted: np.ndarray,
        tolerance: float,
        mask: np.ndarray | None = None,
        **details,
    ) -> "CheckResult":
        """Compare two batched blocks (first axis = sample).

        Each sample's error is normalised by ``max(1, |direct|, |predicted|)``
        (a mixed absolute/relative criterion); the check passes when the
        largest normalised error stays within ``tolerance``.
        """
        direct = np.asarray(direct, dtype=float)
        predicted = np.asarray(predicted, dtype=float)
        if direct.ndim == 0:
            direct, predicted = direct[None], predicted[None]
        m = direct.shape[0]
        d = direct.reshape(m, -1)
        p = predicted.reshape(m, -1)
        keep = np.ones(m, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        diff = np.abs(d - p).max(axis=1) if d.shape[1] else np.zeros(m)
        scale = np.maximum(1.0, np.maximum(np.abs(d).max(axis=1, initial=0.0), np.abs(p).max(axis=1, initial=0.0)))
        rel = diff / scale
        used = int(keep.sum())
        if used == 0:
            return cls(name, anchor, 0, 0.0, 0.0, tolerance, True, {"note": "no samples used", **details})
        max_abs = float(diff[keep].max())
        max_rel = float(rel[keep].max())
        ok = bool(np.isfinite(max_rel) and max_rel <= tolerance)
        info = dict(details)
        if not ok:
            info["worst_sample"] = int(np.flatnonzero(keep)[np.argmax(rel[keep])])
        return cls(name, anchor, used, max_abs, max_rel, tolerance, ok, info)

    @classmethod
    def from_values(cls, name: str, anchor: str, residuals: np.ndarray, tolerance: float, **details) -> "CheckResult":
        """Pass when every (absolute) residual is at most ``tolerance``."""
        r = np.abs(np.asarray(residuals, dtype=float))
        finite = r[np.isfinite(r)]
        max_abs = float(finite.max()) if finite.size else 0.0
        ok = bool(np.isfinite(r).all() and max_abs <= tolerance)
        return cls(name, anchor, int(r.size), max_abs, max_abs, tolerance, ok, dict(details))

    @classmethod
    def threshold(cls, name: str, anchor: str, values: np.ndarray, lower: float, **details) -> "CheckResult":
        """Pass when every value is strictly above ``lower``."""
        v = np.asarray(values, dtype=float)
        worst = float(np.nanmin(v)) if v.size and np.isfinite(v).any() else float("nan")
        ok = bool(v.size and np.isfinite(v).all() and (v > lower).all())
        info = dict(details)
        info["min_value"] = worst
        if not ok and v.size:
            info["worst_sample"] = int(np.nanargmin(np.where(np.isfinite(v), v, -np.inf)))
        return cls(name, anchor, int(v.size), abs(worst) if np.isfinite(worst) else worst, 0.0, lower, ok, info)

    @classmethod
    def absent(cls, name: str, anchor: str, reason: str) -> "CheckResult":
        return cls(name, anchor, 0, 0.0, 0.0, 0.0, True, {"absent": reason})

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "anchor": self.anchor,
            "samples": self.samples,
            "max_abs": _finite_or_str(self.max_abs),
            "max_rel": _finite_or_str(self.max_rel),
            "tolerance": self.tolerance,
            "passed": self.passed,
            **({"details": _jsonable(self.details)} if self.details else {}),
        }

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if "absent" in self.details:
            return f"[{status}] {self.name}: absent ({self.details['absent']})"
        text = (
            f"[{status}] {self.name}: max_abs={self.max_abs:.3e} max_rel={self.max_rel:.3e} "
            f"tol={self.tolerance:.1e} n={self.samples}"
        )
        if "hypothesis_rate" in self.details:
            text += f" hypothesis_rate={self.details['hypothesis_rate']:.2f}"
        return text


@dataclass
class VerificationReport:
    title: str
    checks: list[CheckResult] = field(default_factory=list)
    header: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self) -> list[str]:
        return [c.name for c in self.checks]

    def extend(self, other: "VerificationReport"):
        self.checks.extend(other.checks)
        for k, v in other.header.items():
            self.header.setdefault(k, v)

    def to_dict(self, timestamp: bool = True) -> dict[str, Any]:
        out = {
            "title": self.title,
            "passed": self.passed,
            "header": _jsonable(standard_header() | self.header),
            "checks": [c.to_dict() for c in self.checks],
        }
        if self.details:
            out["details"] = _jsonable(self.details)
        if timestamp:
            out["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        return out

    def to_json(self, timestamp: bool = True) -> str:
        return json.dumps(self.to_dict(timestamp), indent=2, sort_keys=False)

    def summary(self) -> str:
        lines = [f"{self.title}: {'PASS' if self.passed else 'FAIL'}"]
        lines.extend("  " + c.line() for c in self.checks)
        return "\n".join(lines)


def standard_header() -> dict[str, Any]:
    from .jets import max_jet_order

    return {
        "engine_version": __version__,
        "jet_order": max_jet_order(),
        "derivative_convention": DERIVATIVE_CONVENTION,
        "ricci_convention": RICCI_CONVENTION,
        "curvature_convention": CURVATURE_SIGN,
    }


def _finite_or_str(v: float):
    return v if np.isfinite(v) else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj
