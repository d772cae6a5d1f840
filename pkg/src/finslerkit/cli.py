"""Scenario-driven command line front end.

    finslerkit check --config scenario.json --out report.json [--seed N] [--tol-scale S]
    finslerkit invariants --config scenario.json
    finslerkit geodesic --config scenario.json --trajectory curve.jsonl
    finslerkit jacobi --config scenario.json --trajectory field.csv

A config path of the form ``bundled:NAME`` loads one of the shipped
scenarios.  Exit codes: 0 every check passed, 2 some check failed, 1 the
config or an evaluation was invalid.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import dynamics, lagrangian
from .conformal import (
    CONNECTION_TOL,
    CURVATURE_TOL,
    HOMOTHETY_TOL,
    INVARIANT_TOL,
    ORIENTATION,
    SIGMA_INVARIANT_TOL,
    ConformalPair,
    conformality_test,
    homothety_test,
    invariant_suite,
    sign_probe,
    verify_transformation_laws,
)
from .jets import MATH_NAMESPACE
from .report import CheckResult, VerificationReport
from .sampling import SampleSpec

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

DEFAULT_TOLERANCES = {
    "connection": CONNECTION_TOL,
    "curvature": CURVATURE_TOL,
    "invariant": INVARIANT_TOL,
    "sigma_invariant": SIGMA_INVARIANT_TOL,
    "conditional": CURVATURE_TOL,
    "homothety": HOMOTHETY_TOL,
    "homogeneity": 1e-10,
    "conformality": 1e-9,
    "dynamics": 1e-8,
}
JACOBI_LINEARITY_TOL = 1e-9
CHECK_ORDER = ("validate", "transform-laws", "invariants", "homothety", "conformality", "geodesic", "jacobi", "correspondence")


class ScenarioError(ValueError):
    """The scenario file is unreadable, fails the schema or names bad expressions."""


def load_schema() -> dict:
    return json.loads(resources.files("finslerkit").joinpath("data", "schema.json").read_text())


def bundled_scenario(name: str) -> Path:
    if not name.endswith(".json"):
        name += ".json"
    path = resources.files("finslerkit").joinpath("data", "scenarios", name)
    if not path.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return Path(str(path))


def bundled_scenarios() -> list[str]:
    folder = resources.files("finslerkit").joinpath("data", "scenarios")
    return sorted(p.name[: -len(".json")] for p in folder.iterdir() if p.name.endswith(".json"))


# ---------------------------------------------------------------------------
# config -> objects


def _expr(source, args: tuple[str, ...], where: str):
    """Compile a formula over ``x`` (and ``y``) into a jet-aware callable."""
    if isinstance(source, (int, float)):
        value = source
        return lambda *_: value
    try:
        code = compile(source, where, "eval")
    except SyntaxError as exc:
        raise ScenarioError(f"{where}: cannot parse {source!r}: {exc.msg}") from None
    names = set(code.co_names) - set(MATH_NAMESPACE) - set(args)
    if names:
        raise ScenarioError(f"{where}: unknown names {sorted(names)} in {source!r}")
    scope = {"__builtins__": {}, **MATH_NAMESPACE}

    def fn(*values):
        return eval(code, scope, dict(zip(args, values)))

    return fn


def build_model(spec: dict, where: str = "model") -> lagrangian.FinslerModel:
    family = spec["family"]
    dim = spec.get("dim")
    if family == "sphere":
        if dim not in (None, 2):
            raise ScenarioError(f"{where}.dim: the sphere model is 2-dimensional")
        return lagrangian.sphere(spec.get("radius", 1.0))
    if dim is None:
        raise ScenarioError(f"{where}.dim is required for family {family!r}")
    if family == "euclidean":
        return lagrangian.euclidean(dim)
    if family == "custom":
        if "L2" not in spec:
            raise ScenarioError(f"{where}.L2 is required for custom models")
        return lagrangian.custom(dim, _expr(spec["L2"], ("x", "y"), f"{where}.L2"), spec.get("name", "custom"))
    if "metric" not in spec:
        raise ScenarioError(f"{where}.metric is required for family {family!r}")
    rows = spec["metric"]
    if len(rows) != dim or any(len(r) != dim for r in rows):
        raise ScenarioError(f"{where}.metric must be {dim} x {dim}")
    cells = [[_expr(c, ("x",), f"{where}.metric[{i}][{j}]") for j, c in enumerate(r)] for i, r in enumerate(rows)]

    def metric(x):
        return [[c(x) for c in row] for row in cells]

    if family == "riemannian":
        return lagrangian.riemannian(dim, metric, spec.get("name", "riemannian"))
    drift = spec.get("drift")
    if drift is None or len(drift) != dim:
        raise ScenarioError(f"{where}.drift must list {dim} components")
    comps = [_expr(c, ("x",), f"{where}.drift[{i}]") for i, c in enumerate(drift)]
    return lagrangian.randers(dim, metric, lambda x: [c(x) for c in comps])


def build_sigma(spec: dict | None, dim: int) -> lagrangian.ConformalFactor:
    if spec is None:
        return lagrangian.constant_sigma(0.0)
    family = spec["family"]
    try:
        if family == "constant":
            return lagrangian.constant_sigma(spec["value"])
        if family == "linear":
            coeffs = spec["coeffs"]
            if len(coeffs) != dim:
                raise ScenarioError(f"sigma.coeffs must list {dim} numbers")
            return lagrangian.linear_sigma(coeffs, spec.get("offset", 0.0))
        if family == "gaussian_bump":
            if len(spec["center"]) != dim:
                raise ScenarioError(f"sigma.center must list {dim} numbers")
            return lagrangian.gaussian_bump(spec["amplitude"], spec["center"], spec["width"])
        return lagrangian.custom_sigma(_expr(spec["expr"], ("x",), "sigma.expr"))
    except KeyError as exc:
        raise ScenarioError(f"sigma: family {family!r} needs field {exc.args[0]!r}") from None


@dataclass
class Scenario:
    name: str
    model: lagrangian.FinslerModel
    sigma: lagrangian.ConformalFactor
    samples: SampleSpec
    checks: list[str]
    tolerances: dict[str, float]
    raw: dict = field(repr=False)

    @classmethod
    def from_dict(cls, raw: dict, seed: int | None = None, tol_scale: float = 1.0) -> "Scenario":
        validator = jsonschema.Draft202012Validator(load_schema())
        errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
        if errors:
            lines = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
            raise ScenarioError("schema violations:\n  " + "\n  ".join(lines))
        model = build_model(raw["model"])
        sigma = build_sigma(raw.get("sigma"), model.dim)
        s = raw.get("samples", {})
        samples = SampleSpec(
            count=s.get("count", 100),
            seed=s.get("seed", 0) if seed is None else seed,
            low=s.get("low", -1.0),
            high=s.get("high", 1.0),
            radii=tuple(s.get("radii", (0.5, 2.0))),
        )
        for key in ("low", "high"):
            bound = np.asarray(s.get(key, 0.0), dtype=float)
            if bound.ndim and bound.shape != (model.dim,):
                raise ScenarioError(f"samples.{key} must be a number or list {model.dim} numbers")
        if tol_scale <= 0:
            raise ScenarioError("--tol-scale must be positive")
        tols = {k: v * tol_scale for k, v in (DEFAULT_TOLERANCES | raw.get("tolerances", {})).items()}
        checks = sorted(raw["checks"], key=CHECK_ORDER.index)
        return cls(raw.get("name", "scenario"), model, sigma, samples, checks, tols, raw)

    @classmethod
    def load(cls, path, seed: int | None = None, tol_scale: float = 1.0) -> "Scenario":
        path = str(path)
        if path.startswith("bundled:"):
            path = bundled_scenario(path.split(":", 1)[1])
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(raw, seed, tol_scale)

    # -- dynamics inputs ---------------------------------------------------

    def geodesic_inputs(self):
        g = self.raw.get("geodesic", {})
        n = self.model.dim
        lo = np.broadcast_to(np.asarray(self.samples.low, dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(self.samples.high, dtype=float), (n,))
        x0 = np.asarray(g.get("x0", 0.5 * (lo + hi)), dtype=float)
        y0 = np.asarray(g.get("y0", np.eye(n)[0]), dtype=float)
        if x0.shape != (n,) or y0.shape != (n,):
            raise ScenarioError(f"geodesic.x0 and geodesic.y0 must list {n} numbers")
        return x0, y0, tuple(g.get("t_span", (0.0, 1.0))), float(g.get("step", 1e-2))

    def jacobi_inputs(self):
        j = self.raw.get("jacobi", {})
        n = self.model.dim
        xi0 = np.asarray(j.get("xi0", np.zeros(n)), dtype=float)
        dxi0 = np.asarray(j.get("dxi0", np.eye(n)[-1]), dtype=float)
        if xi0.shape != (n,) or dxi0.shape != (n,):
            raise ScenarioError(f"jacobi.xi0 and jacobi.dxi0 must list {n} numbers")
        return xi0, dxi0


# ---------------------------------------------------------------------------
# running


class _Runner:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self._pair = None
        self._geodesic = None

    @property
    def pair(self) -> ConformalPair:
        if self._pair is None:
            self._pair = ConformalPair(self.sc.model, self.sc.sigma, self.sc.samples)
        return self._pair

    @property
    def geodesic(self) -> dynamics.Trajectory:
        if self._geodesic is None:
            x0, y0, span, step = self.sc.geodesic_inputs()
            self._geodesic = dynamics.geodesic_integrate(self.sc.model, x0, y0, span, step)
        return self._geodesic

    def run(self, check: str) -> VerificationReport:
        return getattr(self, "check_" + check.replace("-", "_"))()

    def check_validate(self):
        return lagrangian.validate_structure(self.sc.model, self.sc.samples, self.sc.tolerances["homogeneity"])

    def check_transform_laws(self):
        t = self.sc.tolerances
        return verify_transformation_laws(self.sc.model, self.sc.sigma, None, t["connection"], t["curvature"], pair=self.pair)

    def check_invariants(self):
        t = self.sc.tolerances
        return invariant_suite(
            self.sc.model, self.sc.sigma, None, t["invariant"], t["sigma_invariant"], t["conditional"], pair=self.pair
        )

    def check_homothety(self):
        return homothety_test(self.sc.model, self.sc.sigma, None, self.sc.tolerances["homothety"], pair=self.pair).report

    def check_conformality(self):
        spec = self.sc.raw.get("conformality", {})
        tol = self.sc.tolerances["conformality"]
        if "other" in spec:
            other = build_model(spec["other"], "conformality.other")
            expect = spec.get("expect")
        else:
            other = lagrangian.conformal_lift(self.sc.model, self.sc.sigma)
            expect = True
        u = self.sc.samples.draw(self.sc.model.dim)
        result = conformality_test(self.sc.model, other, u, tol)
        report = result.report
        report.details["conformal"] = result.conformal
        if expect is not None:
            report.checks.append(
                CheckResult(
                    "conformality_verdict",
                    "conformality: verdict matches the expected one",
                    len(u),
                    0.0,
                    0.0,
                    0.0,
                    result.conformal == expect,
                    {"conformal": result.conformal, "expected": expect, "witness": result.witness},
                )
            )
        if "other" not in spec and result.sigma_estimate is not None:
            report.checks.append(
                CheckResult.from_residuals(
                    "sigma_recovery",
                    "conformality: recovered factor equals sigma at the base points",
                    result.sigma_estimate,
                    self.sc.sigma.value(u.x),
                    tol,
                )
            )
        return report

    def check_geodesic(self):
        traj = self.geodesic
        report = VerificationReport(title=f"geodesic[{self.sc.model.family}]")
        report.checks.append(
            CheckResult(
                "geodesic_complete",
                "geodesics: integration reached the end of the parameter span",
                len(traj.t),
                0.0,
                0.0,
                0.0,
                traj.complete,
                {"reason": traj.reason} if traj.reason else {},
            )
        )
        report.checks.append(
            CheckResult.from_values(
                "lagrangian_conservation",
                "geodesics: L is constant along the spray flow",
                np.array([traj.drift]),
                self.sc.tolerances["dynamics"],
                step=traj.step,
            )
        )
        report.details["endpoint"] = {"x": traj.x[-1], "y": traj.y[-1], "t": traj.t[-1]}
        return report

    def check_jacobi(self):
        traj = self.geodesic
        xi0, dxi0 = self.sc.jacobi_inputs()
        n = self.sc.model.dim
        xi1, dxi1 = np.roll(xi0, 1) + np.eye(n)[0], np.roll(dxi0, 1)
        a = dynamics.jacobi_integrate(self.sc.model, traj, xi0, dxi0)
        b = dynamics.jacobi_integrate(self.sc.model, traj, xi1, dxi1)
        ab = dynamics.jacobi_integrate(self.sc.model, traj, xi0 + xi1, dxi0 + dxi1)
        report = VerificationReport(title=f"jacobi[{self.sc.model.family}]")
        report.checks.append(
            CheckResult.from_residuals(
                "jacobi_linearity",
                "Jacobi fields: the solution map is linear in the initial data",
                np.concatenate([ab.xi, ab.dxi], axis=1),
                np.concatenate([a.xi + b.xi, a.dxi + b.dxi], axis=1),
                JACOBI_LINEARITY_TOL * self.sc.tolerances["dynamics"] / DEFAULT_TOLERANCES["dynamics"],
            )
        )
        report.details["endpoint"] = {"xi": a.xi[-1], "dxi": a.dxi[-1]}
        return report

    def check_correspondence(self):
        traj = self.geodesic
        tol = self.sc.tolerances["dynamics"]
        report = dynamics.geodesic_correspondence(self.sc.model, self.sc.sigma, traj, tol)
        xi0, dxi0 = self.sc.jacobi_inputs()
        jac = dynamics.jacobi_correspondence(self.sc.model, self.sc.sigma, traj, xi0, dxi0, tol)
        report.extend(jac)
        report.details["jacobi"] = jac.details
        return report


def run(scenario: Scenario, only: list[str] | None = None) -> VerificationReport:
    """Run the scenario's checks (or ``only`` those) in canonical order."""
    runner = _Runner(scenario)
    checks = [c for c in CHECK_ORDER if c in (only or scenario.checks)]
    report = VerificationReport(title=scenario.name)
    report.header.update(
        {
            "model": scenario.model.family,
            "dim": scenario.model.dim,
            "sigma": scenario.sigma.family,
            "samples": scenario.samples.count,
            "seed": scenario.samples.seed,
            "tolerances": scenario.tolerances,
            "orientation": ORIENTATION,
        }
    )
    if any(c in checks for c in ("transform-laws", "invariants", "homothety")):
        report.header["sign_probe"] = sign_probe(runner.pair)
    sections = {}
    for check in checks:
        part = runner.run(check)
        sections[check] = {"names": part.names(), "passed": part.passed, **({"details": part.details} if part.details else {})}
        report.extend(part)
    report.details["sections"] = sections
    return report


def run_scenario(
    config_path,
    out_path=None,
    seed: int | None = None,
    tol_scale: float = 1.0,
    only: list[str] | None = None,
    trajectory_path=None,
    stream=None,
) -> int:
    """Load, run and write the report; returns the process exit code."""
    stream = sys.stderr if stream is None else stream
    try:
        scenario = Scenario.load(config_path, seed, tol_scale)
        report = run(scenario, only)
    except ScenarioError as exc:
        print(f"config error: {exc}", file=stream)
        return EXIT_ERROR
    except (ArithmeticError, ValueError) as exc:
        print(f"evaluation error: {type(exc).__name__}: {exc}", file=stream)
        return EXIT_ERROR
    text = report.to_json()
    if out_path is None or str(out_path) == "-":
        print(text)
    else:
        Path(out_path).write_text(text + "\n")
    if trajectory_path is not None:
        _write_trajectory(scenario, only, trajectory_path)
    print(report.summary(), file=stream)
    return EXIT_PASS if report.passed else EXIT_FAIL


def _write_trajectory(scenario: Scenario, only, path):
    x0, y0, span, step = scenario.geodesic_inputs()
    traj = dynamics.geodesic_integrate(scenario.model, x0, y0, span, step)
    if only and "jacobi" in only:
        traj = dynamics.jacobi_integrate(scenario.model, traj, *scenario.jacobi_inputs())
    if str(path).endswith(".csv"):
        dynamics.write_csv(traj, path)
    else:
        dynamics.write_jsonl(traj, path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finslerkit", description="Finsler geometry verification scenarios")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "check": "run every check listed in the scenario",
        "invariants": "run only the conformal invariant suite",
        "geodesic": "integrate the scenario geodesic",
        "jacobi": "integrate the scenario Jacobi field",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="scenario JSON file, or bundled:NAME")
        p.add_argument("--out", default=None, help="report path (default: stdout)")
        p.add_argument("--seed", type=int, default=None, help="override the sample seed")
        p.add_argument("--tol-scale", type=float, default=1.0, help="multiply every tolerance")
        if name in ("geodesic", "jacobi"):
            p.add_argument("--trajectory", default=None, help="write samples as .jsonl or .csv")
    sub.add_parser("list", help="list the bundled scenarios")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print("\n".join(bundled_scenarios()))
        return EXIT_PASS
    only = None if args.command == "check" else [args.command]
    return run_scenario(
        args.config,
        args.out,
        seed=args.seed,
        tol_scale=args.tol_scale,
        only=only,
        trajectory_path=getattr(args, "trajectory", None),
    )


if __name__ == "__main__":
    raise SystemExit(main())
