"""Scenario-driven command line front end.

Usage:
    defham run <scenario.json> [--out-dir DIR] [--threads N]
    defham validate <scenario.json>

Scenarios are JSON documents with a "kind" field selecting the pipeline:
simulate, verify-flow, classify, bracket, morse or sweep.  Artifacts are
written atomically (temp file + rename) and a machine-readable report with
one record per check is produced alongside them.  Exit codes: 0 all checks
pass, 1 a check failed, 2 invalid input.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import os
import sys
import tempfile
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import bracket as br
from . import dynamics as dyn
from . import expr as ex
from . import forms
from . import morse
from .phase import MetricFamily, PhasePoint, fibre_volume_ratio
from .poly import poly_from_expression

__all__ = ["main", "run_scenario", "validate_scenario", "ScenarioError"]

EXIT_PASS, EXIT_CHECK_FAILURE, EXIT_INVALID = 0, 1, 2


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Schemas.

_INTEGRATOR_SCHEMA = {
    "type": "object",
    "properties": {
        "type": {"enum": ["rk4", "rkf45"]},
        "step": {"type": "number", "exclusiveMinimum": 0},
        "rel_tol": {"type": "number", "exclusiveMinimum": 0},
        "abs_tol": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["type"],
    "additionalProperties": False,
}

_CHECK_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "measure": {"type": "string"},
        "threshold": {"type": "number"},
        "comparator": {"enum": ["le", "ge"]},
    },
    "required": ["name", "measure", "threshold"],
    "additionalProperties": False,
}

_BASE = {
    "kind": {"enum": ["simulate", "verify-flow", "classify", "bracket", "morse", "sweep"]},
    "name": {"type": "string"},
    "seed": {"type": "integer"},
}

_KIND_SCHEMAS = {
    "simulate": {
        "type": "object",
        "properties": {
            **_BASE,
            "n": {"type": "integer", "minimum": 1},
            "q": {"type": "number"},
            "hamiltonian": {"type": "string"},
            "z0": {"type": "array", "items": {"type": "number"}},
            "space": {"enum": ["plane", "torus"]},
            "integrator": _INTEGRATOR_SCHEMA,
            "t_final": {"type": "number", "exclusiveMinimum": 0},
            "sample_stride": {"type": "integer", "minimum": 1},
            "output": {"type": "string"},
            "checks": {"type": "array", "items": _CHECK_SCHEMA},
        },
        "required": ["kind", "n", "q", "hamiltonian", "z0", "t_final"],
        "additionalProperties": False,
    },
    "verify-flow": {
        "type": "object",
        "properties": {
            **_BASE,
            "n": {"type": "integer", "minimum": 1},
            "q": {"type": "number"},
            "hamiltonian": {"type": "string"},
            "z0": {"type": "array", "items": {"type": "number"}},
            "space": {"enum": ["plane", "torus"]},
            "integrator": _INTEGRATOR_SCHEMA,
            "t_final": {"type": "number", "exclusiveMinimum": 0},
            "sample_stride": {"type": "integer", "minimum": 1},
            "mode": {"enum": ["symplectic", "conformal"]},
            "c": {"type": "number"},
            "output": {"type": "string"},
            "checks": {"type": "array", "items": _CHECK_SCHEMA, "minItems": 1},
        },
        "required": ["kind", "n", "q", "hamiltonian", "z0", "t_final", "mode", "checks"],
        "additionalProperties": False,
    },
    "classify": {
        "type": "object",
        "properties": {
            **_BASE,
            "n": {"type": "integer", "minimum": 1},
            "hamiltonian": {"type": "string"},
            "expect": {
                "type": "object",
                "properties": {
                    "simple": {"type": "boolean"},
                    "exceptionally_simple": {"type": "boolean"},
                    "conformal_ratio": {
                        "anyOf": [
                            {"type": "null"},
                            {
                                "type": "array",
                                "items": {"type": "integer"},
                                "minItems": 2,
                                "maxItems": 2,
                            },
                        ]
                    },
                },
                "additionalProperties": False,
            },
            "output": {"type": "string"},
        },
        "required": ["kind", "n", "hamiltonian"],
        "additionalProperties": False,
    },
    "bracket": {
        "type": "object",
        "properties": {
            **_BASE,
            "n": {"type": "integer", "minimum": 1},
            "q_list": {"type": "array", "items": {"type": "number"}},
            "pairs": {"type": "integer", "minimum": 1},
            "points": {"type": "integer", "minimum": 1},
            "jacobi_triples": {"type": "integer", "minimum": 0},
            "degree": {"type": "integer", "minimum": 1},
            "thresholds": {
                "type": "object",
                "properties": {
                    "admissibility": {"type": "number"},
                    "jacobi": {"type": "number"},
                },
                "additionalProperties": False,
            },
            "output": {"type": "string"},
        },
        "required": ["kind", "n", "q_list", "pairs", "seed"],
        "additionalProperties": False,
    },
    "morse": {
        "type": "object",
        "properties": {
            **_BASE,
            "n": {"type": "integer", "minimum": 1},
            "f": {"type": "string"},
            "w": {"type": "array", "items": {"type": "string"}},
            "g": {"type": "string"},
            "q": {"type": "number"},
            "q_list": {"type": "array", "items": {"type": "number"}},
            "space": {"enum": ["plane", "torus"]},
            "box": {
                "type": "array",
                "items": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": 2,
                    "maxItems": 2,
                },
            },
            "grid": {"type": "integer", "minimum": 2},
            "mesh": {"type": "integer", "minimum": 4},
            "shoot_radius": {"type": "number", "exclusiveMinimum": 0},
            "capture_radius": {"type": "number", "exclusiveMinimum": 0},
            "t_max": {"type": "number", "exclusiveMinimum": 0},
            "expect_ranks": {
                "type": "object",
                "additionalProperties": {"type": "integer", "minimum": 0},
            },
            "adiabatic_q_list": {"type": "array", "items": {"type": "number"}},
            "adiabatic_min_factor": {"type": "number"},
            "output": {"type": "string"},
        },
        "required": ["kind", "n", "f", "w", "g"],
        "additionalProperties": False,
    },
    "sweep": {
        "type": "object",
        "properties": {
            **_BASE,
            "n": {"type": "integer", "minimum": 1},
            "q_list": {"type": "array", "items": {"type": "number"}},
            "hamiltonian": {"type": "string"},
            "z0": {"type": "array", "items": {"type": "number"}},
            "space": {"enum": ["plane", "torus"]},
            "integrator": _INTEGRATOR_SCHEMA,
            "t_final": {"type": "number", "exclusiveMinimum": 0},
            "observables": {
                "type": "array",
                "items": {
                    "enum": [
                        "final_H",
                        "delta_H",
                        "delta_H_sign",
                        "fibre_volume_ratio",
                        "symplectic_defect",
                    ]
                },
                "minItems": 1,
            },
            "checks": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "type": {"enum": ["regime_trichotomy", "fibre_volume_power"]},
                        "tol": {"type": "number"},
                    },
                    "required": ["type"],
                    "additionalProperties": False,
                },
            },
            "output": {"type": "string"},
        },
        "required": ["kind", "n", "q_list", "hamiltonian", "z0", "t_final", "observables"],
        "additionalProperties": False,
    },
}


def _pointer(error) -> str:
    return "/" + "/".join(str(p) for p in error.absolute_path)


def validate_scenario(doc) -> None:
    """Raise ScenarioError (with JSON-pointer paths) if the scenario is bad."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    kind = doc.get("kind")
    if kind not in _KIND_SCHEMAS:
        raise ScenarioError(
            f"/kind: must be one of {sorted(_KIND_SCHEMAS)}, got {kind!r}"
        )
    validator = Draft202012Validator(_KIND_SCHEMAS[kind])
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        messages = "; ".join(f"{_pointer(e)}: {e.message}" for e in errors[:5])
        raise ScenarioError(messages)

    # semantic checks the schema cannot express
    if "q" in doc and doc["q"] == 0:
        raise ScenarioError("/q: q must be nonzero")
    for key in ("q_list", "adiabatic_q_list"):
        if key in doc:
            if not doc[key]:
                raise ScenarioError(f"/{key}: must be nonempty")
            if any(q == 0 for q in doc[key]):
                raise ScenarioError(f"/{key}: q must be nonzero")
    if kind == "bracket" and not doc["q_list"]:
        raise ScenarioError("/q_list: must be nonempty")
    n = doc.get("n")
    for key in ("hamiltonian", "f", "g"):
        if key in doc:
            _parse_or_raise(doc[key], n, f"/{key}")
    if "w" in doc:
        if len(doc["w"]) != n:
            raise ScenarioError(f"/w: expected {n} components, got {len(doc['w'])}")
        for i, text in enumerate(doc["w"]):
            _parse_or_raise(text, n, f"/w/{i}")
    if "z0" in doc and len(doc["z0"]) != 2 * n:
        raise ScenarioError(f"/z0: expected {2 * n} coordinates, got {len(doc['z0'])}")
    if kind == "verify-flow" and doc["mode"] == "conformal" and "c" not in doc:
        raise ScenarioError("/c: conformal mode requires the rate c")
    if "box" in doc and len(doc["box"]) not in (n, 2 * n):
        raise ScenarioError(f"/box: expected {n} or {2 * n} entries")


def _parse_or_raise(text: str, n: int, where: str) -> ex.Node:
    try:
        return ex.parse(text, n)
    except ex.ExprError as err:
        raise ScenarioError(f"{where}: {err}") from err


# ---------------------------------------------------------------------------
# Artifact helpers.


def _atomic_write(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


class Checks:
    def __init__(self):
        self.records = []

    def add(self, name: str, measured, threshold, comparator: str = "le") -> None:
        if comparator == "le":
            ok = measured <= threshold
        elif comparator == "ge":
            ok = measured >= threshold
        else:
            raise ScenarioError(f"unknown comparator {comparator!r}")
        self.records.append(
            {"name": name, "measured": measured, "threshold": threshold, "pass": bool(ok)}
        )

    def add_bool(self, name: str, ok: bool) -> None:
        self.records.append(
            {"name": name, "measured": bool(ok), "threshold": True, "pass": bool(ok)}
        )

    @property
    def all_pass(self) -> bool:
        return all(r["pass"] for r in self.records)


def _flow_spec(doc) -> dyn.FlowSpec:
    integ = doc.get("integrator", {"type": "rk4"})
    return dyn.FlowSpec(
        hamiltonian=ex.parse(doc["hamiltonian"], doc["n"]),
        n=doc["n"],
        q=doc["q"],
        space=doc.get("space", "plane"),
        integrator=integ["type"],
        step=integ.get("step", 1e-3),
        rel_tol=integ.get("rel_tol", 1e-10),
        abs_tol=integ.get("abs_tol", 1e-12),
        t_final=doc["t_final"],
        sample_stride=doc.get("sample_stride", 1),
    )


def _z0(doc) -> PhasePoint:
    n = doc["n"]
    z = doc["z0"]
    return PhasePoint(z[:n], z[n:], doc.get("space", "plane"))


# ---------------------------------------------------------------------------
# Kind runners.  Each returns (checks, artifacts: dict[str, str]).


def _run_simulate(doc):
    spec = _flow_spec(doc)
    trajectory = dyn.integrate(spec, _z0(doc))
    checks = Checks()
    for check in doc.get("checks", []):
        if check["measure"] == "energy_drift":
            measured = float(np.max(np.abs(trajectory.energies - trajectory.energies[0])))
        else:
            raise ScenarioError(f"unknown simulate measure {check['measure']!r}")
        checks.add(check["name"], measured, check["threshold"], check.get("comparator", "le"))
    out = doc.get("output", "trajectory.csv")
    return checks, {out: _trajectory_csv(trajectory)}


def _trajectory_csv(trajectory: dyn.Trajectory) -> str:
    n = trajectory.n
    header = (
        "t,"
        + ",".join(f"x{i}" for i in range(1, n + 1))
        + ","
        + ",".join(f"y{i}" for i in range(1, n + 1))
        + ",H"
    )
    lines = [header]
    for t, z, h in zip(trajectory.ts, trajectory.zs, trajectory.energies):
        lines.append(",".join(f"{v:.17g}" for v in (t, *z, h)))
    return "\n".join(lines) + "\n"


def _run_verify_flow(doc):
    spec = _flow_spec(doc)
    vf = dyn.integrate_variational(spec, _z0(doc))
    mode = doc["mode"]
    defects = dyn.pullback_defect(vf, mode=mode, c=doc.get("c"))
    values = [d for _, d in defects]
    checks = Checks()
    for check in doc["checks"]:
        measure = check["measure"]
        if measure == "max_defect":
            measured = max(values)
        elif measure == "final_defect":
            measured = values[-1]
        else:
            raise ScenarioError(f"unknown verify-flow measure {measure!r}")
        checks.add(check["name"], measured, check["threshold"], check.get("comparator", "le"))
    artifact = _json_dumps(
        {"mode": mode, "defects": [{"t": t, "defect": d} for t, d in defects]}
    )
    return checks, {doc.get("output", "pullback_defect.json"): artifact}


def _run_classify(doc):
    h = poly_from_expression(ex.parse(doc["hamiltonian"], doc["n"]))
    result = forms.classify_hamiltonian(h)
    ratio = result.conformal_ratio
    payload = {
        "simple": result.simple,
        "exceptionally_simple": result.exceptionally_simple,
        "conformal_ratio": None
        if ratio is None
        else [ratio.numerator, ratio.denominator],
    }
    checks = Checks()
    expect = doc.get("expect")
    if expect:
        for key, wanted in expect.items():
            checks.add_bool(f"classify_{key}", payload[key] == wanted)
    return checks, {doc.get("output", "classification.json"): _json_dumps(payload)}


def _random_polynomial(rng, n: int, degree: int) -> ex.Node:
    """Random small-coefficient polynomial in x1..xn, y1..yn."""
    out: ex.Node = ex.const(0, n)
    terms = rng.integers(2, 5)
    for _ in range(terms):
        coeff = int(rng.integers(-3, 4)) or 1
        term: ex.Node = ex.const(Fraction(coeff), n)
        total = int(rng.integers(1, degree + 1))
        for _ in range(total):
            kind = "x" if rng.random() < 0.5 else "y"
            index = int(rng.integers(1, n + 1))
            term = ex.mul(term, ex.var(kind, index, n))
        out = ex.add(out, term)
    return out


def _run_bracket(doc):
    rng = np.random.default_rng(doc["seed"])
    n = doc["n"]
    degree = doc.get("degree", 3)
    pairs = doc["pairs"]
    points = doc.get("points", 5)
    triples = doc.get("jacobi_triples", 10)
    thresholds = doc.get("thresholds", {})
    adm_thr = thresholds.get("admissibility", 1e-10)
    jac_thr = thresholds.get("jacobi", 1e-8)

    reports = []
    checks = Checks()
    for q in doc["q_list"]:
        if q == -1:
            raise ScenarioError("/q_list: q = -1 has vanishing antisymmetrization")
        max_adm = 0.0
        count = 0
        for _ in range(pairs):
            h = _random_polynomial(rng, n, degree)
            f = _random_polynomial(rng, n, degree)
            for _ in range(points):
                z = PhasePoint(rng.uniform(-1, 1, n), rng.uniform(-1, 1, n))
                max_adm = max(max_adm, br.admissibility_defect(h, f, q, z))
                count += 1
        max_jac = 0.0
        for _ in range(triples):
            h = _random_polynomial(rng, n, degree)
            f = _random_polynomial(rng, n, degree)
            g = _random_polynomial(rng, n, degree)
            z = PhasePoint(rng.uniform(-1, 1, n), rng.uniform(-1, 1, n))
            max_jac = max(max_jac, br.jacobi_defect(h, f, g, q, z))
            count += 1
        reports.append(
            {
                "q": q,
                "samples": count,
                "max_admissibility_defect": max_adm,
                "max_jacobi_defect": max_jac,
            }
        )
        checks.add(f"admissibility_q={q}", max_adm, adm_thr)
        checks.add(f"jacobi_q={q}", max_jac, jac_thr)
    return checks, {doc.get("output", "bracket_report.json"): _json_dumps(reports)}


def _morse_options(doc) -> morse.MorseOptions:
    kwargs = {}
    if "box" in doc:
        kwargs["search_box"] = tuple(tuple(b) for b in doc["box"])
    for src, dst in [
        ("grid", "grid"),
        ("mesh", "mesh"),
        ("shoot_radius", "shoot_radius"),
        ("capture_radius", "capture_radius"),
        ("t_max", "t_max"),
    ]:
        if src in doc:
            kwargs[dst] = doc[src]
    return morse.MorseOptions(**kwargs)


def _run_morse(doc):
    n = doc["n"]
    spec = morse.MorseSpec(
        n=n,
        f=ex.parse(doc["f"], n),
        w=[ex.parse(t, n) for t in doc["w"]],
        g=ex.parse(doc["g"], n),
        q=doc.get("q", doc.get("q_list", [1.0])[0]),
        space=doc.get("space", "plane"),
    )
    options = _morse_options(doc)
    checks = Checks()

    q_values = doc.get("q_list", [spec.q])
    complexes = []
    for q in q_values:
        spec_q = morse.MorseSpec(n, spec.f, spec.w, spec.g, q=q, space=spec.space)
        complexes.append(morse.build_complex(spec_q, options))
    main_complex = complexes[0]
    ranks = morse.homology_ranks(main_complex)

    residual = max(
        (p.residual for gens in main_complex.generators.values() for p in gens),
        default=0.0,
    )
    checks.add("critical_point_residual", residual, 1e-10)

    if "expect_ranks" in doc:
        wanted = {int(k): v for k, v in doc["expect_ranks"].items()}
        checks.add_bool("homology_ranks", {m: r for m, r in ranks.items() if r} == {m: r for m, r in wanted.items() if r})
    for other, q in zip(complexes[1:], q_values[1:]):
        checks.add_bool(
            f"ranks_consistent_q={q}", morse.homology_ranks(other) == ranks
        )

    adiabatic = None
    if "adiabatic_q_list" in doc:
        adiabatic = morse.adiabatic_deviation(spec, doc["adiabatic_q_list"], options=options)
        deviations = [d for _, d in adiabatic]
        decreasing = all(a > b for a, b in zip(deviations, deviations[1:]))
        checks.add_bool("adiabatic_decreasing", decreasing)
        factor = deviations[0] / deviations[-1] if deviations[-1] > 0 else math.inf
        checks.add(
            "adiabatic_decrease_factor",
            factor,
            doc.get("adiabatic_min_factor", 5.0),
            comparator="ge",
        )

    report = morse.complex_to_report(main_complex, adiabatic)
    return checks, {doc.get("output", "morse_report.json"): _json_dumps(report)}


def _sweep_row(doc, q: float):
    row: dict = {"q": q, "error": ""}
    try:
        n = doc["n"]
        local = dict(doc)
        local["q"] = q
        wants_flow = any(
            obs in doc["observables"]
            for obs in ("final_H", "delta_H", "delta_H_sign", "symplectic_defect")
        )
        trajectory = None
        if wants_flow:
            spec = _flow_spec(local)
            trajectory = dyn.integrate(spec, _z0(local))
        for obs in doc["observables"]:
            if obs == "final_H":
                row[obs] = float(trajectory.energies[-1])
            elif obs == "delta_H":
                row[obs] = float(trajectory.energies[-1] - trajectory.energies[0])
            elif obs == "delta_H_sign":
                delta = float(trajectory.energies[-1] - trajectory.energies[0])
                row[obs] = "0" if abs(delta) <= 1e-8 else ("+" if delta > 0 else "-")
            elif obs == "fibre_volume_ratio":
                fam = MetricFamily(n=n, q=q)
                row[obs] = fibre_volume_ratio(fam)
            elif obs == "symplectic_defect":
                vf = dyn.integrate_variational(_flow_spec(local), _z0(local))
                row[obs] = max(d for _, d in dyn.pullback_defect(vf))
    except Exception as err:  # per-q failure is recorded, sweep continues
        row["error"] = str(err)
    return row


def _run_sweep(doc, threads: int = 1):
    q_list = doc["q_list"]
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda q: _sweep_row(doc, q), q_list))
    else:
        rows = [_sweep_row(doc, q) for q in q_list]
    rows.sort(key=lambda r: r["q"])

    columns = ["q", *doc["observables"], "error"]
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(c, "")) for c in columns))
    csv = "\n".join(lines) + "\n"

    checks = Checks()
    for check in doc.get("checks", []):
        if check["type"] == "regime_trichotomy":
            tol = check.get("tol", 1e-8)
            violations = 0
            for row in rows:
                violations += _regime_violations(doc, row["q"], tol)
            checks.add("regime_trichotomy_violations", violations, 0)
        elif check["type"] == "fibre_volume_power":
            tol = check.get("tol", 1e-15)
            n = doc["n"]
            worst = max(
                abs(row["fibre_volume_ratio"] - math.sqrt(row["q"]) ** n)
                for row in rows
                if isinstance(row.get("fibre_volume_ratio"), float)
            )
            checks.add("fibre_volume_power", worst, tol)
    return checks, {doc.get("output", "sweep.csv"): csv}


def _regime_violations(doc, q: float, tol: float) -> int:
    """Sample-wise regime check: where sum H_x H_y > tol the sign of dH/dt
    must equal sign(1/q - 1); at q = 1 the energy must be conserved."""
    local = dict(doc)
    local["q"] = q
    spec = _flow_spec(local)
    trajectory = dyn.integrate(spec, _z0(local))
    field = dyn.HamiltonianField(spec.hamiltonian, q)
    n = spec.n
    if q == 1:
        drift = float(np.max(np.abs(trajectory.energies - trajectory.energies[0])))
        return 0 if drift <= tol else 1
    expected = 1.0 if (1.0 / q - 1.0) > 0 else -1.0
    violations = 0
    for z in trajectory.zs:
        g = field.gradient(z)
        coupling = float(g[:n] @ g[n:])
        if coupling <= tol:
            continue
        dhdt = float(g @ field.field(z))
        if math.copysign(1.0, dhdt) != expected:
            violations += 1
    return violations


_RUNNERS = {
    "simulate": lambda doc, threads: _run_simulate(doc),
    "verify-flow": lambda doc, threads: _run_verify_flow(doc),
    "classify": lambda doc, threads: _run_classify(doc),
    "bracket": lambda doc, threads: _run_bracket(doc),
    "morse": lambda doc, threads: _run_morse(doc),
    "sweep": _run_sweep,
}


def run_scenario(scenario_path, out_dir=None, threads: int = 1) -> int:
    """Execute a scenario file; returns the process exit code."""
    path = Path(scenario_path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        print(f"error: cannot read scenario: {err}", file=sys.stderr)
        return EXIT_INVALID
    try:
        validate_scenario(doc)
    except ScenarioError as err:
        print(f"error: invalid scenario: {err}", file=sys.stderr)
        return EXIT_INVALID

    out = Path(out_dir) if out_dir else path.parent
    started = time.perf_counter()
    try:
        checks, artifacts = _RUNNERS[doc["kind"]](doc, threads)
    except (morse.MorseSpecError, ScenarioError, ex.ExprError, ValueError) as err:
        print(f"error: invalid scenario: {err}", file=sys.stderr)
        return EXIT_INVALID
    elapsed = time.perf_counter() - started

    for name, content in artifacts.items():
        _atomic_write(out / name, content)
    report = {
        "scenario": doc,
        "checks": checks.records,
        "pass": checks.all_pass,
    }
    _atomic_write(out / doc.get("report", "report.json"), _json_dumps(report))

    for record in checks.records:
        status = "PASS" if record["pass"] else "FAIL"
        print(
            f"{status} {record['name']}: measured={record['measured']} "
            f"threshold={record['threshold']}"
        )
    print(f"wall time: {elapsed:.2f}s", file=sys.stderr)
    return EXIT_PASS if checks.all_pass else EXIT_CHECK_FAILURE


def validate_command(scenario_path) -> int:
    try:
        doc = json.loads(Path(scenario_path).read_text())
        validate_scenario(doc)
    except (OSError, json.JSONDecodeError, ScenarioError) as err:
        print(f"error: invalid scenario: {err}", file=sys.stderr)
        return EXIT_INVALID
    print("scenario is valid")
    return EXIT_PASS


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="defham", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run a scenario and write artifacts")
    run_p.add_argument("scenario")
    run_p.add_argument("--out-dir", default=None)
    run_p.add_argument("--threads", type=int, default=1)
    val_p = sub.add_parser("validate", help="validate a scenario file")
    val_p.add_argument("scenario")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run_scenario(args.scenario, args.out_dir, args.threads)
    return validate_command(args.scenario)


if __name__ == "__main__":
    sys.exit(main())
