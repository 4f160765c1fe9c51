"""Scenario fixtures, JSON (de)serialization and solution reports.

A scenario bundles the central body, the gravity field kind, the two
boundary orbits and a planner configuration. The benchmark scenarios are
shipped as package data and can be loaded by name; arbitrary scenario
files use the same schema.
"""

import json
import os
import tempfile
from dataclasses import asdict, dataclass, replace
from importlib import resources

import numpy as np

from .errors import ScenarioFormatError
from .metric import DiscreteCurve
from .planner import (MODE_REFINE_ONLY, PlannerConfig, SearchDiagnostics,
                      TransferProblem, TransferSolution)
from .twobody import (BodyConstants, GravityKind, GravityModel, OrbitState,
                      specific_energy)

BUNDLED = ("leo_heo", "gto_rgeo", "earth_dionysus", "jupiter_io",
           "jupiter_io_smoke")

_GRAVITY = {"kepler": GravityKind.KEPLER, "j2": GravityKind.J2,
            "uniform": GravityKind.UNIFORM}


@dataclass(frozen=True)
class Scenario:
    name: str
    model: GravityModel
    initial: OrbitState
    target: OrbitState
    planner: PlannerConfig
    refine_only_overrides: dict

    def problem(self) -> TransferProblem:
        return TransferProblem(self.model, self.initial, self.target)

    def config_for_mode(self, mode: str) -> PlannerConfig:
        """Planner configuration, with the refine-only block applied when
        that mode is requested (its stage has its own tuning)."""
        if mode != MODE_REFINE_ONLY:
            return self.planner
        overrides = dict(self.refine_only_overrides)
        if not overrides:
            overrides = {"population_size": 50, "refine_generations": 5000,
                         "use_mbh": False}
        return replace(self.planner, **overrides)


def _need(raw, key, path):
    if key not in raw:
        raise ScenarioFormatError(f"missing field {path}.{key}")
    return raw[key]


def _vector(raw, key, path):
    val = _need(raw, key, path)
    arr = np.asarray(val, dtype=float)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ScenarioFormatError(f"{path}.{key} must be a finite 3-vector")
    return arr


def scenario_from_dict(raw: dict, name_hint: str = "scenario") -> Scenario:
    name = raw.get("name", name_hint)
    body_raw = _need(raw, "body", name)
    try:
        body = BodyConstants(mu=float(_need(body_raw, "mu", "body")),
                             j2=float(body_raw.get("j2", 0.0)),
                             r_body=float(body_raw.get("r_body", 1.0)))
    except ValueError as exc:
        raise ScenarioFormatError(f"body: {exc}") from exc
    kind_name = str(raw.get("gravity", "kepler")).lower()
    if kind_name not in _GRAVITY:
        raise ScenarioFormatError(f"gravity must be one of {sorted(_GRAVITY)}")
    try:
        model = GravityModel(body, _GRAVITY[kind_name])
    except ValueError as exc:
        raise ScenarioFormatError(f"gravity: {exc}") from exc

    states = {}
    for role in ("initial", "target"):
        sub = _need(raw, role, name)
        try:
            states[role] = OrbitState(r=_vector(sub, "r", role),
                                      v=_vector(sub, "v", role))
        except ValueError as exc:
            raise ScenarioFormatError(f"{role}: {exc}") from exc
        if specific_energy(model, states[role]) >= 0.0:
            raise ScenarioFormatError(f"{role} orbit is not bound (E >= 0)")

    planner_raw = raw.get("planner", {})
    valid = set(PlannerConfig.__dataclass_fields__)
    unknown = set(planner_raw) - valid
    if unknown:
        raise ScenarioFormatError(f"planner: unknown fields {sorted(unknown)}")
    try:
        planner = PlannerConfig(**planner_raw)
    except (TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"planner: {exc}") from exc
    if planner.backend == "ellipse" and model.kind is GravityKind.J2:
        raise ScenarioFormatError(
            "ellipse backend requires a Keplerian gravity model "
            "(conic arcs are not geodesics of the oblate field)")

    overrides = raw.get("refine_only", {})
    unknown = set(overrides) - valid
    if unknown:
        raise ScenarioFormatError(f"refine_only: unknown fields {sorted(unknown)}")
    return Scenario(name=name, model=model, initial=states["initial"],
                    target=states["target"], planner=planner,
                    refine_only_overrides=dict(overrides))


def load_scenario(spec: str) -> Scenario:
    """Load a scenario from a bundled name or a JSON file path."""
    if spec in BUNDLED:
        text = resources.files("geodv.data").joinpath(f"{spec}.json").read_text()
    else:
        if not os.path.exists(spec):
            raise ScenarioFormatError(f"scenario file not found: {spec}")
        with open(spec) as fh:
            text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, dict):
        raise ScenarioFormatError("scenario document must be a JSON object")
    return scenario_from_dict(raw, name_hint=os.path.basename(spec))


def scenario_dict(scenario: Scenario) -> dict:
    return {
        "name": scenario.name,
        "body": {"mu": scenario.model.body.mu, "j2": scenario.model.body.j2,
                 "r_body": scenario.model.body.r_body},
        "gravity": scenario.model.kind.value,
        "initial": {"r": scenario.initial.r.tolist(),
                    "v": scenario.initial.v.tolist()},
        "target": {"r": scenario.target.r.tolist(),
                   "v": scenario.target.v.tolist()},
        "planner": asdict(scenario.planner),
        "refine_only": dict(scenario.refine_only_overrides),
    }


def solution_dict(sol: TransferSolution) -> dict:
    return {
        "p0": sol.p0.tolist(), "pf": sol.pf.tolist(),
        "dv0": sol.dv0.tolist(), "dvf": sol.dvf.tolist(),
        "total_dv": sol.total_dv, "energy": sol.energy, "tof": sol.tof,
        "branch": sol.branch, "provenance": sol.provenance,
        "u0": sol.u0, "uf": sol.uf, "w": sol.w,
        "curve": {"params": sol.curve.params.tolist(),
                  "nodes": sol.curve.nodes.tolist()},
    }


def solution_from_dict(raw: dict) -> TransferSolution:
    try:
        curve = DiscreteCurve(nodes=np.asarray(raw["curve"]["nodes"], dtype=float),
                              params=np.asarray(raw["curve"]["params"], dtype=float))
        return TransferSolution(
            p0=np.asarray(raw["p0"], dtype=float),
            pf=np.asarray(raw["pf"], dtype=float),
            dv0=np.asarray(raw["dv0"], dtype=float),
            dvf=np.asarray(raw["dvf"], dtype=float),
            total_dv=float(raw["total_dv"]), energy=float(raw["energy"]),
            tof=float(raw["tof"]), branch=str(raw["branch"]), curve=curve,
            provenance=str(raw["provenance"]), u0=float(raw.get("u0", 0.0)),
            uf=float(raw.get("uf", 0.0)), w=float(raw.get("w", 0.0)))
    except (KeyError, ValueError, TypeError) as exc:
        raise ScenarioFormatError(f"malformed solution record: {exc}") from exc


def report_dict(scenario: Scenario, mode: str, seed: int,
                sol: TransferSolution, diag: SearchDiagnostics) -> dict:
    return {
        "scenario": scenario_dict(scenario),
        "mode": mode,
        "seed": seed,
        "solution": solution_dict(sol),
        "diagnostics": asdict(diag),
    }


def load_report(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioFormatError(f"cannot read report {path}: {exc}") from exc
    for key in ("scenario", "solution"):
        if key not in raw:
            raise ScenarioFormatError(f"report missing {key!r} section")
    return raw


def write_json(path: str, payload: dict):
    """Atomic JSON write (temp file + rename), stable key order."""
    text = json.dumps(payload, indent=2, sort_keys=True)
    _atomic_write(path, text)


def _atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
