"""Artifact files: JSON for every pipeline stage, CSV for trajectories.

JSON is written with sorted keys and two-space indent so that identical runs
produce identical bytes; wall-clock timings live in their own file.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any

import jsonschema

from safetrain.abstraction import PosteriorGraph, SafeSets
from safetrain.liveness import Assignment, PredecessorGraph
from safetrain.neural.compose import GlobalController
from safetrain.pipeline.config import WorkspaceSpec
from safetrain.pipeline.simulate import Trajectory
from safetrain.pipeline.synthesis import STAGES, SynthesisResult, TrainRecord, summary

_num = {"type": "number"}
_box = {"type": "object", "required": ["lo", "hi"],
        "properties": {"lo": {"type": "array", "items": _num},
                       "hi": {"type": "array", "items": _num}}}
_ids = {"type": "array", "items": {"type": "integer"}}
_net = {"type": "object", "required": ["shapes", "W1", "b1", "W2", "b2"],
        "properties": {k: {"type": "array", "items": _num} for k in ("W1", "b1", "W2", "b2")}}
_edges = {"type": "array", "items": {"type": "object",
                                     "required": ["state", "partition", "successors"],
                                     "properties": {"state": {"type": "integer"},
                                                    "partition": {"type": "integer"},
                                                    "successors": _ids}}}

SCHEMAS: dict[str, dict] = {
    "abstraction.json": {
        "type": "object", "required": ["states", "partitions", "edges", "posts"],
        "properties": {
            "states": {"type": "array", "items": {
                "type": "object", "required": ["id", "kind", "region"],
                "properties": {"id": {"type": "integer"}, "region": _box,
                               "kind": {"enum": ["normal", "goal", "obstacle", "out_of_bounds"]}}}},
            "partitions": {"type": "array", "items": {
                "type": "object", "required": ["id", "m", "n", "bounds"],
                "properties": {"id": {"type": "integer"}, "bounds": _box}}},
            "edges": _edges,
            "posts": {"type": "array"},
            "circular": _ids,
        }},
    "safe_sets.json": {
        "type": "object", "required": ["x_unsafe", "x_safe", "p_safe", "iterations"],
        "properties": {"x_unsafe": _ids, "x_safe": _ids, "iterations": {"type": "integer"},
                       "p_safe": {"type": "object", "additionalProperties": _ids},
                       "layers": {"type": "array", "items": _ids}}},
    "predecessor.json": {
        "type": "object", "required": ["states", "goal", "edges", "witnesses", "boxes"],
        "properties": {"states": _ids, "edges": _edges, "witnesses": {"type": "array"},
                       "boxes": {"type": "object", "additionalProperties": _box}}},
    "assignment.json": {
        "type": "object", "required": ["states"],
        "properties": {"states": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["dist", "p_star", "live_candidate", "ranking"],
            "properties": {"dist": {"type": ["integer", "null"]}, "p_star": {"type": "integer"},
                           "live_candidate": {"type": "boolean"},
                           "ranking": {"type": "array", "items": {
                               "type": "object",
                               "required": ["partition", "measure", "progress_set"],
                               "properties": {"partition": {"type": "integer"},
                                              "measure": _num, "progress_set": _ids}}}}}}}},
    "training.json": {
        "type": "object", "additionalProperties": {
            "type": "object",
            "required": ["state", "partition", "bound", "net", "reach_ok", "attempts"],
            "properties": {"state": {"type": "integer"}, "partition": {"type": "integer"},
                           "bound": _num, "lp_value": {"type": ["number", "null"]},
                           "final_loss": {"type": ["number", "null"]},
                           "reach_ok": {"type": ["boolean", "null"]}, "reached": _ids,
                           "attempts": {"type": "array"}, "net": _net}}},
    "controller.json": {
        "type": "object", "required": ["modules", "circular"],
        "properties": {"circular": _ids, "bounds": {"anyOf": [_box, {"type": "null"}]},
                       "modules": {"type": "array", "items": {
                           "type": "object", "required": ["state", "box", "net"],
                           "properties": {"state": {"type": "integer"}, "box": _box,
                                          "net": _net}}}}},
    "verify.json": {
        "type": "object", "required": ["states", "reach_ok", "chain_ok", "trained"],
        "properties": {"reach_ok": {"type": "integer"}, "chain_ok": {"type": "integer"},
                       "trained": {"type": "integer"},
                       "states": {"type": "object", "additionalProperties": {
                           "type": "object", "required": ["partition", "reach_ok", "chain_ok"]}}}},
    "trajectory.json": {
        "type": "object",
        "required": ["states", "inputs", "disturbances", "safe", "goal_reached", "events"],
        "properties": {"states": {"type": "array", "items": {"type": "array", "items": _num}},
                       "safe": {"type": "boolean"}, "goal_reached": {"type": "boolean"},
                       "events": {"type": "array"}}},
}

# files produced by each stage, in stage order
STAGE_FILES = {
    "abstract": ("abstraction.json",),
    "safe-sets": ("safe_sets.json",),
    "assign": ("predecessor.json", "assignment.json"),
    "train": ("training.json",),
    "compose": ("controller.json",),
    "verify": ("verify.json",),
}


class ArtifactError(RuntimeError):
    """Missing or malformed artifact file."""


def _clean(obj: Any) -> Any:
    """Non-finite floats become ``null`` so the output stays strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: str | Path, obj: Any, schema: str | None = None) -> Path:
    path = Path(path)
    data = _clean(obj)
    if schema is not None:
        jsonschema.validate(data, SCHEMAS[schema])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data))
    return path


def read_json(path: str | Path, schema: str | None = None) -> Any:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: {exc}") from exc
    if schema is not None:
        try:
            jsonschema.validate(data, SCHEMAS[schema])
        except jsonschema.ValidationError as exc:
            raise ArtifactError(f"{path}: {exc.message}") from exc
    return data


def _stage_payload(res: SynthesisResult, name: str) -> dict | None:
    if name == "abstraction.json":
        return None if res.graph is None else res.graph.to_dict()
    if name == "safe_sets.json":
        return None if res.safe is None else res.safe.to_dict()
    if name == "predecessor.json":
        return None if res.pred is None else res.pred.to_dict()
    if name == "assignment.json":
        return None if res.assignment is None else res.assignment.to_dict()
    if name == "training.json":
        return None if not res.training else {str(q): r.to_dict()
                                              for q, r in sorted(res.training.items())}
    if name == "controller.json":
        return None if res.controller is None else res.controller.to_dict()
    if name == "verify.json":
        return res.verify
    raise KeyError(name)


def export_result(res: SynthesisResult, out: str | Path) -> list[Path]:
    """Write every artifact present in ``res`` plus spec, summary and timing."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "spec.json"]
    (out / "spec.json").write_text(res.spec.to_json())
    for stage in STAGES:
        for name in STAGE_FILES[stage]:
            payload = _stage_payload(res, name)
            if payload is not None:
                written.append(write_json(out / name, payload, schema=name))
    written.append(write_json(out / "summary.json", summary(res)))
    written.append(write_json(out / "timing.json", res.timing))
    return written


def load_result(out: str | Path, spec: WorkspaceSpec, before: str) -> SynthesisResult:
    """Re-import the artifacts of every stage preceding ``before``."""
    if before not in STAGES:
        raise ValueError(f"stages are {STAGES}")
    out = Path(out)
    res = SynthesisResult(spec)
    need = STAGES[:STAGES.index(before)]
    if "abstract" in need:
        res.graph = PosteriorGraph.from_dict(read_json(out / "abstraction.json", "abstraction.json"))
    if "safe-sets" in need:
        res.safe = SafeSets.from_dict(read_json(out / "safe_sets.json", "safe_sets.json"))
    if "assign" in need:
        res.pred = PredecessorGraph.from_dict(read_json(out / "predecessor.json", "predecessor.json"))
        res.assignment = Assignment.from_dict(read_json(out / "assignment.json", "assignment.json"))
    if "train" in need:
        raw = read_json(out / "training.json", "training.json")
        res.training = {int(q): TrainRecord.from_dict(r) for q, r in sorted(raw.items(),
                                                                        key=lambda kv: int(kv[0]))}
    if "compose" in need:
        res.controller = GlobalController.from_dict(read_json(out / "controller.json",
                                                              "controller.json"))
    if "verify" in need:
        res.verify = read_json(out / "verify.json", "verify.json")
    timing = out / "timing.json"
    if timing.exists():
        res.timing = {k: v for k, v in read_json(timing).items() if k in need}
    return res


def load_controller(path: str | Path) -> GlobalController:
    return GlobalController.from_dict(read_json(path, "controller.json"))


def trajectory_rows(traj: Trajectory) -> list[list]:
    n = traj.states.shape[1] if traj.states.ndim == 2 and len(traj.states) else 0
    m = traj.inputs.shape[1] if traj.inputs.ndim == 2 and len(traj.inputs) else 0
    hit = [e["t"] for e in traj.events if e["kind"] == "obstacle"]
    first_hit = min(hit) if hit else math.inf
    rows = []
    for t, x in enumerate(traj.states):
        u = traj.inputs[t].tolist() if t < len(traj.inputs) else [""] * m
        reached = traj.reached_at is not None and t >= traj.reached_at
        rows.append([t, *x.tolist()[:n], *u, int(t < first_hit), int(reached)])
    return rows


def write_trajectory_csv(traj: Trajectory, path: str | Path, n: int | None = None,
                         m: int | None = None) -> Path:
    """``t,x1..xn,u1..um,safe,goal_reached``; inputs are blank on the final row.

    ``n``/``m`` fix the header width for trajectories without states.
    """
    path = Path(path)
    n = n if n is not None else (traj.states.shape[1] if len(traj.states) else 0)
    m = m if m is not None else (traj.inputs.shape[1] if traj.inputs.ndim == 2 else 0)
    header = ["t", *[f"x{i + 1}" for i in range(n)], *[f"u{j + 1}" for j in range(m)],
              "safe", "goal_reached"]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        if len(traj.states):
            w.writerows(trajectory_rows(traj))
    return path


def write_trajectory_json(traj: Trajectory, path: str | Path) -> Path:
    return write_json(path, traj.to_dict(), schema="trajectory.json")


def read_trajectory_json(path: str | Path) -> Trajectory:
    return Trajectory.from_dict(read_json(path, "trajectory.json"))
