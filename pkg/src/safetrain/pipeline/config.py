"""Workspace specification: loading, validation and serialisation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from safetrain.abstraction import PartitionError, partition_state_space
from safetrain.dynamics import SystemModel
from safetrain.geometry import Box
from safetrain.neural.training import TrainConfig


class SpecError(ValueError):
    """Malformed or inconsistent workspace specification."""


@dataclass
class LivenessConfig:
    state_grid: int = 6
    k_grid: int = 3

    def to_dict(self) -> dict:
        return {"state_grid": self.state_grid, "k_grid": self.k_grid}


@dataclass
class WorkspaceSpec:
    name: str
    model: SystemModel
    state_bounds: Box
    state_partition: list
    goal: Box
    obstacles: list[Box]
    controller_bounds: Box
    controller_counts: list[int]
    circular: list[int] = field(default_factory=list)
    horizon: int = 300
    training: TrainConfig = field(default_factory=TrainConfig)
    liveness: LivenessConfig = field(default_factory=LivenessConfig)
    fallbacks: int = 3
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "model": self.model.to_dict(),
            "state_bounds": self.state_bounds.to_dict(),
            "state_partition": [p if isinstance(p, int) else [float(v) for v in p]
                                for p in self.state_partition],
            "circular": list(self.circular),
            "goal": self.goal.to_dict(),
            "obstacles": [o.to_dict() for o in self.obstacles],
            "controller_bounds": self.controller_bounds.to_dict(),
            "controller_counts": list(self.controller_counts),
            "horizon": self.horizon,
            "training": self.training.to_dict(),
            "liveness": self.liveness.to_dict(),
            "fallbacks": self.fallbacks,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def with_seed(self, seed: int) -> "WorkspaceSpec":
        d = self.to_dict()
        d["seed"] = int(seed)
        return spec_from_dict(d)


def _box(d: Any, what: str) -> Box:
    try:
        return Box.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"{what}: {exc}") from exc


def spec_from_dict(d: dict) -> WorkspaceSpec:
    required = ("model", "state_bounds", "state_partition", "goal", "controller_bounds",
                "controller_counts")
    missing = [k for k in required if k not in d]
    if missing:
        raise SpecError(f"missing fields: {', '.join(missing)}")
    try:
        model = SystemModel.from_dict(d["model"])
    except (KeyError, ValueError, TypeError) as exc:
        raise SpecError(f"model: {exc}") from exc
    partition = [p if isinstance(p, int) else [float(v) for v in p] for p in d["state_partition"]]
    spec = WorkspaceSpec(
        name=str(d.get("name", "workspace")),
        model=model,
        state_bounds=_box(d["state_bounds"], "state_bounds"),
        state_partition=partition,
        goal=_box(d["goal"], "goal"),
        obstacles=[_box(o, f"obstacle {i}") for i, o in enumerate(d.get("obstacles", []))],
        controller_bounds=_box(d["controller_bounds"], "controller_bounds"),
        controller_counts=[int(c) for c in d["controller_counts"]],
        circular=[int(a) for a in d.get("circular", [])],
        horizon=int(d.get("horizon", 300)),
        training=TrainConfig.from_dict(d.get("training", {})),
        liveness=LivenessConfig(**d.get("liveness", {})),
        fallbacks=int(d.get("fallbacks", 3)),
        seed=int(d.get("seed", 0)),
    )
    validate(spec)
    return spec


def validate(spec: WorkspaceSpec) -> None:
    n, m = spec.model.n, spec.model.m
    if spec.state_bounds.dim != n:
        raise SpecError(f"state_bounds has dim {spec.state_bounds.dim}, model has n={n}")
    if spec.controller_bounds.dim != m * (n + 1):
        raise SpecError(f"controller_bounds has dim {spec.controller_bounds.dim}, "
                        f"expected m*(n+1)={m * (n + 1)}")
    if len(spec.controller_counts) != spec.controller_bounds.dim:
        raise SpecError("controller_counts needs one entry per controller parameter")
    if any(c < 1 for c in spec.controller_counts):
        raise SpecError("controller_counts must be positive")
    if any(a < 0 or a >= n for a in spec.circular):
        raise SpecError(f"circular axes {spec.circular} out of range for n={n}")
    if spec.horizon < 1:
        raise SpecError("horizon must be >= 1")
    for i, ob in enumerate(spec.obstacles):
        inter = spec.goal.intersection(ob)
        if inter is not None and np.all(inter.widths > 0):
            raise SpecError(f"goal overlaps obstacle {i}: goal {spec.goal} vs obstacle {i} {ob}")
    try:
        partition_state_space(spec.state_bounds, spec.state_partition, spec.goal, spec.obstacles)
    except PartitionError as exc:
        raise SpecError(str(exc)) from exc


def load_spec(path: str | Path) -> WorkspaceSpec:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise SpecError(f"{path}: top level must be an object")
    return spec_from_dict(d)


def save_spec(spec: WorkspaceSpec, path: str | Path) -> None:
    Path(path).write_text(spec.to_json())
