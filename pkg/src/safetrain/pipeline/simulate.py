"""Closed-loop rollouts of a composed controller with reach-avoid verdicts."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from safetrain.dynamics import SystemModel, step
from safetrain.geometry import Box
from safetrain.neural.compose import GlobalController, OutsideSafeSet

POLICIES = ("none", "vertex", "random")


@dataclass
class Trajectory:
    """States are stored in canonical form (circular axes wrapped), so
    ``states[t+1] == canonical(step(states[t], inputs[t], disturbances[t]))``."""

    states: np.ndarray          # (k+1, n)
    inputs: np.ndarray          # (k, m)
    disturbances: np.ndarray    # (k, n)
    safe: bool
    goal_reached: bool
    reached_at: int | None
    start_state: int | None
    events: list[dict] = field(default_factory=list)
    degenerate: bool = False    # started inside the goal
    left_init: bool = False     # some state outside X_init and the goal

    @property
    def steps(self) -> int:
        return len(self.inputs)

    def to_dict(self) -> dict:
        return {
            "states": self.states.tolist(), "inputs": self.inputs.tolist(),
            "disturbances": self.disturbances.tolist(), "safe": self.safe,
            "goal_reached": self.goal_reached, "reached_at": self.reached_at,
            "start_state": self.start_state, "events": self.events,
            "degenerate": self.degenerate, "left_init": self.left_init,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        n = len(d["states"][0]) if d["states"] else 0
        m = len(d["inputs"][0]) if d["inputs"] else 0
        return cls(np.array(d["states"], dtype=float).reshape(-1, n),
                   np.array(d["inputs"], dtype=float).reshape(-1, m),
                   np.array(d["disturbances"], dtype=float).reshape(-1, n),
                   bool(d["safe"]), bool(d["goal_reached"]), d["reached_at"], d["start_state"],
                   list(d.get("events", [])), bool(d.get("degenerate", False)),
                   bool(d.get("left_init", False)))


def in_any(x: np.ndarray, boxes: Sequence[Box]) -> bool:
    return any(b.contains(x) for b in boxes)


def _vertex_disturbance(model: SystemModel, gc: GlobalController, x, u, goal: Box | None):
    """Disturbance vertex pushing the successor farthest from the goal centre
    (first vertex on ties)."""
    V = model.disturbance.vertices()
    nxt = np.array([gc.canonical(step(model, x, u, w)) for w in V])
    if goal is None:
        return V[0]
    d = np.linalg.norm(nxt - goal.center, axis=1)
    return V[int(np.argmax(d))]


def simulate(gc: GlobalController, model: SystemModel, x0, T: int, goal: Box | None = None,
             obstacles: Sequence[Box] = (), policy: str = "none", seed: int = 0) -> Trajectory:
    """Roll the closed loop for ``T`` steps or until the goal is entered.

    ``x0`` must lie in a gated state or in the goal; otherwise
    `OutsideSafeSet` is raised before any step. Leaving the gated states
    mid-run is recorded as an event and ends the rollout.
    """
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    n, m = model.n, model.m
    x = gc.canonical(np.asarray(x0, dtype=float))
    obstacles = list(obstacles)
    if goal is not None and goal.contains(x):
        start = gc.locate(x)
        return Trajectory(x[None, :].copy(), np.zeros((0, m)), np.zeros((0, n)),
                          not in_any(x, obstacles), True, 0,
                          None if start is None else start.state, [], degenerate=True)
    start = gc.locate(x)
    if start is None:
        raise OutsideSafeSet(x)
    rng = np.random.default_rng(seed)
    dist = model.disturbance
    xs, us, ws = [x], [], []
    events: list[dict] = []
    safe = not in_any(x, obstacles)
    reached_at = None
    left = False
    for t in range(T):
        try:
            u = np.atleast_1d(gc(x))
        except OutsideSafeSet:
            events.append({"t": t, "kind": "outside_safe_set", "x": x.tolist()})
            left = True
            break
        if dist is None or policy == "none":
            w = np.zeros(n)
        elif policy == "random":
            w = rng.uniform(dist.lo, dist.hi)
        else:
            w = _vertex_disturbance(model, gc, x, u, goal)
        x = gc.canonical(step(model, x, u, w))
        us.append(u)
        ws.append(w)
        xs.append(x)
        if in_any(x, obstacles):
            if safe:
                events.append({"t": t + 1, "kind": "obstacle", "x": x.tolist()})
            safe = False
        if goal is not None and goal.contains(x):
            reached_at = t + 1
            break
        if gc.locate(x) is None and not left:
            # the next loop iteration records the dispatcher failure
            left = True
    return Trajectory(np.array(xs), np.array(us).reshape(-1, m), np.array(ws).reshape(-1, n),
                      safe, reached_at is not None, reached_at, start.state, events,
                      left_init=left)


def random_initial_points(gc: GlobalController, count: int, seed: int = 0,
                          states: Sequence[int] | None = None) -> tuple[list[int], np.ndarray]:
    """``count`` seeded picks of a gated state (uniform over states) and a
    uniform point strictly inside it."""
    mods = gc.modules if states is None else [mod for mod in gc.modules if mod.state in set(states)]
    if not mods:
        raise ValueError("no states to sample from")
    rng = np.random.default_rng(seed)
    ids, pts = [], []
    for _ in range(count):
        mod = mods[int(rng.integers(len(mods)))]
        u = rng.uniform(0.01, 0.99, mod.box.dim)
        ids.append(mod.state)
        pts.append(mod.box.lo + u * mod.box.widths)
    return ids, np.array(pts)
