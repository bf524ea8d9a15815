"""Finite abstraction of the closed loop under all affine laws.

States are boxes tiling the workspace (plus one goal state, one state per
obstacle and a virtual out-of-bounds sink), controller partitions are boxes
tiling the parameter space, and the posterior graph records which states an
over-approximated one-step image can touch.
"""
from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from safetrain.dynamics import ControllerPartition, SystemModel, interval_post
from safetrain.geometry import Box, box_intersects, boxes_intersecting, wrap_box


class StateKind(str, enum.Enum):
    NORMAL = "normal"
    GOAL = "goal"
    OBSTACLE = "obstacle"
    OUT_OF_BOUNDS = "out_of_bounds"


@dataclass(frozen=True)
class AbstractState:
    id: int
    region: Box
    kind: StateKind = StateKind.NORMAL

    @property
    def is_terminal(self) -> bool:
        return self.kind is not StateKind.NORMAL

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "region": self.region.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "AbstractState":
        return cls(int(d["id"]), Box.from_dict(d["region"]), StateKind(d["kind"]))


class PartitionError(ValueError):
    pass


def _axis_cuts(bounds: Box, scheme) -> list[np.ndarray]:
    cuts = []
    for d in range(bounds.dim):
        spec = scheme[d]
        if isinstance(spec, (int, np.integer)):
            if spec < 1:
                raise PartitionError(f"axis {d}: need at least one cell")
            cuts.append(np.linspace(bounds.lo[d], bounds.hi[d], int(spec) + 1))
        else:
            c = np.array(sorted(set(float(v) for v in spec) | {bounds.lo[d], bounds.hi[d]}))
            if c[0] < bounds.lo[d] or c[-1] > bounds.hi[d]:
                raise PartitionError(f"axis {d}: cut outside bounds")
            cuts.append(c)
    return cuts


def _check_aligned(name: str, box: Box, bounds: Box, cuts: list[np.ndarray]) -> None:
    if not bounds.contains_box(box, tol=1e-12):
        raise PartitionError(f"{name} {box} is not inside the state bounds {bounds}")
    for d, c in enumerate(cuts):
        for side, v in (("lower", box.lo[d]), ("upper", box.hi[d])):
            if not np.any(np.isclose(c, v, rtol=0.0, atol=1e-12)):
                raise PartitionError(
                    f"{name} {side} face on axis {d} at {v} is not on a cut plane {c.tolist()}")


def partition_state_space(bounds: Box, scheme: Sequence, goal: Box | None,
                          obstacles: Sequence[Box] = ()) -> list[AbstractState]:
    """Grid ``bounds`` and merge cells covered by the goal / each obstacle.

    ``scheme[d]`` is a cell count or a list of interior cut positions. Normal
    cells come first in lexicographic grid order, then the goal, then the
    obstacles in the given order. Special regions must align with cuts.
    """
    if len(scheme) != bounds.dim:
        raise PartitionError(f"scheme has {len(scheme)} axes, state space has {bounds.dim}")
    cuts = _axis_cuts(bounds, scheme)
    specials: list[tuple[str, Box]] = []
    if goal is not None:
        _check_aligned("goal", goal, bounds, cuts)
        specials.append(("goal", goal))
    for i, ob in enumerate(obstacles):
        _check_aligned(f"obstacle {i}", ob, bounds, cuts)
        specials.append((f"obstacle {i}", ob))
    for (na, a), (nb, b) in itertools.combinations(specials, 2):
        inter = a.intersection(b)
        if inter is not None and np.all(inter.widths > 0):
            raise PartitionError(f"{na} overlaps {nb}")

    states: list[AbstractState] = []
    for idx in itertools.product(*[range(len(c) - 1) for c in cuts]):
        lo = np.array([cuts[d][i] for d, i in enumerate(idx)])
        hi = np.array([cuts[d][i + 1] for d, i in enumerate(idx)])
        cell = Box(lo, hi)
        if any(sb.contains_box(cell, tol=1e-12) for _, sb in specials):
            continue
        states.append(AbstractState(len(states), cell))
    if goal is not None:
        states.append(AbstractState(len(states), goal, StateKind.GOAL))
    for ob in obstacles:
        states.append(AbstractState(len(states), ob, StateKind.OBSTACLE))
    return states


def partition_controller_space(bounds: Box, counts: Sequence[int], m: int = 1,
                               n: int | None = None) -> list[ControllerPartition]:
    """Uniform grid of ``prod(counts)`` parameter boxes, lexicographic ids."""
    if len(counts) != bounds.dim:
        raise PartitionError(f"{len(counts)} counts for a {bounds.dim}-dimensional parameter box")
    if any(c < 1 for c in counts):
        raise PartitionError("counts must be >= 1 on every axis")
    if n is None:
        n = bounds.dim // m - 1
    edges = [np.linspace(bounds.lo[d], bounds.hi[d], c + 1) for d, c in enumerate(counts)]
    parts = []
    for idx in itertools.product(*[range(c) for c in counts]):
        lo = [edges[d][i] for d, i in enumerate(idx)]
        hi = [edges[d][i + 1] for d, i in enumerate(idx)]
        parts.append(ControllerPartition(len(parts), Box(lo, hi), m=m, n=n))
    return parts


@dataclass
class PosteriorGraph:
    """Transition system over abstract states labelled by partitions.

    ``edges[(q, P)]`` is the sorted tuple of successor ids; only normal
    states have outgoing edges. ``oob`` is the id of the virtual
    out-of-bounds state (or ``None`` for hand-built graphs).
    """

    states: list[AbstractState]
    partitions: list[ControllerPartition]
    edges: dict[tuple[int, int], tuple[int, ...]]
    posts: dict[tuple[int, int], Box] = field(default_factory=dict)
    oob: int | None = None
    bounds: Box | None = None
    circular: tuple[int, ...] = ()

    @property
    def partition_ids(self) -> list[int]:
        return [p.id for p in self.partitions]

    def state(self, sid: int) -> AbstractState:
        return self.states[sid]

    @property
    def goal(self) -> int | None:
        for s in self.states:
            if s.kind is StateKind.GOAL:
                return s.id
        return None

    @property
    def normal_ids(self) -> list[int]:
        return [s.id for s in self.states if s.kind is StateKind.NORMAL]

    def predecessors(self) -> dict[int, list[tuple[int, int]]]:
        pred: dict[int, list[tuple[int, int]]] = {s.id: [] for s in self.states}
        for (q, P), succ in sorted(self.edges.items()):
            for s in succ:
                pred[s].append((q, P))
        return pred

    @classmethod
    def from_edges(cls, states: Sequence[AbstractState], partitions: Sequence,
                   edges: dict[tuple[int, int], Iterable[int]]) -> "PosteriorGraph":
        """Hand-built graph; ``partitions`` may be bare ids."""
        parts = [p if isinstance(p, ControllerPartition)
                 else ControllerPartition(int(p), Box([0.0] * 4, [0.0] * 4)) for p in partitions]
        full = {}
        for s in states:
            if s.kind is StateKind.NORMAL:
                for p in parts:
                    full[(s.id, p.id)] = tuple(sorted(set(edges.get((s.id, p.id), ()))))
        return cls(list(states), parts, full)

    def to_dict(self) -> dict:
        return {
            "states": [s.to_dict() for s in self.states],
            "partitions": [p.to_dict() for p in self.partitions],
            "oob": self.oob,
            "bounds": None if self.bounds is None else self.bounds.to_dict(),
            "circular": list(self.circular),
            "edges": [{"state": q, "partition": P, "successors": list(s)}
                      for (q, P), s in sorted(self.edges.items())],
            "posts": [{"state": q, "partition": P, "box": b.to_dict()}
                      for (q, P), b in sorted(self.posts.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorGraph":
        return cls(
            states=[AbstractState.from_dict(s) for s in d["states"]],
            partitions=[ControllerPartition.from_dict(p) for p in d["partitions"]],
            edges={(e["state"], e["partition"]): tuple(e["successors"]) for e in d["edges"]},
            posts={(e["state"], e["partition"]): Box.from_dict(e["box"]) for e in d["posts"]},
            oob=d.get("oob"),
            bounds=None if d.get("bounds") is None else Box.from_dict(d["bounds"]),
            circular=tuple(d.get("circular", ())),
        )


def successors_of_box(G: Box, states: Sequence[AbstractState], bounds: Box,
                      circular: Sequence[int] = (), oob: int | None = None,
                      _stack: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[int, ...]:
    """Ids of states touched by ``G`` (circular axes wrapped first), plus
    ``oob`` when ``G`` leaves ``bounds`` along a non-circular axis."""
    if _stack is None:
        real = [s for s in states if s.kind is not StateKind.OUT_OF_BOUNDS]
        los = np.array([s.region.lo for s in real])
        his = np.array([s.region.hi for s in real])
        ids = np.array([s.id for s in real])
    else:
        los, his, ids = _stack
    hit = np.zeros(len(ids), dtype=bool)
    for piece in wrap_box(G, bounds, circular):
        hit |= boxes_intersecting(piece, los, his)
    out = set(int(i) for i in ids[hit])
    if oob is not None:
        flat = [d for d in range(G.dim) if d not in circular]
        if np.any(G.lo[flat] < bounds.lo[flat]) or np.any(G.hi[flat] > bounds.hi[flat]):
            out.add(oob)
    return tuple(sorted(out))


def build_posterior_graph(states: Sequence[AbstractState], partitions: Sequence[ControllerPartition],
                          model: SystemModel, bounds: Box, circular: Sequence[int] = ()) -> PosteriorGraph:
    states = [s for s in states if s.kind is not StateKind.OUT_OF_BOUNDS]
    oob = len(states)
    all_states = list(states) + [AbstractState(oob, bounds, StateKind.OUT_OF_BOUNDS)]
    stack = (np.array([s.region.lo for s in states]), np.array([s.region.hi for s in states]),
             np.array([s.id for s in states]))
    edges: dict[tuple[int, int], tuple[int, ...]] = {}
    posts: dict[tuple[int, int], Box] = {}
    for s in states:
        if s.kind is not StateKind.NORMAL:
            continue
        for P in partitions:
            G = interval_post(model, s.region, P)
            posts[(s.id, P.id)] = G
            edges[(s.id, P.id)] = successors_of_box(G, states, bounds, circular, oob, stack)
    return PosteriorGraph(all_states, list(partitions), edges, posts, oob=oob, bounds=bounds,
                          circular=tuple(circular))


def next_states(g: PosteriorGraph, q: int, P: int) -> tuple[int, ...]:
    """Successors of ``q`` under partition ``P`` (empty for terminal states)."""
    if not 0 <= q < len(g.states):
        raise KeyError(f"unknown state {q}")
    if P not in g.partition_ids:
        raise KeyError(f"unknown partition {P}")
    return g.edges.get((q, P), ())


@dataclass
class SafeSets:
    x_unsafe: frozenset[int]
    x_safe: frozenset[int]
    p_safe: dict[int, tuple[int, ...]]
    iterations: int
    layers: list[frozenset[int]] = field(default_factory=list)

    def init_states(self, g: PosteriorGraph) -> list[int]:
        """Safe normal states; their union is the certified initial set."""
        return sorted(q for q in self.x_safe if g.states[q].kind is StateKind.NORMAL)

    def to_dict(self) -> dict:
        return {
            "x_unsafe": sorted(self.x_unsafe),
            "x_safe": sorted(self.x_safe),
            "p_safe": {str(q): list(ps) for q, ps in sorted(self.p_safe.items())},
            "iterations": self.iterations,
            "layers": [sorted(layer) for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SafeSets":
        return cls(frozenset(d["x_unsafe"]), frozenset(d["x_safe"]),
                   {int(q): tuple(ps) for q, ps in d["p_safe"].items()}, int(d["iterations"]),
                   [frozenset(layer) for layer in d.get("layers", [])])


def compute_unsafe_fixpoint(g: PosteriorGraph) -> SafeSets:
    """Backtrack from obstacles: a state becomes unsafe once every partition
    can reach an unsafe state. Reverse worklist processed in layers, so the
    reported layer count is the iteration index at which the set stabilises.
    """
    pids = g.partition_ids
    unsafe0 = {s.id for s in g.states if s.kind in (StateKind.OBSTACLE, StateKind.OUT_OF_BOUNDS)}
    pred = g.predecessors()
    bad: dict[int, set[int]] = {q: set() for q in g.normal_ids}
    unsafe = set(unsafe0)
    layers = [frozenset(unsafe0)]
    frontier = sorted(unsafe0)
    while frontier:
        new: set[int] = set()
        for u in frontier:
            for q, P in pred[u]:
                if q in unsafe or q in new:
                    continue
                bad[q].add(P)
                if len(bad[q]) == len(pids):
                    new.add(q)
        if not new:
            break
        unsafe |= new
        layers.append(frozenset(unsafe))
        frontier = sorted(new)
    safe = frozenset(s.id for s in g.states) - unsafe
    p_safe = {}
    for q in sorted(safe):
        if g.states[q].kind is StateKind.NORMAL:
            p_safe[q] = tuple(P for P in pids if set(g.edges.get((q, P), ())) <= safe)
        else:
            p_safe[q] = tuple(pids)
    return SafeSets(frozenset(unsafe), safe, p_safe, iterations=len(layers), layers=layers)
