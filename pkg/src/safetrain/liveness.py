"""Predecessor graph, distance to goal, progress sets and the per-state choice
of a candidate controller partition.

The predecessor relation is only sampled: a grid of states in each abstract
state is pushed through a grid of laws in each safe partition. Edges found
this way are genuine (each carries a replayable witness), edges that are
missed only make the liveness ranking more conservative.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from safetrain.abstraction import PosteriorGraph, SafeSets, StateKind
from safetrain.dynamics import AffineLaw, ControllerPartition, SystemModel, pre_hits
from safetrain.geometry import Box, measure, wrap_point

INF = math.inf


def sample_grid(q: Box, per_axis: int) -> np.ndarray:
    """Cell-centred grid with ``per_axis`` points per non-degenerate axis."""
    axes = []
    for lo, hi in zip(q.lo, q.hi):
        if hi > lo:
            axes.append(lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis)
        else:
            axes.append(np.array([lo]))
    return np.array(list(itertools.product(*axes)), dtype=float)


@dataclass
class PredecessorGraph:
    """Sampled predecessor relation restricted to safe partitions.

    ``masks[(q, P)][q2]`` flags which grid samples of ``q`` can be steered
    into ``q2`` by some gridded law of ``P``; ``witnesses[(q, P, q2)]`` holds
    one ``(x, theta)`` pair proving the edge.
    """

    states: list[int]
    goal: int
    edges: dict[tuple[int, int], tuple[int, ...]]
    masks: dict[tuple[int, int], dict[int, np.ndarray]] = field(default_factory=dict)
    witnesses: dict[tuple[int, int, int], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    boxes: dict[int, Box] = field(default_factory=dict)

    def successors(self, q: int) -> set[int]:
        out: set[int] = set()
        for (s, _), succ in self.edges.items():
            if s == q:
                out.update(succ)
        return out

    def to_dict(self) -> dict:
        """Edges, witnesses and boxes; the per-sample masks are not kept."""
        return {
            "states": list(self.states),
            "goal": self.goal,
            "edges": [{"state": q, "partition": P, "successors": list(s)}
                      for (q, P), s in sorted(self.edges.items())],
            "witnesses": [{"state": q, "partition": P, "successor": s,
                           "x": x.tolist(), "theta": th.tolist()}
                          for (q, P, s), (x, th) in sorted(self.witnesses.items())],
            "boxes": {str(q): b.to_dict() for q, b in sorted(self.boxes.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredecessorGraph":
        edges = {(e["state"], e["partition"]): tuple(e["successors"]) for e in d["edges"]}
        wit = {(w["state"], w["partition"], w["successor"]):
               (np.array(w["x"], dtype=float), np.array(w["theta"], dtype=float))
               for w in d["witnesses"]}
        boxes = {int(q): Box.from_dict(b) for q, b in d["boxes"].items()}
        return cls(list(d["states"]), d["goal"], edges, {}, wit, boxes)

    def coverage(self, q: int, P: int, Qset: Sequence[int]) -> float:
        """Fraction of samples of ``q`` steerable into some state of ``Qset``."""
        masks = self.masks.get((q, P), {})
        sel = [masks[s] for s in Qset if s in masks]
        if not sel:
            return 0.0
        return float(np.mean(np.any(np.stack(sel), axis=0)))


def build_predecessor_graph(safe: SafeSets, graph: PosteriorGraph, model: SystemModel,
                            state_grid: int = 6, k_grid: int = 3) -> PredecessorGraph:
    goal = graph.goal
    targets = sorted(q for q in safe.x_safe
                     if graph.states[q].kind in (StateKind.NORMAL, StateKind.GOAL))
    target_set = set(targets)
    bounds, circular = graph.bounds, graph.circular
    wrap = None
    if circular:
        def wrap(Z):
            return wrap_point(Z, bounds, circular)
    parts = {p.id: p for p in graph.partitions}
    edges, masks, witnesses = {}, {}, {}
    boxes = {q: graph.states[q].region for q in targets}
    for q in safe.init_states(graph):
        X = sample_grid(graph.states[q].region, state_grid)
        for P in safe.p_safe.get(q, ()):
            cands = [s for s in graph.edges.get((q, P), ()) if s in target_set]
            if not cands:
                edges[(q, P)] = ()
                continue
            tl = np.array([boxes[s].lo for s in cands])
            th = np.array([boxes[s].hi for s in cands])
            hits, wit, thetas = pre_hits(model, X, parts[P], tl, th, k_grid, wrap)
            succ = []
            masks[(q, P)] = {}
            for j, s in enumerate(cands):
                if hits[:, j].any():
                    succ.append(s)
                    masks[(q, P)][s] = hits[:, j].copy()
                    i = int(np.argmax(hits[:, j]))
                    witnesses[(q, P, s)] = (X[i].copy(), thetas[wit[i, j]].copy())
            edges[(q, P)] = tuple(succ)
    return PredecessorGraph(targets, goal, edges, masks, witnesses, boxes)


def dist_to_goal(g: PredecessorGraph) -> dict[int, float]:
    """Hop count to the goal by backward BFS; unreachable states map to inf."""
    rev: dict[int, set[int]] = {s: set() for s in g.states}
    for (q, _), succ in g.edges.items():
        for s in succ:
            rev.setdefault(s, set()).add(q)
    dist = {s: INF for s in g.states}
    dist[g.goal] = 0
    queue = deque([g.goal])
    while queue:
        s = queue.popleft()
        for q in sorted(rev.get(s, ())):
            if dist[q] == INF:
                dist[q] = dist[s] + 1
                queue.append(q)
    return dist


def progress_set(g: PredecessorGraph, dist: dict[int, float], q: int, P: int,
                 horizon: float = INF, graph: PosteriorGraph | None = None) -> tuple[int, ...]:
    """Successors of ``q`` under ``P`` that are strictly closer to the goal.

    Successors are taken from the posterior graph when one is given (every
    state the abstraction says ``P`` may lead to), otherwise from the sampled
    predecessor edges.
    """
    d = dist.get(q, INF)
    if d == INF or d > horizon:
        return ()
    succ = graph.edges.get((q, P), ()) if graph is not None else g.edges.get((q, P), ())
    return tuple(sorted(s for s in succ if dist.get(s, INF) < d))


def progress_measure(q: Box, P: ControllerPartition, Qboxes: Sequence[Box], model: SystemModel,
                     grid: int = 6, k_grid: int = 3, wrap: Callable | None = None) -> float:
    """Grid estimate of the measure of the part of ``q`` that some law in
    ``P`` steers into one of ``Qboxes`` in one step."""
    if not Qboxes:
        return 0.0
    X = sample_grid(q, grid)
    tl = np.array([b.lo for b in Qboxes])
    th = np.array([b.hi for b in Qboxes])
    hits, _, _ = pre_hits(model, X, P, tl, th, k_grid, wrap)
    return float(np.mean(hits.any(axis=1))) * measure(q)


@dataclass
class Assignment:
    dist: dict[int, float]
    p_star: dict[int, int]
    ranking: dict[int, list[tuple[int, float]]]
    progress: dict[tuple[int, int], tuple[int, ...]]
    live: dict[int, bool]

    @property
    def progress_measure(self) -> dict[tuple[int, int], float]:
        return {(q, P): m for q, r in self.ranking.items() for P, m in r}

    def to_dict(self) -> dict:
        out = {}
        for q in sorted(self.p_star):
            d = self.dist.get(q, INF)
            out[str(q)] = {
                "dist": None if d == INF else int(d),
                "p_star": self.p_star[q],
                "live_candidate": self.live[q],
                "ranking": [{"partition": P, "measure": m,
                             "progress_set": list(self.progress.get((q, P), ()))}
                            for P, m in self.ranking[q]],
            }
        return {"states": out}

    @classmethod
    def from_dict(cls, d: dict) -> "Assignment":
        dist, p_star, ranking, progress, live = {}, {}, {}, {}, {}
        for k, v in d["states"].items():
            q = int(k)
            dist[q] = INF if v["dist"] is None else v["dist"]
            p_star[q] = v["p_star"]
            live[q] = v["live_candidate"]
            ranking[q] = [(r["partition"], r["measure"]) for r in v["ranking"]]
            for r in v["ranking"]:
                progress[(q, r["partition"])] = tuple(r["progress_set"])
        return cls(dist, p_star, ranking, progress, live)


def assign_partitions(safe: SafeSets, g: PredecessorGraph, dist: dict[int, float],
                      graph: PosteriorGraph | None = None, horizon: float = INF) -> Assignment:
    """Pick, per safe normal state, the safe partition with the largest
    estimated progress measure (ties to the lowest id).

    States with no path to the goal fall back to the safe partition with the
    most safe successors in the posterior graph and are flagged not live.
    """
    p_star, ranking, progress, live = {}, {}, {}, {}
    states = [q for q in g.states if q != g.goal]
    for q in states:
        cands = safe.p_safe.get(q, ())
        if not cands:
            continue
        d = dist.get(q, INF)
        if d != INF and d <= horizon:
            scored = []
            for P in cands:
                Q = progress_set(g, dist, q, P, horizon, graph)
                progress[(q, P)] = Q
                scored.append((P, g.coverage(q, P, Q) * measure(g.boxes[q])))
            scored.sort(key=lambda t: (-t[1], t[0]))
            live[q] = True
        else:
            scored = []
            for P in cands:
                nxt = graph.edges.get((q, P), ()) if graph is not None else ()
                scored.append((P, float(sum(1 for s in nxt if s in safe.x_safe))))
                progress[(q, P)] = ()
            scored.sort(key=lambda t: (-t[1], t[0]))
            live[q] = False
        ranking[q] = scored
        p_star[q] = scored[0][0]
    return Assignment({q: dist.get(q, INF) for q in g.states}, p_star, ranking, progress, live)
