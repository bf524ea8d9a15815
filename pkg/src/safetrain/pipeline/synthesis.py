"""End-to-end synthesis: abstraction, safe sets, assignment, per-state
training with projection, composition and the reachability report."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from safetrain.abstraction import (PosteriorGraph, SafeSets, StateKind, build_posterior_graph,
                                   compute_unsafe_fixpoint, partition_controller_space,
                                   partition_state_space)
from safetrain.liveness import (Assignment, PredecessorGraph, assign_partitions,
                                build_predecessor_graph, dist_to_goal)
from safetrain.neural.compose import GlobalController, compose_global, reach_check, reached_states
from safetrain.neural.net import ReluNet
from safetrain.neural.projection import ProjectionFailed, ProjectionInfeasible
from safetrain.neural.training import safe_train
from safetrain.pipeline.config import WorkspaceSpec

log = logging.getLogger(__name__)

STAGES = ("abstract", "safe-sets", "assign", "train", "compose", "verify")


class SynthesisError(RuntimeError):
    pass


@dataclass
class TrainRecord:
    state: int
    partition: int
    net: ReluNet
    bound: float
    lp_value: float
    final_loss: float
    regions: int
    reach_ok: bool | None
    attempts: list[dict] = field(default_factory=list)
    reached: tuple[int, ...] = ()  # progress-set states the one-step image meets

    def to_dict(self) -> dict:
        return {"state": self.state, "partition": self.partition, "bound": self.bound,
                "lp_value": self.lp_value, "final_loss": self.final_loss, "regions": self.regions,
                "reach_ok": self.reach_ok, "reached": list(self.reached),
                "attempts": self.attempts, "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRecord":
        def num(v):
            return math.nan if v is None else float(v)

        return cls(int(d["state"]), int(d["partition"]), ReluNet.from_dict(d["net"]),
                   num(d["bound"]), num(d.get("lp_value")), num(d.get("final_loss")),
                   int(d["regions"]), d["reach_ok"], list(d["attempts"]),
                   tuple(int(s) for s in d.get("reached", ())))


@dataclass
class SynthesisResult:
    spec: WorkspaceSpec
    graph: PosteriorGraph | None = None
    safe: SafeSets | None = None
    pred: PredecessorGraph | None = None
    assignment: Assignment | None = None
    training: dict[int, TrainRecord] = field(default_factory=dict)
    controller: GlobalController | None = None
    verify: dict | None = None
    timing: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def init_states(self) -> list[int]:
        return self.safe.init_states(self.graph) if self.safe is not None else []


def stage_abstract(spec: WorkspaceSpec) -> PosteriorGraph:
    states = partition_state_space(spec.state_bounds, spec.state_partition, spec.goal, spec.obstacles)
    parts = partition_controller_space(spec.controller_bounds, spec.controller_counts,
                                       m=spec.model.m, n=spec.model.n)
    return build_posterior_graph(states, parts, spec.model, spec.state_bounds, spec.circular)


def stage_assign(spec: WorkspaceSpec, graph: PosteriorGraph, safe: SafeSets):
    pred = build_predecessor_graph(safe, graph, spec.model, state_grid=spec.liveness.state_grid,
                                   k_grid=spec.liveness.k_grid)
    dist = dist_to_goal(pred)
    return pred, assign_partitions(safe, pred, dist, graph)


def _state_seed(seed: int, q: int) -> int:
    return (int(seed) * 1_000_003 + q) % (2 ** 32)


def train_state(spec: WorkspaceSpec, graph: PosteriorGraph, assignment: Assignment,
                q: int, chained: frozenset[int] = frozenset()) -> TrainRecord:
    """Train ``q`` against its ranked partitions.

    A live state stops at the first partition that projects, passes the
    reachability check and only reaches states in ``chained`` (states whose
    chain to the goal is already known to hold). Falls back through at most
    ``spec.fallbacks`` further partitions; without a full success it keeps the
    first that passed the reachability check, else the first that projected
    (still safe).
    """
    box = graph.states[q].region
    parts = {p.id: p for p in graph.partitions}
    ranked = [P for P, _ in assignment.ranking[q]][: spec.fallbacks + 1]
    live = assignment.live.get(q, False)
    cfg = replace(spec.training, seed=_state_seed(spec.seed, q))
    boxes = {s.id: s.region for s in graph.states}
    attempts: list[dict] = []
    kept: TrainRecord | None = None
    kept_rank = -1
    for P in ranked:
        try:
            res = safe_train(box, parts[P], spec.model, spec.goal, cfg, ignore_axes=spec.circular)
        except ProjectionInfeasible as exc:
            attempts.append({"partition": P, "outcome": "infeasible", "detail": str(exc)})
            continue
        except ProjectionFailed as exc:
            attempts.append({"partition": P, "outcome": "lp_failure", "detail": str(exc)})
            continue
        ok = None
        reached: tuple[int, ...] = ()
        if live:
            Q = assignment.progress.get((q, P), ())
            regs = res.projection.regions
            ok = bool(Q) and reach_check(box, res.net, spec.model, [boxes[s] for s in Q],
                                         spec.state_bounds, spec.circular, regs)
            if ok:
                reached = reached_states(box, res.net, spec.model, {s: boxes[s] for s in Q},
                                         spec.state_bounds, spec.circular, regs)
        linked = bool(ok) and all(s == graph.goal or s in chained for s in reached)
        attempts.append({"partition": P, "outcome": "projected", "reach_ok": ok, "chained": linked})
        rec = TrainRecord(q, P, res.net, res.projection.bound, res.projection.lp_value,
                          res.losses[-1] if res.losses else math.nan,
                          len(res.projection.regions), ok, attempts, reached)
        rank = 2 if (linked or not live) else int(bool(ok))
        if rank > kept_rank:
            kept, kept_rank = rec, rank
        if rank == 2:
            break
    if kept is None:
        raise SynthesisError(f"state {q}: projection infeasible for every ranked partition {ranked}")
    kept.attempts = attempts
    return kept


def _train_job(args):
    return train_state(*args)


def stage_train(spec: WorkspaceSpec, graph: PosteriorGraph, safe: SafeSets, assignment: Assignment,
                jobs: int = 1) -> dict[int, TrainRecord]:
    """Train every safe state, one distance layer at a time (closest first),
    so each layer can aim for states whose chain is already settled."""
    todo = [q for q in safe.init_states(graph) if q in assignment.p_star]
    layers: dict[float, list[int]] = {}
    for q in todo:
        layers.setdefault(assignment.dist.get(q, math.inf), []).append(q)
    out: dict[int, TrainRecord] = {}
    chained: set[int] = set()
    ex = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 and len(todo) > 1 else None
    try:
        for d in sorted(layers):
            qs = sorted(layers[d])
            frozen = frozenset(chained)
            args = [(spec, graph, assignment, q, frozen) for q in qs]
            if ex is not None:
                recs = list(ex.map(_train_job, args, chunksize=max(1, len(qs) // (4 * jobs))))
            else:
                recs = [train_state(*a) for a in args]
            for r in recs:
                out[r.state] = r
                if r.reach_ok and all(s == graph.goal or s in chained for s in r.reached):
                    chained.add(r.state)
    finally:
        if ex is not None:
            ex.shutdown()
    return dict(sorted(out.items()))


def stage_compose(spec: WorkspaceSpec, graph: PosteriorGraph, safe: SafeSets,
                  training: dict[int, TrainRecord]) -> GlobalController:
    boxes = {q: graph.states[q].region for q in safe.init_states(graph)}
    return compose_global({q: r.net for q, r in training.items()}, boxes, spec.state_bounds,
                          spec.circular)


def stage_verify(graph: PosteriorGraph, assignment: Assignment,
                 training: dict[int, TrainRecord]) -> dict:
    """Per-state reachability results and the progress-chain flag.

    A state's chain holds when its own check passed and every progress-set
    state its one-step image meets is the goal or has a holding chain. Those
    states are strictly closer to the goal, so one pass in distance order
    settles it.
    """
    goal = graph.goal
    chain: dict[int, bool] = {}
    order = sorted(training, key=lambda q: (assignment.dist.get(q, math.inf), q))
    for q in order:
        r = training[q]
        chain[q] = bool(r.reach_ok) and all(s == goal or chain.get(s, False) for s in r.reached)
    states = {}
    for q in sorted(training):
        r = training[q]
        d = assignment.dist.get(q, math.inf)
        states[str(q)] = {
            "partition": r.partition,
            "dist": None if d == math.inf else int(d),
            "progress_set": list(assignment.progress.get((q, r.partition), ())),
            "reach_ok": r.reach_ok,
            "reached": list(r.reached),
            "chain_ok": chain[q],
        }
    return {
        "states": states,
        "reach_ok": sum(1 for r in training.values() if r.reach_ok),
        "chain_ok": sum(chain.values()),
        "trained": len(training),
    }


def run_synthesis(spec: WorkspaceSpec, jobs: int = 1, start: str = "abstract",
                  prior: SynthesisResult | None = None, stop: str = "verify") -> SynthesisResult:
    """Run stages ``start`` .. ``stop`` in order. Earlier artifacts come from
    ``prior`` (e.g. re-imported from disk)."""
    if start not in STAGES or stop not in STAGES:
        raise ValueError(f"stages are {STAGES}")
    res = prior if prior is not None else SynthesisResult(spec)
    res.spec = spec
    i0, i1 = STAGES.index(start), STAGES.index(stop)

    def timed(name, fn):
        t0 = time.perf_counter()
        out = fn()
        res.timing[name] = time.perf_counter() - t0
        log.info("stage %s done in %.2fs", name, res.timing[name])
        return out

    for name in STAGES[i0:i1 + 1]:
        if name == "abstract":
            res.graph = timed(name, lambda: stage_abstract(spec))
        elif name == "safe-sets":
            res.safe = timed(name, lambda: compute_unsafe_fixpoint(res.graph))
            if not res.safe.init_states(res.graph):
                res.notes.append("no safe abstract state: the controller is undefined")
                log.warning("empty safe set")
        elif name == "assign":
            res.pred, res.assignment = timed(name, lambda: stage_assign(spec, res.graph, res.safe))
        elif name == "train":
            res.training = timed(name, lambda: stage_train(spec, res.graph, res.safe,
                                                           res.assignment, jobs))
        elif name == "compose":
            res.controller = timed(name, lambda: stage_compose(spec, res.graph, res.safe,
                                                               res.training))
        elif name == "verify":
            res.verify = timed(name, lambda: stage_verify(res.graph, res.assignment, res.training))
    return res


def invariance_violations(graph: PosteriorGraph, safe: SafeSets) -> list[int]:
    """Safe normal states with no partition keeping every successor safe."""
    ok = set(safe.x_safe)
    bad = []
    for q in safe.init_states(graph):
        if not any(set(graph.edges.get((q, P), ())) <= ok for P in safe.p_safe.get(q, ())):
            bad.append(q)
    return bad


def summary(res: SynthesisResult) -> dict:
    g = res.graph
    out = {"name": res.spec.name, "seed": res.spec.seed}
    if g is not None:
        out["abstract_states"] = len(g.states)
        out["normal_states"] = len(g.normal_ids)
        out["partitions"] = len(g.partitions)
    if res.safe is not None:
        out["safe_states"] = len(res.init_states)
        out["unsafe_states"] = sum(1 for s in res.safe.x_unsafe
                                   if g.states[s].kind is StateKind.NORMAL)
        out["fixpoint_iterations"] = res.safe.iterations
    if res.assignment is not None:
        out["live_candidates"] = sum(res.assignment.live.values())
    if res.verify is not None:
        out["reach_ok"] = res.verify["reach_ok"]
        out["chain_ok"] = res.verify["chain_ok"]
    out["notes"] = list(res.notes)
    return out
