"""Gated composition of local nets and the per-state reachability check."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from safetrain.dynamics import ControllerPartition, SystemModel, interval_post
from safetrain.geometry import Box, HPolytope, box_covered, box_to_hpolytope, wrap_box, wrap_point
from safetrain.neural.net import ReluNet, forward
from safetrain.neural.regions import LinearRegion, enumerate_regions


class OutsideSafeSet(RuntimeError):
    """The query point lies in no gated abstract state."""

    def __init__(self, x):
        super().__init__(f"state {np.asarray(x).tolist()} is outside every safe abstract state")
        self.x = np.asarray(x, dtype=float)


@dataclass
class Module:
    state: int
    box: Box
    net: ReluNet

    @property
    def gate(self) -> HPolytope:
        return box_to_hpolytope(self.box)


@dataclass
class GlobalController:
    """Point-location dispatcher over local nets.

    Modules are kept in ascending state id; the first closed box containing
    the (wrapped) query wins, which settles points on shared faces.
    """

    modules: list[Module]
    bounds: Box | None = None
    circular: tuple[int, ...] = ()

    def __post_init__(self):
        self.modules = sorted(self.modules, key=lambda mod: mod.state)
        self._lo = np.array([mod.box.lo for mod in self.modules]) if self.modules else None
        self._hi = np.array([mod.box.hi for mod in self.modules]) if self.modules else None

    def canonical(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.circular and self.bounds is not None:
            return wrap_point(x, self.bounds, self.circular)
        return x

    def locate(self, x) -> Module | None:
        if not self.modules:
            return None
        z = self.canonical(x)
        inside = np.all((z >= self._lo) & (z <= self._hi), axis=1)
        if not inside.any():
            return None
        return self.modules[int(np.argmax(inside))]

    def __call__(self, x) -> np.ndarray:
        mod = self.locate(x)
        if mod is None:
            raise OutsideSafeSet(x)
        return forward(mod.net, self.canonical(x))

    def literal_output(self, x) -> np.ndarray:
        """Sum of every local net whose gate ``Step(c - A x)`` fires on all rows."""
        z = self.canonical(x)
        total = None
        for mod in self.modules:
            g = mod.gate
            if np.all(g.c - g.A @ z >= 0.0):
                u = forward(mod.net, z)
                total = u if total is None else total + u
        if total is None:
            raise OutsideSafeSet(x)
        return total

    def to_dict(self) -> dict:
        return {
            "bounds": None if self.bounds is None else self.bounds.to_dict(),
            "circular": list(self.circular),
            "modules": [{"state": mod.state, "box": mod.box.to_dict(), "net": mod.net.to_dict()}
                        for mod in self.modules],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalController":
        mods = [Module(int(e["state"]), Box.from_dict(e["box"]), ReluNet.from_dict(e["net"]))
                for e in d["modules"]]
        bounds = None if d.get("bounds") is None else Box.from_dict(d["bounds"])
        return cls(mods, bounds, tuple(d.get("circular", ())))


def compose_global(local_nets: Mapping[int, ReluNet], states: Mapping[int, Box],
                   bounds: Box | None = None, circular: Sequence[int] = ()) -> GlobalController:
    """One module per entry of ``states``; every one needs a local net."""
    missing = sorted(set(states) - set(local_nets))
    if missing:
        raise KeyError(f"no local net for safe states {missing}")
    mods = [Module(q, states[q], local_nets[q]) for q in sorted(states)]
    return GlobalController(mods, bounds, tuple(circular))


def region_posts(q: Box, net: ReluNet, model: SystemModel,
                 regions: list[LinearRegion] | None = None) -> list[Box]:
    """Interval image of each region's bounding box under its own law."""
    if regions is None:
        regions = enumerate_regions(net, q)
    out = []
    for r in regions:
        P = ControllerPartition.singleton(r.law)
        out.append(interval_post(model, r.bounding_box(), P))
    return out


def _post_pieces(q, net, model, bounds, circular, regions) -> list[Box]:
    out = []
    for G in region_posts(q, net, model, regions):
        out.extend(wrap_box(G, bounds, circular) if (circular and bounds is not None) else [G])
    return out


def reach_check(q: Box, net: ReluNet, model: SystemModel, Qboxes: Sequence[Box],
                bounds: Box | None = None, circular: Sequence[int] = (),
                regions: list[LinearRegion] | None = None) -> bool:
    """True iff the over-approximated one-step image of ``q`` under ``net``
    lies in the union of ``Qboxes``."""
    covers = list(Qboxes)
    return all(box_covered(piece, covers)
               for piece in _post_pieces(q, net, model, bounds, circular, regions))


def reached_states(q: Box, net: ReluNet, model: SystemModel, candidates: Mapping[int, Box],
                   bounds: Box | None = None, circular: Sequence[int] = (),
                   regions: list[LinearRegion] | None = None) -> tuple[int, ...]:
    """Ids of ``candidates`` whose closed box meets the one-step image of ``q``."""
    pieces = _post_pieces(q, net, model, bounds, circular, regions)
    return tuple(sorted(s for s, b in candidates.items() if any(b.intersects(p) for p in pieces)))
