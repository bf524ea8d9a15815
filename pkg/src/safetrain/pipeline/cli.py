"""Command-line entry point.

Each stage subcommand runs the pipeline from ``--resume`` (default: the
first stage) up to and including itself; artifacts of stages before the
resume point are read back from ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from safetrain.pipeline.config import load_spec
from safetrain.pipeline.io import (export_result, load_controller, load_result,
                                   write_trajectory_csv, write_trajectory_json)
from safetrain.pipeline.simulate import POLICIES, random_initial_points, simulate
from safetrain.pipeline.synthesis import STAGES, run_synthesis, summary

log = logging.getLogger("safetrain")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", required=True, help="workspace spec (JSON)")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="safetrain",
                                 description="Safe-by-construction neural controller synthesis.")
    sub = ap.add_subparsers(dest="command", required=True)
    for stage in (*STAGES, "pipeline"):
        p = sub.add_parser(stage, help="run all stages" if stage == "pipeline"
                           else f"run the pipeline up to '{stage}'")
        _common(p)
        p.add_argument("--jobs", type=int, default=1, help="worker processes for training")
        p.add_argument("--resume", choices=STAGES, default=None,
                       help="start at this stage, loading earlier artifacts from --out")
    p = sub.add_parser("simulate", help="closed-loop rollouts of the composed controller")
    _common(p)
    p.add_argument("--count", type=int, default=10, help="number of random starts")
    p.add_argument("--x0", type=float, nargs="+", default=None, help="single start state")
    p.add_argument("--steps", type=int, default=None, help="horizon (default: spec horizon)")
    p.add_argument("--policy", choices=POLICIES, default="random")
    return ap


def _run_stages(args) -> dict:
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    stop = "verify" if args.command == "pipeline" else args.command
    start = args.resume or "abstract"
    if STAGES.index(start) > STAGES.index(stop):
        raise ValueError(f"--resume {start} comes after {stop}")
    prior = load_result(args.out, spec, start) if start != "abstract" else None
    res = run_synthesis(spec, jobs=args.jobs, start=start, prior=prior, stop=stop)
    export_result(res, args.out)
    return summary(res)


def _simulate(args) -> dict:
    spec = load_spec(args.spec)
    seed = spec.seed if args.seed is None else args.seed
    out = Path(args.out)
    gc = load_controller(out / "controller.json")
    T = spec.horizon if args.steps is None else args.steps
    if args.x0 is not None:
        starts = np.array([args.x0], dtype=float)
    else:
        _, starts = random_initial_points(gc, args.count, seed=seed)
    tdir = out / "trajectories"
    results = []
    for i, x0 in enumerate(starts):
        tr = simulate(gc, spec.model, x0, T, spec.goal, spec.obstacles, args.policy, seed=seed + i)
        write_trajectory_csv(tr, tdir / f"traj_{i:04d}.csv", n=spec.model.n, m=spec.model.m)
        write_trajectory_json(tr, tdir / f"traj_{i:04d}.json")
        results.append(tr)
    return {
        "trajectories": len(results),
        "safe": sum(t.safe for t in results),
        "stayed_in_init": sum(not t.left_init for t in results),
        "goal_reached": sum(t.goal_reached for t in results),
        "events": sum(len(t.events) for t in results),
        "dir": str(tdir),
    }


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = _simulate(args) if args.command == "simulate" else _run_stages(args)
    except Exception as exc:  # every failure leaves as machine-readable JSON
        json.dump({"error": type(exc).__name__, "message": str(exc), "command": args.command},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
