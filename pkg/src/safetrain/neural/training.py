"""Expert data, imitation training and the train-then-project loop."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from safetrain.dynamics import AffineLaw, ControllerPartition, SystemModel
from safetrain.geometry import Box
from safetrain.neural.net import ReluNet, mse_loss_and_grad
from safetrain.neural.projection import Projection, ProjectionInfeasible, project_weights
from safetrain.neural.regions import enumerate_regions


# seed offset between successive restarts of the same state
RESTART_STRIDE = 7919


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    hidden: int = 4
    epochs: int = 2000
    lr: float = 0.05
    max_iter: int = 1
    samples: int = 128
    seed: int = 0
    lookahead: int = 10
    k_grid: int = 3
    input_scale: float = 1.0
    active_weight: float = 0.0
    active_margin: float = 0.1
    restarts: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("hidden", "epochs", "lr", "max_iter", "samples", "seed", "lookahead", "k_grid",
                 "input_scale", "active_weight", "active_margin", "restarts")}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        base = cls()
        kw = {k: type(getattr(base, k))(d[k]) for k in base.to_dict() if k in d}
        return cls(**kw)


@dataclass
class ExpertData:
    X: np.ndarray       # (N, n)
    U: np.ndarray       # (N, m)
    thetas: np.ndarray  # (N, m*(n+1)) flattened law behind each label


def sample_states(q: Box, count: int, seed: int = 0) -> np.ndarray:
    """Scrambled Halton points in ``q`` (degenerate axes are held fixed)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    u = qmc.Halton(d=q.dim, scramble=True, seed=seed).random(count)
    return q.lo + u * q.widths


def candidate_laws(P: ControllerPartition, resolution: int = 3) -> np.ndarray:
    """Centre first, then the per-axis grid without repeating the centre."""
    c = P.bounds.center
    grid = P.grid(resolution)
    grid = grid[~np.all(grid == c, axis=1)]
    return np.vstack([c[None, :], grid])


def goal_distance(X: np.ndarray, goal: Box, ignore_axes: Sequence[int] = ()) -> np.ndarray:
    keep = [d for d in range(goal.dim) if d not in ignore_axes]
    Z = X[..., keep]
    gap = np.maximum(goal.lo[keep] - Z, 0.0) + np.maximum(Z - goal.hi[keep], 0.0)
    return np.sqrt(np.sum(gap * gap, axis=-1))


def generate_expert_data(q: Box, P: ControllerPartition, model: SystemModel, goal: Box, count: int,
                         seed: int = 0, lookahead: int = 10, resolution: int = 3,
                         ignore_axes: Sequence[int] = ()) -> ExpertData:
    """Label sampled states of ``q`` with the best candidate law of ``P``.

    Each candidate law is held fixed for ``lookahead`` undisturbed steps; the
    cost is the smallest distance to ``goal`` along that rollout, then the
    first step reaching it, then the distance to the goal centre at that
    step, then the candidate index. A one-step horizon makes
    every law look alike for the unicycle (the turn rate only shows up in the
    position one step later), hence the rollout.
    """
    X = sample_states(q, count, seed)
    thetas = candidate_laws(P, resolution)
    m, n = model.m, model.n
    Ks = thetas[:, : m * n].reshape(-1, m, n)
    bs = thetas[:, m * n:]
    keep = [d for d in range(n) if d not in ignore_axes]
    centre = goal.center[keep]

    def off_centre(Z):
        return np.linalg.norm(Z[..., keep] - centre, axis=-1)

    Z = np.repeat(X[:, None, :], len(thetas), axis=1)  # (s, k, n)
    best = goal_distance(Z, goal, ignore_axes)
    when = np.zeros(best.shape, dtype=int)
    aim = off_centre(Z)
    for t in range(1, max(lookahead, 1) + 1):
        U = np.einsum("kmn,skn->skm", Ks, Z) + bs[None]
        Z = model.drift(Z) + U @ model.B.T
        d = goal_distance(Z, goal, ignore_axes)
        better = d < best
        best = np.where(better, d, best)
        when = np.where(better, t, when)
        aim = np.where(better, off_centre(Z), aim)
    pick = np.empty(len(X), dtype=int)
    for i in range(len(X)):
        pick[i] = np.lexsort((np.arange(len(thetas)), aim[i], when[i], best[i]))[0]
    chosen = thetas[pick]
    U = np.array([AffineLaw.from_flat(th, m, n)(x) for th, x in zip(chosen, X)])
    return ExpertData(X, U.reshape(len(X), m), chosen)


def activation_penalty(net: ReluNet, V: np.ndarray, margin: float) -> tuple[float, ReluNet]:
    """``mean relu(margin - z)^2`` over hidden pre-activations ``z`` at the
    points ``V`` and its gradient (output layer untouched).

    Driving it to zero keeps every neuron active on the convex hull of ``V``,
    so the net is a single affine map there.
    """
    Z = V @ net.W1.T + net.b1
    gap = np.maximum(margin - Z, 0.0)
    N = gap.size
    val = float(np.sum(gap * gap) / N)
    dZ = -2.0 * gap / N
    zero_W2 = np.zeros_like(net.W2)
    return val, ReluNet(dZ.T @ V, dZ.sum(axis=0), zero_W2, np.zeros_like(net.b2))


def constrained_train(net: ReluNet, X: np.ndarray, U: np.ndarray, epochs: int, lr: float,
                      anchors: np.ndarray | None = None, active_weight: float = 0.0,
                      active_margin: float = 0.1) -> tuple[ReluNet, list[float]]:
    """Full-batch gradient descent on the mean squared error.

    With ``active_weight > 0`` the objective also carries
    ``active_weight * activation_penalty(net, anchors)``; the returned history
    is the MSE alone either way.
    """
    net = net.copy()
    history: list[float] = []
    if epochs <= 0:
        return net, history
    use_pen = active_weight > 0 and anchors is not None
    theta = net.params()
    for _ in range(epochs):
        loss, grad = mse_loss_and_grad(net, X, U)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} after {len(history)} epochs")
        history.append(loss)
        g = grad.params()
        if use_pen:
            _, pg = activation_penalty(net, anchors, active_margin)
            g = g + active_weight * pg.params()
        theta = theta - lr * g
        net = net.with_params(theta)
    loss, _ = mse_loss_and_grad(net, X, U)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"loss became {loss} after {epochs} epochs")
    history.append(loss)
    return net, history


def _normalisers(q: Box, U: np.ndarray, scale: float = 1.0):
    c = q.center
    s = np.where(q.widths > 0, q.widths / (2.0 * scale), 1.0)
    mu = U.mean(axis=0)
    sd = U.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return c, s, mu, sd


def _fold(net: ReluNet, c, s, mu, sd) -> ReluNet:
    """Undo input scaling ``(x - c) / s`` and output scaling ``u * sd + mu``."""
    W1 = net.W1 / s[None, :]
    b1 = net.b1 - W1 @ c
    W2 = net.W2 * sd[:, None]
    b2 = net.b2 * sd + mu
    return ReluNet(W1, b1, W2, b2)


@dataclass
class SafeTrainResult:
    net: ReluNet
    projection: Projection
    partition: int
    losses: list[float] = field(default_factory=list)
    data: ExpertData | None = None
    restarts_used: int = 0
    raw: ReluNet | None = None  # the net just before its final projection

    @property
    def bound(self) -> float:
        return self.projection.bound


def safe_train(q: Box, P: ControllerPartition, model: SystemModel, goal: Box,
               config: TrainConfig | None = None, ignore_axes: Sequence[int] = (),
               data: ExpertData | None = None) -> SafeTrainResult:
    """Imitate the expert on ``q`` and project the output layer onto ``P``.

    Training runs on inputs rescaled to ``[-input_scale, input_scale]`` and
    standardised labels; the scaling is folded back into the weights before
    projection, so the returned net acts on raw states. After ``max_iter``
    rounds the output layer is always the projected one. An infeasible
    projection restarts from a fresh seed up to ``restarts`` times.
    """
    cfg = config or TrainConfig()
    if data is None:
        data = generate_expert_data(q, P, model, goal, cfg.samples, seed=cfg.seed,
                                    lookahead=cfg.lookahead, resolution=cfg.k_grid,
                                    ignore_axes=ignore_axes)
    c, s, mu, sd = _normalisers(q, data.U, cfg.input_scale)
    Xn = (data.X - c) / s
    Un = (data.U - mu) / sd
    anchors = (q.vertices() - c) / s
    failure: ProjectionInfeasible | None = None
    for attempt in range(max(cfg.restarts, 0) + 1):
        seed = cfg.seed + RESTART_STRIDE * attempt
        scaled = ReluNet.init(model.n, model.m, cfg.hidden, seed=seed)
        losses: list[float] = []
        try:
            for _ in range(max(cfg.max_iter, 1)):
                scaled, hist = constrained_train(scaled, Xn, Un, cfg.epochs, cfg.lr, anchors,
                                                 cfg.active_weight, cfg.active_margin)
                losses.extend(hist)
                net = _fold(scaled, c, s, mu, sd)
                regions = enumerate_regions(net, q)
                proj = project_weights(net, q, P, regions)
                raw, net = net, proj.apply(net)
                # the next round starts from the projected output layer
                scaled = ReluNet(scaled.W1, scaled.b1, proj.W2 / sd[:, None], (proj.b2 - mu) / sd)
        except ProjectionInfeasible as exc:
            failure = exc
            continue
        return SafeTrainResult(net, proj, P.id, losses, data, attempt, raw)
    assert failure is not None
    raise failure
