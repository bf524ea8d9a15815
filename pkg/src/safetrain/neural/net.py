"""One-hidden-layer ReLU controller with a linear output layer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ReluNet:
    W1: np.ndarray  # (h, n)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (m, h)
    b2: np.ndarray  # (m,)

    def __post_init__(self):
        self.W1 = np.atleast_2d(np.asarray(self.W1, dtype=float))
        self.b1 = np.asarray(self.b1, dtype=float).reshape(-1)
        self.W2 = np.atleast_2d(np.asarray(self.W2, dtype=float))
        self.b2 = np.asarray(self.b2, dtype=float).reshape(-1)
        h, _ = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape[1] != h or self.b2.shape != (self.W2.shape[0],):
            raise ValueError(f"inconsistent shapes W1{self.W1.shape} b1{self.b1.shape} "
                             f"W2{self.W2.shape} b2{self.b2.shape}")

    @classmethod
    def init(cls, n: int, m: int, hidden: int = 4, seed: int = 0) -> "ReluNet":
        """Weights and biases uniform in [-0.5, 0.5]."""
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-0.5, 0.5, (hidden, n)), rng.uniform(-0.5, 0.5, hidden),
                   rng.uniform(-0.5, 0.5, (m, hidden)), rng.uniform(-0.5, 0.5, m))

    @property
    def n(self) -> int:
        return self.W1.shape[1]

    @property
    def m(self) -> int:
        return self.W2.shape[0]

    @property
    def hidden_width(self) -> int:
        return self.W1.shape[0]

    def preactivation(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.W1.T + self.b1

    def hidden(self, X) -> np.ndarray:
        return np.maximum(self.preactivation(X), 0.0)

    def pattern(self, x) -> tuple[bool, ...]:
        """Activation pattern; a neuron at exactly zero counts as inactive."""
        return tuple(bool(v) for v in self.preactivation(x) > 0.0)

    def __call__(self, X) -> np.ndarray:
        return forward(self, X)

    def copy(self) -> "ReluNet":
        return ReluNet(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def with_output_layer(self, W2, b2) -> "ReluNet":
        return ReluNet(self.W1.copy(), self.b1.copy(), np.array(W2, dtype=float), np.array(b2, dtype=float))

    def params(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    def with_params(self, theta) -> "ReluNet":
        theta = np.asarray(theta, dtype=float)
        h, n = self.W1.shape
        m = self.m
        i = 0
        W1 = theta[i:i + h * n].reshape(h, n); i += h * n
        b1 = theta[i:i + h]; i += h
        W2 = theta[i:i + m * h].reshape(m, h); i += m * h
        b2 = theta[i:i + m]
        return ReluNet(W1.copy(), b1.copy(), W2.copy(), b2.copy())

    def to_dict(self) -> dict:
        return {
            "shapes": {"W1": list(self.W1.shape), "b1": [self.b1.size],
                       "W2": list(self.W2.shape), "b2": [self.b2.size]},
            "W1": self.W1.ravel().tolist(), "b1": self.b1.tolist(),
            "W2": self.W2.ravel().tolist(), "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReluNet":
        s = d["shapes"]
        return cls(np.array(d["W1"], dtype=float).reshape(s["W1"]), d["b1"],
                   np.array(d["W2"], dtype=float).reshape(s["W2"]), d["b2"])


def forward(net: ReluNet, x) -> np.ndarray:
    """``W2 max(W1 x + b1, 0) + b2`` for a point or a batch of rows."""
    return net.hidden(x) @ net.W2.T + net.b2


def mse_loss_and_grad(net: ReluNet, X: np.ndarray, U: np.ndarray) -> tuple[float, ReluNet]:
    """Mean squared error over all output entries and its gradient, packed
    as a `ReluNet` of the same shape."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.asarray(U, dtype=float).reshape(X.shape[0], -1)
    Z = X @ net.W1.T + net.b1
    H = np.maximum(Z, 0.0)
    Y = H @ net.W2.T + net.b2
    R = Y - U
    N = R.size
    loss = float(np.sum(R * R) / N)
    dY = 2.0 * R / N
    gW2 = dY.T @ H
    gb2 = dY.sum(axis=0)
    dH = dY @ net.W2
    dZ = dH * (Z > 0.0)
    gW1 = dZ.T @ X
    gb1 = dZ.sum(axis=0)
    return loss, ReluNet(gW1, gb1, gW2, gb2)
