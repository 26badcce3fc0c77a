"""One-hidden-layer perceptron with squared-error loss and Rprop training."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SNAPSHOT_VERSION = 1


class Mlp:
    """``x -> w2 . tanh(W1 x + b1) + b2`` with a single linear output.

    All parameters live in one flat vector ``theta``; ``W1``, ``b1``, ``w2``
    and ``b2`` are views into it.
    """

    def __init__(self, input_dim: int, hidden_dim: int = 32, theta=None):
        if input_dim < 1 or hidden_dim < 1:
            raise ValueError("input_dim and hidden_dim must be positive")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        n = hidden_dim * input_dim + 2 * hidden_dim + 1
        self.theta = np.zeros(n) if theta is None else np.array(theta, dtype=float)
        if self.theta.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {self.theta.shape}")
        self._bind()

    def _bind(self):
        h, d = self.hidden_dim, self.input_dim
        t = self.theta
        self.W1 = t[: h * d].reshape(h, d)
        self.b1 = t[h * d: h * d + h]
        self.w2 = t[h * d + h: h * d + 2 * h]
        self.b2 = t[h * d + 2 * h:]

    @classmethod
    def random(cls, input_dim: int, hidden_dim: int, rng, scale: float = 0.5) -> "Mlp":
        net = cls(input_dim, hidden_dim)
        net.theta[:] = rng.uniform(-scale, scale, net.theta.size)
        return net

    @property
    def n_params(self) -> int:
        return self.theta.size

    def copy(self) -> "Mlp":
        return Mlp(self.input_dim, self.hidden_dim, self.theta.copy())

    def forward(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x.reshape(1, -1) if single else x
        if X.shape[1] != self.input_dim:
            raise ValueError(f"input has dimension {X.shape[1]}, expected {self.input_dim}")
        out = np.tanh(X @ self.W1.T + self.b1) @ self.w2 + self.b2[0]
        return float(out[0]) if single else out

    __call__ = forward

    def to_dict(self) -> dict:
        return {"version": SNAPSHOT_VERSION, "input_dim": self.input_dim,
                "hidden_dim": self.hidden_dim, "activation": "tanh",
                "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        if d.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported network snapshot version {d.get('version')}")
        return cls(int(d["input_dim"]), int(d["hidden_dim"]), d["theta"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def batch_loss_and_gradient(net: Mlp, X, targets):
    """Summed squared error over the pattern set and its gradient wrt ``theta``."""
    X = np.asarray(X, dtype=float)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if len(targets) == 0:
        raise ValueError("empty pattern set")
    if X.ndim != 2 or X.shape[0] != len(targets):
        raise ValueError("inputs and targets disagree in length")
    H = np.tanh(X @ net.W1.T + net.b1)
    err = H @ net.w2 + net.b2[0] - targets
    loss = float(err @ err)
    g_out = 2.0 * err
    g_pre = np.outer(g_out, net.w2) * (1.0 - H * H)
    grad = np.empty_like(net.theta)
    h, d = net.hidden_dim, net.input_dim
    grad[: h * d] = (g_pre.T @ X).reshape(-1)
    grad[h * d: h * d + h] = g_pre.sum(axis=0)
    grad[h * d + h: h * d + 2 * h] = H.T @ g_out
    grad[-1] = g_out.sum()
    return loss, grad


@dataclass
class RpropState:
    """Per-parameter step sizes for Rprop with weight backtracking."""

    n: int
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta0: float = 0.1
    delta_min: float = 1e-6
    delta_max: float = 50.0
    step: np.ndarray = field(default=None)
    prev_grad: np.ndarray = field(default=None)
    prev_update: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.step is None:
            self.step = np.full(self.n, self.delta0)
        if self.prev_grad is None:
            self.prev_grad = np.zeros(self.n)
        if self.prev_update is None:
            self.prev_update = np.zeros(self.n)

    @classmethod
    def for_net(cls, net: Mlp, **kw) -> "RpropState":
        return cls(net.n_params, **kw)


def rprop_epoch(net: Mlp, state: RpropState, X, targets) -> float:
    """One full-batch Rprop update in place; returns the loss before the update."""
    if state.n != net.n_params:
        raise ValueError("Rprop state does not match the network")
    loss, g = batch_loss_and_gradient(net, X, targets)
    agree = g * state.prev_grad
    grow = agree > 0
    shrink = agree < 0
    state.step[grow] = np.minimum(state.step[grow] * state.eta_plus, state.delta_max)
    state.step[shrink] = np.maximum(state.step[shrink] * state.eta_minus, state.delta_min)
    update = -np.sign(g) * state.step
    # sign flip: retract the previous move and skip adaptation next epoch
    update[shrink] = -state.prev_update[shrink]
    g = g.copy()
    g[shrink] = 0.0
    net.theta += update
    state.prev_update = np.where(shrink, 0.0, update)
    state.prev_grad = g
    return loss


def train_rprop(net: Mlp, X, targets, epochs: int, state: RpropState | None = None) -> list:
    state = state or RpropState.for_net(net)
    return [rprop_epoch(net, state, X, targets) for _ in range(epochs)]
