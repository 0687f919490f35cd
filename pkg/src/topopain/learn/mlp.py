"""Small feed-forward regressor (tanh hidden layers, linear output)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MlpDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpParams:
    hidden: tuple[int, ...] = (40, 40)
    learning_rate: float = 3e-3
    epochs: int = 300
    batch_size: int = 64
    l2: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("invalid MLP training parameters")


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_mean: np.ndarray
    x_scale: np.ndarray
    losses: list[float] | None = None

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        return forward(self.weights, self.biases, (X - self.x_mean) / self.x_scale)[0][-1][:, 0]

    def to_dict(self) -> dict:
        return {"weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases],
                "x_mean": self.x_mean.tolist(), "x_scale": self.x_scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        return cls([np.array(w, float) for w in d["weights"]],
                   [np.array(b, float) for b in d["biases"]],
                   np.array(d["x_mean"], float), np.array(d["x_scale"], float))


def init_params(sizes, rng: np.random.Generator):
    """Glorot-uniform weights, zero biases."""
    W, b = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        W.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
        b.append(np.zeros(fan_out))
    return W, b


def forward(W, b, X):
    acts, pre = [X], []
    h = X
    for k, (w, c) in enumerate(zip(W, b)):
        a = h @ w + c
        pre.append(a)
        h = np.tanh(a) if k < len(W) - 1 else a
        acts.append(h)
    return acts, pre


def loss_and_grad(W, b, X, y, l2: float = 0.0):
    """Mean squared error (halved) plus ``l2/2 * sum(W^2)`` and its gradient."""
    acts, _ = forward(W, b, X)
    n = len(X)
    r = acts[-1][:, 0] - y
    loss = 0.5 * np.mean(r ** 2) + 0.5 * l2 * sum(np.sum(w * w) for w in W)
    delta = (r / n)[:, None]
    gW, gb = [None] * len(W), [None] * len(W)
    for k in range(len(W) - 1, -1, -1):
        gW[k] = acts[k].T @ delta + l2 * W[k]
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ W[k].T) * (1.0 - acts[k] ** 2)
    return loss, gW, gb


def mlp_train(X, y, params: MlpParams = MlpParams()) -> Mlp:
    """Adam on mini-batches; inputs standardised with training statistics."""
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float).ravel()
    if len(X) != len(y) or len(X) == 0:
        raise ValueError("X and y must be non-empty and of equal length")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    rng = np.random.default_rng(params.seed)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    Xs = (X - mean) / scale
    W, b = init_params((X.shape[1], *params.hidden, 1), rng)
    b[-1][:] = y.mean()
    theta = W + b
    m = [np.zeros_like(t) for t in theta]
    v = [np.zeros_like(t) for t in theta]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    losses = []
    n = len(X)
    for epoch in range(params.epochs):
        order = rng.permutation(n)
        for s in range(0, n, params.batch_size):
            bi = order[s:s + params.batch_size]
            _, gW, gb = loss_and_grad(W, b, Xs[bi], y[bi], params.l2)
            step += 1
            for k, g in enumerate(gW + gb):
                m[k] = b1 * m[k] + (1 - b1) * g
                v[k] = b2 * v[k] + (1 - b2) * g * g
                mh, vh = m[k] / (1 - b1 ** step), v[k] / (1 - b2 ** step)
                theta[k] -= params.learning_rate * mh / (np.sqrt(vh) + eps)
        loss = loss_and_grad(W, b, Xs, y, params.l2)[0]
        if not np.isfinite(loss):
            raise MlpDivergence(f"training diverged (loss {loss}) at epoch {epoch}")
        losses.append(float(loss))
    return Mlp(W, b, mean, scale, losses)


def mlp_predict(model: Mlp, x) -> np.ndarray | float:
    x = np.asarray(x, float)
    out = model.predict(x)
    return float(out[0]) if x.ndim == 1 else out
