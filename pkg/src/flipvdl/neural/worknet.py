"""Fully connected regressor from landscape vectors to EGJ work metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Dense, ReLU, Sequential
from .losses import mse
from .optim import RMSprop
from .vae import LearningCurve, TrainingDivergence

RANGE_TOL = 1e-6


class MinMaxScaler:
    """Per-feature affine map of the training range onto [0, 1].

    Constant features map to 0.
    """

    def __init__(self, lo=None, hi=None):
        self.lo = None if lo is None else np.asarray(lo, dtype=float)
        self.hi = None if hi is None else np.asarray(hi, dtype=float)

    def fit(self, x):
        x = np.asarray(x, dtype=float)
        self.lo, self.hi = x.min(axis=0), x.max(axis=0)
        return self

    @property
    def span(self):
        if self.lo is None:
            raise RuntimeError("scaler has no statistics; fit it or load them first")
        s = self.hi - self.lo
        return np.where(s > 0, s, 1.0)

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / self.span

    def inverse(self, y):
        return np.asarray(y, dtype=float) * self.span + self.lo

    def to_json(self) -> dict:
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_json(cls, d) -> "MinMaxScaler":
        return cls(d["min"], d["max"])


class WorkNet:
    def __init__(self, n_in: int = 30, hidden=(75, 75, 75), n_out: int = 4, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        layers = []
        width = n_in
        for h in hidden:
            layers += [Dense(width, h, rng=rng, dtype=dtype), ReLU()]
            width = h
        layers.append(Dense(width, n_out, rng=rng, dtype=dtype))
        self.net = Sequential(layers)
        self.n_in, self.hidden, self.n_out, self.seed = n_in, tuple(hidden), n_out, seed
        self.x_scaler: MinMaxScaler | None = None
        self.y_scaler: MinMaxScaler | None = None

    @property
    def dtype(self):
        return self.net.layers[0].params["W"].dtype

    def parameters(self):
        return self.net.parameters()

    def forward(self, x):
        return self.net.forward(np.asarray(x, dtype=self.dtype))

    def loss_and_grads(self, x, y):
        out = self.forward(x)
        loss, g = mse(out, np.asarray(y, dtype=self.dtype))
        self.net.backward(g.astype(self.dtype))
        return loss

    def predict_normalized(self, x):
        """Network output for inputs already scaled to [0, 1], clipped to [0, 1]."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if np.any(x < -RANGE_TOL) or np.any(x > 1 + RANGE_TOL):
            raise ValueError("inputs must be normalised to [0, 1]; use predict() for raw vectors")
        return np.clip(self.forward(x).astype(float), 0.0, 1.0)

    def predict(self, x_raw):
        """Raw landscape vectors -> work metrics in Joules."""
        if self.x_scaler is None or self.y_scaler is None:
            raise RuntimeError("normalisation statistics missing; inference needs the training min/max")
        xn = np.clip(self.x_scaler.transform(np.atleast_2d(x_raw)), 0.0, 1.0)
        return self.y_scaler.inverse(self.predict_normalized(xn))

    def architecture(self):
        return {"model": "worknet", "n_in": self.n_in, "hidden": list(self.hidden), "n_out": self.n_out,
                "layers": self.net.describe()}

    def save(self, path, extra: dict | None = None):
        side = {"seed": self.seed}
        if self.x_scaler is not None:
            side["x_scaler"] = self.x_scaler.to_json()
            side["y_scaler"] = self.y_scaler.to_json()
        side.update(extra or {})
        arrays = {key: layer.params[name] for key, layer, name in self.parameters()}
        save_checkpoint(path, self.architecture(), arrays, side)

    @classmethod
    def load(cls, path):
        arch, arrays, side = load_checkpoint(path)
        if arch.get("model") != "worknet":
            raise ValueError(f"{path} does not hold a WorkNet")
        dtype = next(iter(arrays.values())).dtype
        side = side or {}
        net = cls(arch["n_in"], tuple(arch["hidden"]), arch["n_out"], side.get("seed", 0), dtype)
        for key, layer, name in net.parameters():
            layer.params[name] = arrays[key].copy()
        if "x_scaler" in side:
            net.x_scaler = MinMaxScaler.from_json(side["x_scaler"])
            net.y_scaler = MinMaxScaler.from_json(side["y_scaler"])
        return net, side


@dataclass
class WorkNetConfig:
    lr: float = 1e-3
    epochs: int = 1000
    batch_size: int = 32
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if not self.lr > 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("invalid WorkNet training config")


def train_worknet(x_train, y_train, config: WorkNetConfig = WorkNetConfig(), x_val=None, y_val=None):
    """RMSprop on MSE with inputs and targets min-max scaled on the training set.

    Returns ``(net, curve)``; validation MSE (normalised units) is logged
    when validation data are given.
    """
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    net = WorkNet(x_train.shape[1], n_out=y_train.shape[1], seed=config.seed, dtype=np.dtype(config.dtype))
    net.x_scaler = MinMaxScaler().fit(x_train)
    net.y_scaler = MinMaxScaler().fit(y_train)
    xs = net.x_scaler.transform(x_train).astype(net.dtype)
    ys = net.y_scaler.transform(y_train).astype(net.dtype)
    if x_val is not None:
        xv = np.clip(net.x_scaler.transform(x_val), 0, 1)
        yv = net.y_scaler.transform(y_val)
    rng = np.random.default_rng(config.seed)
    opt = RMSprop(lr=config.lr)
    curve = LearningCurve(("epoch", "train_mse", "val_mse"))
    n = xs.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss = net.loss_and_grads(xs[idx], ys[idx])
            if not np.isfinite(loss):
                raise TrainingDivergence(f"WorkNet loss became non-finite at epoch {epoch}")
            opt.step(net.parameters())
            total += loss * idx.size
        val = float(np.mean((net.predict_normalized(xv) - yv) ** 2)) if x_val is not None else float("nan")
        curve.rows.append((epoch, total / n, val))
    return net, curve
