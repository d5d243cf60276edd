"""Dense ELU autoencoder with reconstruction-error anomaly thresholds.

The network is ``d -> d -> 16 -> 8 -> 4 -> 2 -> 4 -> 8 -> 16 -> d`` with an
ELU (alpha = 1) after every layer, trained with Adam on mean squared error.
Inputs are MinMax-scaled with bounds from the training split. A row is
anomalous when its reconstruction error exceeds ``mean + k * std`` of the
errors it is compared against.
"""
from __future__ import annotations

import copy
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DimensionError, DivergenceError, ScalerError

FORMAT = "amiwatch.autoencoder"
VERSION = 1
# holiday is left out: a 2%-rare binary column cannot pass a 2-unit bottleneck,
# so every holiday row would be flagged regardless of consumption.
AE_FEATURES = ("consumption", "temperature", "lag1", "lag2", "day_shift", "month_shift",
               "hour", "weekday", "month")
HIDDEN_UNITS = (16, 8, 4, 2, 4, 8, 16)
ELU_ALPHA = 1.0
DEFAULT_K = 2.0


class MinMaxScaler:
    """Per-feature ``(x - min) / (max - min)``; no clipping outside the range."""

    def __init__(self, data_min=None, data_max=None):
        self.data_min = None if data_min is None else np.asarray(data_min, float)
        self.data_max = None if data_max is None else np.asarray(data_max, float)

    def fit(self, X):
        X = np.asarray(X, dtype=np.float64)
        lo, hi = X.min(axis=0), X.max(axis=0)
        const = np.flatnonzero(~(hi > lo))
        if const.size:
            raise ScalerError(f"constant feature(s) at column(s) {const.tolist()}")
        self.data_min, self.data_max = lo, hi
        return self

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.data_min) / (self.data_max - self.data_min)

    def inverse_transform(self, X):
        return np.asarray(X, dtype=np.float64) * (self.data_max - self.data_min) + self.data_min

    def to_dict(self):
        return {"min": self.data_min.tolist(), "max": self.data_max.tolist()}


def fit_scaler(train) -> MinMaxScaler:
    return MinMaxScaler().fit(train)


def elu(z):
    return np.where(z > 0, z, ELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def elu_grad(z):
    return np.where(z > 0, 1.0, ELU_ALPHA * np.exp(np.minimum(z, 0.0)))


def layer_units(input_dim):
    return (input_dim, input_dim) + HIDDEN_UNITS + (input_dim,)


@dataclass
class AutoencoderModel:
    weights: list
    biases: list
    features: tuple = AE_FEATURES
    scaler: MinMaxScaler | None = None
    history: list = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def param_counts(self):
        return [w.size + b.size for w, b in zip(self.weights, self.biases)]

    @property
    def total_params(self):
        return sum(self.param_counts)

    def params(self):
        return self.weights + self.biases

    def forward(self, X, keep=False):
        """Network output; with ``keep`` also the pre-activations and inputs."""
        a = np.asarray(X, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.input_dim:
            raise DimensionError(f"expected rows of {self.input_dim} features")
        inputs, pre = [], []
        for W, b in zip(self.weights, self.biases):
            inputs.append(a)
            z = a @ W + b
            pre.append(z)
            a = elu(z)
        return (a, inputs, pre) if keep else a

    def loss_and_grads(self, X):
        """Mean squared reconstruction loss and its gradient per parameter.

        Returns ``(loss, weight_grads, bias_grads)``.
        """
        out, inputs, pre = self.forward(X, keep=True)
        diff = out - X
        loss = float(np.mean(diff * diff))
        delta = 2.0 * diff / diff.size
        gw, gb = [None] * len(self.weights), [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            delta = delta * elu_grad(pre[i])
            gw[i] = inputs[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i:
                delta = delta @ self.weights[i].T
        return loss, gw, gb

    def metadata(self):
        return {"input_dim": self.input_dim, "units": list(layer_units(self.input_dim)[1:]),
                "activation": "elu", "alpha": ELU_ALPHA,
                "param_counts": self.param_counts, "total_params": self.total_params}

    def to_dict(self):
        return {"format": FORMAT, "version": VERSION, "metadata": self.metadata(),
                "features": list(self.features),
                "layers": [{"shape": list(W.shape), "weights": W.ravel().tolist(),
                            "bias": b.tolist()} for W, b in zip(self.weights, self.biases)],
                "scaler": None if self.scaler is None else self.scaler.to_dict(),
                "best_epoch": self.best_epoch}

    def dumps(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise ValueError("not a supported autoencoder document")
        ws = [np.asarray(L["weights"], float).reshape(L["shape"]) for L in d["layers"]]
        bs = [np.asarray(L["bias"], float) for L in d["layers"]]
        sc = d.get("scaler")
        scaler = None if sc is None else MinMaxScaler(sc["min"], sc["max"])
        return cls(ws, bs, tuple(d["features"]), scaler, [], d.get("best_epoch"))

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def build_model(input_dim: int = 9, seed: int = 0, zero: bool = False) -> AutoencoderModel:
    """Glorot-uniform weights and zero biases, or all zeros with ``zero``."""
    rng = np.random.default_rng(seed)
    units = layer_units(input_dim)
    ws, bs = [], []
    for fan_in, fan_out in zip(units[:-1], units[1:]):
        if zero:
            ws.append(np.zeros((fan_in, fan_out)))
        else:
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    feats = AE_FEATURES if input_dim == len(AE_FEATURES) else tuple(
        f"x{i}" for i in range(input_dim))
    return AutoencoderModel(ws, bs, feats)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def reconstruction_loss(model, X):
    out = model.forward(X)
    return float(np.mean((out - X) ** 2))


def train(model: AutoencoderModel, train_data, val_data, batch_size: int = 256,
          max_epochs: int = 200, patience: int = 10, lr: float = 1e-3,
          seed: int = 0, shuffle: bool = True) -> AutoencoderModel:
    """Adam on mini-batches with early stopping on validation loss.

    Training stops once ``patience`` epochs pass without a new best
    validation loss; the returned copy holds the best epoch's weights and
    the per-epoch history ``(epoch, train_loss, val_loss)``.
    """
    X = np.asarray(train_data, dtype=np.float64)
    V = np.asarray(val_data, dtype=np.float64)
    if V.size == 0:
        raise ValueError("validation data is empty")
    net = copy.deepcopy(model)
    opt = Adam(net.params(), lr=lr)
    rng = np.random.default_rng(seed)
    nw = len(net.weights)
    best = (math.inf, None, 0)
    history = []
    since_best = 0
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(X.shape[0]) if shuffle else np.arange(X.shape[0])
        total = 0.0
        for start in range(0, X.shape[0], batch_size):
            batch = X[order[start:start + batch_size]]
            loss, gw, gb = net.loss_and_grads(batch)
            if not math.isfinite(loss):
                raise DivergenceError(f"training loss became {loss} in epoch {epoch}")
            opt.step(gw + gb)
            total += loss * batch.shape[0]
        train_loss = total / X.shape[0]
        val_loss = reconstruction_loss(net, V)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"validation loss became {val_loss} in epoch {epoch}")
        history.append((epoch, train_loss, val_loss))
        if val_loss < best[0]:
            best = (val_loss, [p.copy() for p in net.params()], epoch)
            since_best = 0
        else:
            since_best += 1
        if since_best >= patience:
            break
    params = best[1]
    out = AutoencoderModel(params[:nw], params[nw:], net.features, net.scaler,
                           history, best[2])
    return out


def reconstruction_errors(model: AutoencoderModel, data) -> np.ndarray:
    """Per-row mean of squared differences between input and output."""
    X = np.asarray(data, dtype=np.float64)
    out = model.forward(X)
    return np.mean((X - out) ** 2, axis=1)


def dynamic_threshold(errors, k: float = DEFAULT_K) -> float:
    """``mean + k * std`` with the population standard deviation."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("cannot threshold an empty error vector")
    if k < 0:
        raise ValueError("k must be non-negative")
    return float(np.mean(e) + k * np.std(e))


def detect(model: AutoencoderModel, data, k: float = DEFAULT_K, timestamps=None,
           errors=None) -> pd.DataFrame:
    """Flag rows whose error is strictly above the threshold of this batch."""
    e = reconstruction_errors(model, data) if errors is None else np.asarray(errors, float)
    thr = dynamic_threshold(e, k)
    if timestamps is None:
        timestamps = np.arange(e.size)
    return pd.DataFrame({"timestamp": timestamps, "reconstruction_error": e,
                         "threshold": thr, "flag": (e > thr).astype(np.int64)})


def k_sweep(model: AutoencoderModel, data, k_values, errors=None) -> list[tuple[float, int]]:
    """Anomaly count for each multiplier, in the order given."""
    k_values = list(k_values)
    if not k_values:
        raise ValueError("need at least one k value")
    e = reconstruction_errors(model, data) if errors is None else np.asarray(errors, float)
    return [(float(k), int((e > dynamic_threshold(e, k)).sum())) for k in k_values]


@dataclass
class ReconstructionVerdict:
    timestamp: object
    reconstruction_error: float
    threshold: float
    flag: int


class ErrorStream:
    """Trailing-buffer twin of :func:`detect` for one error at a time."""

    def __init__(self, k: float = DEFAULT_K, buffer: int = 720):
        self.k = k
        self.buffer = deque(maxlen=buffer)

    def push(self, error: float, timestamp=None) -> ReconstructionVerdict:
        self.buffer.append(float(error))
        thr = dynamic_threshold(np.fromiter(self.buffer, float), self.k)
        return ReconstructionVerdict(timestamp, float(error), thr, int(error > thr))


def feature_matrix(frame: pd.DataFrame, features=AE_FEATURES) -> np.ndarray:
    missing = [f for f in features if f not in frame.columns]
    if missing:
        raise DimensionError(f"frame lacks autoencoder features {missing}")
    return frame[list(features)].to_numpy(dtype=np.float64)
