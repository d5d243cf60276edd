"""Histogram-based gradient-boosted regression trees (squared error).

Features are bucketed into at most ``max_bins`` quantile bins once, before
boosting. Each tree is grown level-wise to ``max_depth`` by scanning bin
histograms of the gradients. Node thresholds are stored in original feature
units; a row goes left when ``x <= threshold``.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from . import kernels
from .errors import SchemaError

FORMAT = "amiwatch.gbdt"
VERSION = 1
TARGET = "consumption"
DEFAULT_FEATURES = ("lag1", "lag2", "day_shift", "month_shift", "hour",
                    "temperature", "weekday", "month", "holiday")


@dataclass(frozen=True)
class GbdtConfig:
    n_trees: int = 200
    learning_rate: float = 0.05
    max_depth: int = 6
    max_bins: int = 255
    min_samples_leaf: int = 20
    l2: float = 0.0
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.max_bins <= 255:
            raise ValueError("max_bins must lie in [2, 255]")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")
        if self.n_trees < 0:
            raise ValueError("n_trees must be non-negative")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must lie in (0, 1]")


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf. Node 0 is the root."""

    feature: np.ndarray
    threshold: np.ndarray
    bin: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "bin", "left", "right", "value", "gain", "n_samples")}

    @classmethod
    def from_dict(cls, d):
        ints = ("feature", "bin", "left", "right", "n_samples")
        return cls(**{k: np.asarray(v, dtype=np.int64 if k in ints else np.float64)
                      for k, v in d.items()})


@dataclass
class GbdtModel:
    config: GbdtConfig
    features: tuple
    base_score: float
    bin_edges: list
    trees: list = field(default_factory=list)
    gain_importance: dict = field(default_factory=dict)
    train_loss: list = field(default_factory=list)

    def to_dict(self):
        return {"format": FORMAT, "version": VERSION, "config": asdict(self.config),
                "features": list(self.features), "base_score": self.base_score,
                "bin_edges": [e.tolist() for e in self.bin_edges],
                "trees": [t.to_dict() for t in self.trees],
                "gain_importance": self.gain_importance,
                "train_loss": self.train_loss}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT:
            raise ValueError("not a gbdt model document")
        if d.get("version") != VERSION:
            raise ValueError(f"unsupported gbdt model version {d.get('version')}")
        return cls(GbdtConfig(**d["config"]), tuple(d["features"]), d["base_score"],
                   [np.asarray(e, dtype=np.float64) for e in d["bin_edges"]],
                   [Tree.from_dict(t) for t in d["trees"]], dict(d["gain_importance"]),
                   list(d.get("train_loss", [])))

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def _matrix(frame, features):
    if isinstance(frame, pd.DataFrame):
        for f in features:
            if f not in frame.columns:
                raise SchemaError(f"frame is missing feature column {f!r}")
        X = frame[list(features)].to_numpy(dtype=np.float64)
    else:
        X = np.asarray(frame, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(features):
            raise SchemaError(f"expected {len(features)} feature columns")
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    return X


def compute_bin_edges(column, max_bins):
    """Strictly increasing split candidates for one feature.

    With few distinct values the candidates are midpoints between adjacent
    values; otherwise they are midpoints just above ``max_bins - 1`` quantile
    values, so no training value ever coincides with an edge.
    """
    uniq = np.unique(column)
    if uniq.size <= max_bins:
        return (uniq[:-1] + uniq[1:]) / 2.0
    qs = np.quantile(column, np.linspace(0, 1, max_bins + 1)[1:-1], method="lower")
    pos = np.unique(np.searchsorted(uniq, qs))
    pos = pos[pos < uniq.size - 1]
    return (uniq[pos] + uniq[pos + 1]) / 2.0


def bin_matrix(X, bin_edges):
    out = np.empty(X.shape, dtype=np.uint8)
    for f, edges in enumerate(bin_edges):
        out[:, f] = np.searchsorted(edges, X[:, f], side="left")
    return np.ascontiguousarray(out)


def _leaf_value(g, l2):
    """``-sum(g) / (n + l2)``; with ``l2 == 0`` a second pass on the residual
    of the first mean makes a constant leaf reproduce its gradient exactly."""
    n = g.size
    v = -math.fsum(g) / (n + l2)
    if l2 == 0 and n:
        v -= math.fsum(g + v) / n
    return v


def _grow_tree(Xb, grad, rows, feature_bins, n_bins, bin_edges, config):
    nodes = []  # dicts in BFS order

    def make(idx, depth):
        nodes.append({"idx": idx, "depth": depth, "feature": -1, "bin": -1,
                      "threshold": 0.0, "left": -1, "right": -1, "gain": 0.0,
                      "value": 0.0, "hist": None})
        return len(nodes) - 1

    make(rows, 0)
    frontier = [0]
    while frontier:
        nxt = []
        for k in frontier:
            node = nodes[k]
            idx = node["idx"]
            if node["hist"] is None:
                node["hist"] = kernels.build_histograms(Xb, idx, grad, n_bins)
            sum_g, count = node["hist"]
            g_total = float(sum_g[0].sum())
            n_total = int(idx.size)
            node["value"] = -g_total / (n_total + config.l2)
            if node["depth"] >= config.max_depth or n_total < 2 * config.min_samples_leaf:
                continue
            gain, f, b = kernels.best_split(sum_g, count, feature_bins, g_total, n_total,
                                            config.min_samples_leaf, config.l2)
            if f < 0 or not gain > 0.0:
                continue
            go_left = Xb[idx, f] <= b
            li, ri = idx[go_left], idx[~go_left]
            node.update(feature=f, bin=b, threshold=float(bin_edges[f][b]), gain=gain)
            lk = make(li, node["depth"] + 1)
            rk = make(ri, node["depth"] + 1)
            node["left"], node["right"] = lk, rk
            small, large = (lk, rk) if li.size <= ri.size else (rk, lk)
            hs = kernels.build_histograms(Xb, nodes[small]["idx"], grad, n_bins)
            nodes[small]["hist"] = hs
            nodes[large]["hist"] = (sum_g - hs[0], count - hs[1])
            nxt += [lk, rk]
        frontier = nxt

    for node in nodes:  # leaf values come from the rows, not subtracted histograms
        if node["feature"] < 0:
            node["value"] = _leaf_value(grad[node["idx"]], config.l2)
    return Tree(
        feature=np.array([n["feature"] for n in nodes], dtype=np.int64),
        threshold=np.array([n["threshold"] for n in nodes], dtype=np.float64),
        bin=np.array([n["bin"] for n in nodes], dtype=np.int64),
        left=np.array([n["left"] for n in nodes], dtype=np.int64),
        right=np.array([n["right"] for n in nodes], dtype=np.int64),
        value=np.array([n["value"] if n["feature"] < 0 else 0.0 for n in nodes]),
        gain=np.array([n["gain"] for n in nodes], dtype=np.float64),
        n_samples=np.array([n["idx"].size for n in nodes], dtype=np.int64),
    )


def _tree_predict(tree, X):
    return kernels.predict_forest(np.ascontiguousarray(X), tree.feature, tree.threshold,
                                  tree.left, tree.right, tree.value,
                                  np.zeros(1, dtype=np.int64))


def fit(train, config: GbdtConfig = GbdtConfig(), features=DEFAULT_FEATURES,
        target=TARGET, y=None) -> GbdtModel:
    """Boost ``config.n_trees`` trees on squared-error gradients.

    ``train`` is a DataFrame holding ``features`` and ``target``, or a 2-D
    array together with ``y``.
    """
    features = tuple(features)
    X = _matrix(train, features)
    if y is None:
        if not isinstance(train, pd.DataFrame) or target not in train.columns:
            raise SchemaError(f"frame is missing target column {target!r}")
        y = train[target].to_numpy(dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.isfinite(y).all():
        raise ValueError("target contains non-finite values")
    n = X.shape[0]
    if n < 2 * config.min_samples_leaf:
        raise ValueError(f"need at least {2 * config.min_samples_leaf} rows, got {n}")

    bin_edges = [compute_bin_edges(X[:, f], config.max_bins) for f in range(X.shape[1])]
    feature_bins = np.array([e.size + 1 for e in bin_edges], dtype=np.int64)
    n_bins = int(feature_bins.max())
    Xb = bin_matrix(X, bin_edges)
    base = float(np.mean(y))
    model = GbdtModel(config, features, base, bin_edges)
    pred = np.full(n, base)
    importance = np.zeros(len(features))
    rng = np.random.default_rng(config.seed)
    all_rows = np.arange(n, dtype=np.intp)
    model.train_loss.append(float(np.mean((y - pred) ** 2)))
    for _ in range(config.n_trees):
        grad = np.ascontiguousarray(pred - y)
        rows = all_rows
        if config.subsample < 1.0:
            m = max(2 * config.min_samples_leaf, int(round(config.subsample * n)))
            rows = np.sort(rng.choice(n, size=min(m, n), replace=False)).astype(np.intp)
        tree = _grow_tree(Xb, grad, rows, feature_bins, n_bins, bin_edges, config)
        model.trees.append(tree)
        internal = tree.feature >= 0
        np.add.at(importance, tree.feature[internal], tree.gain[internal])
        pred = pred + config.learning_rate * _tree_predict(tree, X)
        model.train_loss.append(float(np.mean((y - pred) ** 2)))
    model.gain_importance = {f: float(g) for f, g in zip(features, importance)}
    return model


def _flat_forest(model: GbdtModel):
    """All trees as one set of node arrays; cached until the tree count changes."""
    cached = model.__dict__.get("_flat")
    if cached is not None and cached[0] == len(model.trees):
        return cached[1]
    feature, threshold, left, right, value, roots = [], [], [], [], [], []
    offset = 0
    for t in model.trees:
        roots.append(offset)
        feature.append(t.feature)
        threshold.append(t.threshold)
        value.append(t.value)
        left.append(np.where(t.left >= 0, t.left + offset, -1))
        right.append(np.where(t.right >= 0, t.right + offset, -1))
        offset += t.n_nodes
    flat = (np.concatenate(feature), np.concatenate(threshold), np.concatenate(left),
            np.concatenate(right), np.concatenate(value), np.asarray(roots, dtype=np.int64))
    model.__dict__["_flat"] = (len(model.trees), flat)
    return flat


def predict(model: GbdtModel, frame) -> np.ndarray:
    """``base_score + learning_rate * sum of leaf values`` per row."""
    X = _matrix(frame, model.features)
    if not model.trees:
        return np.full(X.shape[0], model.base_score)
    total = kernels.predict_forest(np.ascontiguousarray(X), *_flat_forest(model))
    return model.base_score + model.config.learning_rate * total


def mae(y, yhat) -> float:
    return float(np.mean(np.abs(np.asarray(y, float) - np.asarray(yhat, float))))


def fold_bounds(n, k):
    """Contiguous chronological folds as ``(start, stop)`` pairs."""
    if k < 2 or k > n:
        raise ValueError(f"k must lie in [2, {n}], got {k}")
    edges = [(i * n) // k for i in range(k + 1)]
    return list(zip(edges[:-1], edges[1:]))


def cross_validate(frame, config: GbdtConfig = GbdtConfig(), k: int = 5,
                   features=DEFAULT_FEATURES, target=TARGET) -> dict:
    """K contiguous folds, each scored by a model fitted on the other folds."""
    n = len(frame)
    maes = []
    for start, stop in fold_bounds(n, k):
        held = frame.iloc[start:stop]
        rest = pd.concat([frame.iloc[:start], frame.iloc[stop:]])
        model = fit(rest, config, features, target)
        maes.append(mae(held[target], predict(model, held)))
    return {"fold_mae": maes, "mean_mae": float(np.mean(maes))}


def feature_importance(model: GbdtModel) -> list[tuple[str, float]]:
    """Total split gain per feature, normalized to sum 1, largest first."""
    total = sum(model.gain_importance.values())
    if not model.trees or total <= 0:
        return []
    ranked = [(f, g / total) for f, g in model.gain_importance.items() if g > 0]
    return sorted(ranked, key=lambda fg: (-fg[1], model.features.index(fg[0])))


_NODE_RE = re.compile(
    r"^(?P<indent> *)\[(?P<id>\d+)\] (?:(?P<feat>\S+) <= (?P<thr>\S+) \(bin (?P<bin>\d+)\) "
    r"gain=(?P<gain>\S+) n=(?P<n>\d+)|leaf value=(?P<val>\S+) n=(?P<ln>\d+))$")


def export_tree(model: GbdtModel, index: int) -> str:
    """Indented depth-first listing; left child printed before right."""
    if not 0 <= index < len(model.trees):
        raise IndexError(f"tree index {index} out of range (0..{len(model.trees) - 1})")
    t = model.trees[index]
    lines = []

    def walk(node, depth):
        pad = "  " * depth
        if t.feature[node] < 0:
            lines.append(f"{pad}[{node}] leaf value={float(t.value[node])!r} n={t.n_samples[node]}")
            return
        name = model.features[t.feature[node]]
        lines.append(f"{pad}[{node}] {name} <= {float(t.threshold[node])!r} (bin {t.bin[node]}) "
                     f"gain={float(t.gain[node])!r} n={t.n_samples[node]}")
        walk(t.left[node], depth + 1)
        walk(t.right[node], depth + 1)

    walk(0, 0)
    return "\n".join(lines) + "\n"


def parse_tree(text: str, features) -> Tree:
    """Inverse of :func:`export_tree`."""
    features = list(features)
    parsed = {}
    stack = []  # (depth, node id)
    for line in text.splitlines():
        if not line.strip():
            continue
        m = _NODE_RE.match(line)
        if m is None:
            raise ValueError(f"unparseable tree line: {line!r}")
        depth = len(m["indent"]) // 2
        nid = int(m["id"])
        while stack and stack[-1][0] >= depth:
            stack.pop()
        if stack:
            parent = parsed[stack[-1][1]]
            parent["left" if parent["left"] < 0 else "right"] = nid
        if m["feat"] is not None:
            parsed[nid] = dict(feature=features.index(m["feat"]), threshold=float(m["thr"]),
                               bin=int(m["bin"]), gain=float(m["gain"]), value=0.0,
                               n_samples=int(m["n"]), left=-1, right=-1)
        else:
            parsed[nid] = dict(feature=-1, threshold=0.0, bin=-1, gain=0.0,
                               value=float(m["val"]), n_samples=int(m["ln"]),
                               left=-1, right=-1)
        stack.append((depth, nid))
    order = sorted(parsed)
    if order != list(range(len(order))):
        raise ValueError("node ids are not contiguous")
    return Tree.from_dict({k: [parsed[i][k] for i in order] for k in
                           ("feature", "threshold", "bin", "left", "right", "value",
                            "gain", "n_samples")})
