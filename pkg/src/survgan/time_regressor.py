"""Gradient-boosted regression trees on ``log(t)`` with histogram split finding.

Inputs are ``[encoded covariates, S(x, t_1..t_H), E]``; the target is
``log(t + eps_t)``. Each tree is grown greedily on the squared-error
residuals, with split candidates restricted to per-feature quantile bins.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .codec import Codec
from .dataset import SurvivalDataset
from .survival_net import SurvivalNet

LOG_OFFSET = 1e-6


@dataclass
class GbtConfig:
    n_estimators: int = 200
    max_depth: int = 5
    learning_rate: float = 0.1
    max_bins: int = 256
    min_samples_leaf: int = 1
    reg_lambda: float = 1.0

    def __post_init__(self):
        if self.n_estimators < 1 or self.max_depth < 1:
            raise ValueError("n_estimators and max_depth must be >= 1")
        if not 2 <= self.max_bins <= 65536:
            raise ValueError("max_bins must be in [2, 65536]")
        if self.learning_rate <= 0 or self.reg_lambda < 0 or self.min_samples_leaf < 1:
            raise ValueError("learning_rate must be positive, reg_lambda non-negative, min_samples_leaf >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _bin_edges(x: np.ndarray, max_bins: int) -> list[np.ndarray]:
    """Per-feature split thresholds; a value goes left when ``x <= threshold``."""
    edges = []
    for col in x.T:
        u = np.unique(col)
        if u.size <= max_bins:
            thr = (u[:-1] + u[1:]) / 2.0
        else:
            qs = np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:-1], method="linear")
            thr = np.unique(qs)
        edges.append(thr)
    return edges


def _binned(x: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    out = np.empty(x.shape, dtype=np.int32)
    for j, thr in enumerate(edges):
        out[:, j] = np.searchsorted(thr, x[:, j], side="left")
    return out


class _TreeBuilder:
    def __init__(self, binned: np.ndarray, edges: list[np.ndarray], config: GbtConfig):
        self.binned = binned
        self.edges = edges
        self.config = config
        self.n_features = binned.shape[1]
        self.n_bins = max(len(e) for e in edges) + 1
        self.offsets = (np.arange(self.n_features) * self.n_bins)[None, :]

    def build(self, grad: np.ndarray) -> list[dict]:
        nodes: list[dict] = []
        self._grow(np.arange(len(grad)), grad, 0, nodes)
        return nodes

    def _leaf_value(self, g_sum: float, count: int) -> float:
        return g_sum / (count + self.config.reg_lambda)

    def _grow(self, idx: np.ndarray, grad: np.ndarray, depth: int, nodes: list[dict]) -> int:
        node_id = len(nodes)
        g = grad[idx]
        g_sum, count = float(g.sum()), len(idx)
        nodes.append({"value": self._leaf_value(g_sum, count)})
        if depth >= self.config.max_depth or count < 2 * self.config.min_samples_leaf:
            return node_id
        split = self._best_split(idx, g, g_sum, count)
        if split is None:
            return node_id
        feature, b = split
        go_left = self.binned[idx, feature] <= b
        nodes[node_id] = {"feature": int(feature), "threshold": float(self.edges[feature][b])}
        nodes[node_id]["left"] = self._grow(idx[go_left], grad, depth + 1, nodes)
        nodes[node_id]["right"] = self._grow(idx[~go_left], grad, depth + 1, nodes)
        return node_id

    def _best_split(self, idx, g, g_sum, count):
        if self.n_bins < 2:
            return None  # every feature is constant
        size = self.n_features * self.n_bins
        flat = (self.binned[idx] + self.offsets).ravel()
        hist_g = np.bincount(flat, weights=np.repeat(g, self.n_features), minlength=size)
        hist_n = np.bincount(flat, minlength=size).astype(np.float64)
        hist_g = hist_g.reshape(self.n_features, self.n_bins)
        hist_n = hist_n.reshape(self.n_features, self.n_bins)
        # split after bin b: left gets bins 0..b; the last bin can never be a split
        gl = np.cumsum(hist_g, axis=1)[:, :-1]
        nl = np.cumsum(hist_n, axis=1)[:, :-1]
        gr, nr = g_sum - gl, count - nl
        lam = self.config.reg_lambda
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = gl**2 / (nl + lam) + gr**2 / (nr + lam) - g_sum**2 / (count + lam)
        valid = (nl >= self.config.min_samples_leaf) & (nr >= self.config.min_samples_leaf)
        for j, thr in enumerate(self.edges):
            valid[j, len(thr):] = False
        gain = np.where(valid, gain, -np.inf)
        best = int(np.argmax(gain))
        if not np.isfinite(gain.flat[best]) or gain.flat[best] <= 1e-12:
            return None
        return divmod(best, self.n_bins - 1)


def _predict_tree(nodes: list[dict], x: np.ndarray) -> np.ndarray:
    node = np.zeros(len(x), dtype=np.int64)
    out = np.empty(len(x))
    active = np.arange(len(x))
    while active.size:
        ids = node[active]
        done = np.array(["feature" not in nodes[i] for i in ids], dtype=bool)
        if np.any(done):
            out[active[done]] = [nodes[i]["value"] for i in ids[done]]
        active, ids = active[~done], ids[~done]
        for i in np.unique(ids):
            sel = active[ids == i]
            nd = nodes[i]
            left = x[sel, nd["feature"]] <= nd["threshold"]
            node[sel] = np.where(left, nd["left"], nd["right"])
        # keep loop going over the still-active rows
    return out


class GradientBoostedTrees:
    """Squared-error boosting; ``fit`` records the training loss after every tree."""

    def __init__(self, config: GbtConfig | None = None):
        self.config = config or GbtConfig()
        self.base = 0.0
        self.trees: list[list[dict]] = []
        self.train_loss: list[float] = []
        self.n_features = 0

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GradientBoostedTrees":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 2 or len(x) != len(y) or len(y) == 0:
            raise ValueError("x must be a non-empty 2-D array aligned with y")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("boosting inputs must be finite")
        self.n_features = x.shape[1]
        edges = _bin_edges(x, self.config.max_bins)
        builder = _TreeBuilder(_binned(x, edges), edges, self.config)
        self.base = float(y.mean())
        pred = np.full(len(y), self.base)
        self.trees, self.train_loss = [], [float(np.mean((y - pred) ** 2))]
        for _ in range(self.config.n_estimators):
            nodes = builder.build(y - pred)
            for nd in nodes:
                if "value" in nd:
                    nd["value"] *= self.config.learning_rate
            self.trees.append(nodes)
            pred = pred + _predict_tree(nodes, x)
            self.train_loss.append(float(np.mean((y - pred) ** 2)))
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        pred = np.full(len(x), self.base)
        for nodes in self.trees:
            pred += _predict_tree(nodes, x)
        return pred

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "base": self.base, "n_features": self.n_features, "trees": self.trees}

    @classmethod
    def from_dict(cls, d: dict) -> "GradientBoostedTrees":
        model = cls(GbtConfig(**d["config"]))
        model.base = float(d["base"])
        model.n_features = int(d["n_features"])
        model.trees = [[{k: v for k, v in nd.items()} for nd in t] for t in d["trees"]]
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def regressor_inputs(encoded: np.ndarray, curves: np.ndarray, events: np.ndarray) -> np.ndarray:
    events = np.asarray(events, dtype=np.float64).reshape(-1, 1)
    return np.hstack([np.asarray(encoded), np.asarray(curves), events])


class TimeRegressor:
    """Predicts event time (``E=1``) or censoring time (``E=0``) from covariates and their survival curve."""

    def __init__(self, model: GradientBoostedTrees):
        self.model = model

    def predict_time(self, encoded: np.ndarray, curves: np.ndarray, events: np.ndarray) -> np.ndarray:
        encoded = np.atleast_2d(encoded)
        if encoded.shape[0] == 0:
            return np.zeros(0)
        log_t = self.model.predict(regressor_inputs(encoded, curves, events))
        return np.maximum(np.exp(log_t) - LOG_OFFSET, 0.0)

    def to_dict(self) -> dict:
        return self.model.to_dict()

    @classmethod
    def from_dict(cls, d: dict) -> "TimeRegressor":
        return cls(GradientBoostedTrees.from_dict(d))


def train_time_regressor(
    train: SurvivalDataset,
    codec: Codec,
    survival: SurvivalNet,
    config: GbtConfig | None = None,
    seed: int = 0,
) -> TimeRegressor:
    """Fit on every training row: censored rows teach censoring times, events teach event times.

    Boosting here is deterministic, so ``seed`` only exists for interface symmetry.
    """
    encoded = codec.transform(train.data)
    curves = survival.predict_curves(encoded)
    x = regressor_inputs(encoded, curves, train.events)
    y = np.log(train.times + LOG_OFFSET)
    return TimeRegressor(GradientBoostedTrees(config).fit(x, y))
