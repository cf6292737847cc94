"""Mode-specific normalization of covariates and the condition-vector encoder.

Each continuous column gets a 1-D Gaussian mixture. A value is encoded as the
one-hot of its mixture mode followed by its standardized offset inside that
mode, ``(x - mu_k) / sigma_k``. Categorical columns are plain one-hots. The
condition vector keeps only the mode/category one-hots and appends one-hot
blocks for the time bin and the event indicator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import ColumnSchema, SurvivalDataset

CLIP = 4.0
STD_FLOOR = 1e-6
PRUNE_WEIGHT = 1e-3


class EMDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class GmmSpec:
    weights: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]
    max_components: int = 10

    def __post_init__(self):
        if not (len(self.weights) == len(self.means) == len(self.stds) >= 1):
            raise ValueError("a GMM needs at least one component with matching parameter lengths")
        if len(self.weights) > self.max_components:
            raise ValueError("more retained components than max_components")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {sum(self.weights)}, expected 1")
        if min(self.stds) <= 0:
            raise ValueError("component stds must be positive")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def log_joint(self, x: np.ndarray) -> np.ndarray:
        """``log(w_k) + log N(x | mu_k, sigma_k)`` with shape ``(len(x), K)``."""
        return _log_joint(np.asarray(x, dtype=np.float64), np.array(self.weights), np.array(self.means), np.array(self.stds))


def _log_joint(x, w, mu, sd):
    z = (x[:, None] - mu[None, :]) / sd[None, :]
    with np.errstate(divide="ignore"):
        return np.log(w)[None, :] - 0.5 * z * z - np.log(sd)[None, :] - 0.5 * np.log(2 * np.pi)


def _logsumexp(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True))).ravel()


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            break
        centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.sort(np.array(centers))


def fit_gmm(
    x: np.ndarray,
    max_components: int = 10,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
    select: str = "bic",
    history: list | None = None,
) -> GmmSpec:
    """Fit a 1-D Gaussian mixture with at most ``max_components`` modes.

    With ``select="bic"`` every component count from 1 to the maximum is fitted
    by EM and the one with the lowest BIC is kept; ``select="none"`` fits the
    maximum count only. Components lighter than ``PRUNE_WEIGHT`` are dropped
    either way.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot fit a mixture to an empty column")
    std = float(x.std())
    if std == 0.0 or np.unique(x).size == 1:
        return GmmSpec((1.0,), (float(x[0]),), (max(std, STD_FLOOR),), max_components)
    k_max = min(max_components, np.unique(x).size)
    if select == "none":
        counts = [k_max]
    elif select == "bic":
        counts = list(range(1, k_max + 1))
    else:
        raise ValueError(f"unknown selection rule {select!r}")
    best, best_bic = None, np.inf
    for k in counts:
        w, mu, sd, ll = _em(x, k, np.random.default_rng([seed, k]), max_iter, tol, history)
        bic = -2.0 * ll * x.size + (3 * len(w) - 1) * np.log(x.size)
        if bic < best_bic:
            best, best_bic = (w, mu, sd), bic
    w, mu, sd = best
    keep = w >= PRUNE_WEIGHT
    if not np.any(keep):
        keep = w == w.max()
    w, mu, sd = w[keep], mu[keep], sd[keep]
    order = np.argsort(mu, kind="stable")
    w = w[order] / w[order].sum()
    return GmmSpec(tuple(w.tolist()), tuple(mu[order].tolist()), tuple(sd[order].tolist()), max_components)


def _em(x, k, rng, max_iter, tol, history):
    """EM from a k-means++ start; returns weights, means, stds and mean log-likelihood.

    The mean log-likelihood of every iteration is appended to ``history``
    when given; a decrease beyond float noise raises ``EMDivergence``.
    """
    std = float(x.std())
    mu = _kmeans_pp(x, k, rng)
    k = len(mu)
    floor = max(STD_FLOOR, 1e-3 * std)
    # a few Lloyd steps give EM a reasonable starting partition
    for _ in range(10):
        assign = np.argmin(np.abs(x[:, None] - mu[None, :]), axis=1)
        mu = np.array([x[assign == j].mean() if np.any(assign == j) else mu[j] for j in range(k)])
    assign = np.argmin(np.abs(x[:, None] - mu[None, :]), axis=1)
    w = np.array([max(np.mean(assign == j), 1e-12) for j in range(k)])
    w /= w.sum()
    sd = np.array([max(x[assign == j].std(), floor) if np.sum(assign == j) > 1 else std for j in range(k)])

    prev = -np.inf
    for _ in range(max_iter):
        lj = _log_joint(x, w, mu, sd)
        norm = _logsumexp(lj)
        ll = float(norm.mean())
        if history is not None:
            history.append(ll)
        if ll < prev - 1e-9 * max(1.0, abs(prev)):
            raise EMDivergence(f"EM log-likelihood decreased from {prev} to {ll}")
        if ll - prev < tol:
            break
        prev = ll
        resp = np.exp(lj - norm[:, None])
        nk = resp.sum(axis=0)
        alive = nk > 1e-10
        resp, nk, mu, sd = resp[:, alive], nk[alive], mu[alive], sd[alive]
        w = nk / nk.sum()
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - mu[None, :]) ** 2).sum(axis=0) / nk
        sd = np.maximum(np.sqrt(var), floor)
    return w, mu, sd, float(_logsumexp(_log_joint(x, w, mu, sd)).mean())


@dataclass(frozen=True)
class Block:
    """A contiguous slice of the encoded vector.

    ``kind`` is ``"onehot"`` (mode or category indicator) or ``"scalar"``
    (standardized residual). ``column`` names the source covariate.
    """

    column: str
    kind: str
    start: int
    width: int

    @property
    def stop(self) -> int:
        return self.start + self.width


class Codec:
    """Fitted per-column encoders plus the time range used for condition binning."""

    def __init__(
        self,
        schema: Sequence[ColumnSchema],
        gmms: dict[str, GmmSpec],
        time_min: float,
        time_max: float,
        time_bins: int = 10,
        sample_modes: bool = False,
    ):
        if time_bins < 1:
            raise ValueError("time_bins must be >= 1")
        self.schema = tuple(schema)
        self.gmms = dict(gmms)
        self.time_min = float(time_min)
        self.time_max = float(time_max)
        self.time_bins = int(time_bins)
        self.sample_modes = sample_modes
        self.blocks: list[Block] = []
        self.condition_blocks: list[Block] = []
        pos = cpos = 0
        for col in self.schema:
            k = len(col.categories) if col.is_categorical else self.gmms[col.name].n_components
            self.blocks.append(Block(col.name, "onehot", pos, k))
            pos += k
            if not col.is_categorical:
                self.blocks.append(Block(col.name, "scalar", pos, 1))
                pos += 1
            self.condition_blocks.append(Block(col.name, "onehot", cpos, k))
            cpos += k
        self.condition_blocks.append(Block("<time>", "onehot", cpos, self.time_bins))
        cpos += self.time_bins
        self.condition_blocks.append(Block("<event>", "onehot", cpos, 2))
        cpos += 2
        self.dim = pos
        self.condition_dim = cpos

    # -- covariates ----------------------------------------------------

    def modes(self, data: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """Per-column mode (continuous) or category (categorical) indices, shape ``(N, m)``."""
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        out = np.empty(data.shape, dtype=np.int64)
        for j, col in enumerate(self.schema):
            if col.is_categorical:
                out[:, j] = data[:, j].astype(np.int64)
                continue
            lj = self.gmms[col.name].log_joint(data[:, j])
            if self.sample_modes:
                if rng is None:
                    raise ValueError("responsibility-sampled modes need an rng")
                p = np.exp(lj - _logsumexp(lj)[:, None])
                u = rng.random(len(p))[:, None]
                out[:, j] = np.minimum((np.cumsum(p, axis=1) < u).sum(axis=1), p.shape[1] - 1)
            else:
                out[:, j] = np.argmax(lj, axis=1)
        return out

    def transform(self, data: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        modes = self.modes(data, rng)
        out = np.zeros((data.shape[0], self.dim))
        rows = np.arange(data.shape[0])
        bi = iter(self.blocks)
        for j, col in enumerate(self.schema):
            onehot = next(bi)
            out[rows, onehot.start + modes[:, j]] = 1.0
            if col.is_categorical:
                continue
            scalar = next(bi)
            g = self.gmms[col.name]
            mu = np.array(g.means)[modes[:, j]]
            sd = np.array(g.stds)[modes[:, j]]
            out[:, scalar.start] = np.clip((data[:, j] - mu) / sd, -CLIP, CLIP)
        return out

    def inverse_transform(self, encoded: np.ndarray) -> np.ndarray:
        """Decode (possibly soft) encodings; one-hot blocks are hardened by argmax."""
        encoded = np.atleast_2d(np.asarray(encoded, dtype=np.float64))
        if encoded.shape[1] != self.dim:
            raise ValueError(f"expected encoded width {self.dim}, got {encoded.shape[1]}")
        out = np.empty((encoded.shape[0], len(self.schema)))
        bi = iter(self.blocks)
        for j, col in enumerate(self.schema):
            onehot = next(bi)
            k = np.argmax(encoded[:, onehot.start:onehot.stop], axis=1)
            if col.is_categorical:
                out[:, j] = k
                continue
            scalar = next(bi)
            g = self.gmms[col.name]
            out[:, j] = np.array(g.means)[k] + np.array(g.stds)[k] * encoded[:, scalar.start]
        return out

    def encode(self, row: Sequence, rng: np.random.Generator | None = None) -> np.ndarray:
        """Encode one row given as raw cells (category labels for categoricals)."""
        return self.transform(self._row_to_numeric(row)[None, :], rng)[0]

    def decode(self, encoded: np.ndarray) -> tuple:
        values = self.inverse_transform(np.asarray(encoded)[None, :])[0]
        return tuple(c.categories[int(v)] if c.is_categorical else float(v) for c, v in zip(self.schema, values))

    def _row_to_numeric(self, row: Sequence) -> np.ndarray:
        if len(row) != len(self.schema):
            raise ValueError(f"expected {len(self.schema)} cells, got {len(row)}")
        out = np.empty(len(self.schema))
        for j, (col, cell) in enumerate(zip(self.schema, row)):
            if col.is_categorical:
                if str(cell) not in col.categories:
                    raise ValueError(f"unknown category {cell!r} for column {col.name!r}")
                out[j] = col.categories.index(str(cell))
            else:
                out[j] = float(cell)
        return out

    # -- conditions ----------------------------------------------------

    def time_bin(self, t: np.ndarray) -> np.ndarray:
        """Equal-width bin of ``t`` over the training time range; out-of-range values clamp."""
        t = np.asarray(t, dtype=np.float64)
        span = self.time_max - self.time_min
        if span <= 0:
            return np.zeros(t.shape, dtype=np.int64)
        b = np.floor((t - self.time_min) / span * self.time_bins).astype(np.int64)
        return np.clip(b, 0, self.time_bins - 1)

    def condition_cells(self, data: np.ndarray, times: np.ndarray, events: np.ndarray, rng=None) -> np.ndarray:
        """Integer condition cells ``(modes..., time_bin, E)`` with shape ``(N, m + 2)``."""
        modes = self.modes(data, rng)
        return np.column_stack([modes, self.time_bin(times), np.asarray(events, dtype=np.int64)])

    def cells_to_conditions(self, cells: np.ndarray) -> np.ndarray:
        cells = np.atleast_2d(np.asarray(cells, dtype=np.int64))
        out = np.zeros((cells.shape[0], self.condition_dim))
        rows = np.arange(cells.shape[0])
        for j, block in enumerate(self.condition_blocks):
            if np.any(cells[:, j] < 0) or np.any(cells[:, j] >= block.width):
                raise ValueError(f"condition index out of range for block {block.column!r}")
            out[rows, block.start + cells[:, j]] = 1.0
        return out

    def conditions(self, data: np.ndarray, times: np.ndarray, events: np.ndarray, rng=None) -> np.ndarray:
        return self.cells_to_conditions(self.condition_cells(data, times, events, rng))

    def class_encode(self, row: Sequence, t: float, event: int, rng=None) -> np.ndarray:
        numeric = self._row_to_numeric(row)[None, :]
        return self.conditions(numeric, np.array([t]), np.array([event]), rng)[0]

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": [c.to_dict() for c in self.schema],
            "gmms": {
                name: {"weights": list(g.weights), "means": list(g.means), "stds": list(g.stds), "max_components": g.max_components}
                for name, g in self.gmms.items()
            },
            "time_min": self.time_min,
            "time_max": self.time_max,
            "time_bins": self.time_bins,
            "sample_modes": self.sample_modes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Codec":
        gmms = {
            name: GmmSpec(tuple(g["weights"]), tuple(g["means"]), tuple(g["stds"]), g.get("max_components", 10))
            for name, g in d["gmms"].items()
        }
        schema = [ColumnSchema.from_dict(c) for c in d["schema"]]
        return cls(schema, gmms, d["time_min"], d["time_max"], d["time_bins"], d.get("sample_modes", False))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Codec":
        return cls.from_dict(json.loads(text))


def fit_codec(
    train: SurvivalDataset,
    max_components: int = 10,
    seed: int = 0,
    time_bins: int = 10,
    sample_modes: bool = False,
) -> Codec:
    if train.n == 0:
        raise ValueError("cannot fit a codec on an empty dataset")
    gmms = {}
    for j, col in enumerate(train.schema):
        if not col.is_categorical:
            gmms[col.name] = fit_gmm(train.data[:, j], max_components, seed + j)
    return Codec(train.schema, gmms, float(train.times.min()), float(train.times.max()), time_bins, sample_modes)
