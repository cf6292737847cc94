"""Discrete-time survival network with a likelihood + ranking loss (single risk).

The network maps a feature vector to a probability mass function over the
bins of a horizon grid. The survival curve at grid point ``i`` is
``S_i = 1 - sum_{j <= i} f_j``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codec import Codec
from .dataset import SurvivalDataset
from .nn import MLP, Adam, MlpConfig

log = logging.getLogger(__name__)

LOG_EPS = 1e-7


@dataclass(frozen=True)
class HorizonGrid:
    times: tuple[float, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("a horizon grid needs at least two strictly increasing times")
        object.__setattr__(self, "times", tuple(t.tolist()))

    @classmethod
    def from_times(cls, times: np.ndarray, n: int = 100) -> "HorizonGrid":
        lo, hi = float(np.min(times)), float(np.max(times))
        if hi <= lo:
            hi = lo + 1.0
        return cls(tuple(np.linspace(lo, hi, n).tolist()))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.times)

    def __len__(self) -> int:
        return len(self.times)

    def bin_index(self, t: np.ndarray) -> np.ndarray:
        """Rightmost grid index with ``grid[i] <= t``; times before the first point go to bin 0."""
        idx = np.searchsorted(self.array, np.asarray(t, dtype=np.float64), side="right") - 1
        return np.clip(idx, 0, len(self.times) - 1)


@dataclass
class DeepHitConfig:
    hidden: tuple[int, ...] = (300, 300)
    bins: int = 100
    batch_size: int = 100
    max_epochs: int = 2000
    patience: int = 20
    lr: float = 1e-3
    alpha: float = 0.28
    sigma: float = 0.38
    dropout: float = 0.02
    batch_norm: bool = True
    activation: str = "relu"
    validation_fraction: float = 0.1

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.bins < 2:
            raise ValueError("need at least 2 bins")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def likelihood_loss(pmf: Tensor, bins: np.ndarray, events: np.ndarray) -> Tensor:
    """``-sum_{E=1} log f(bin) - sum_{E=0} log S(bin)`` with ``S`` excluding the mass up to ``bin``."""
    pmf = ad.as_tensor(pmf)
    rows = np.arange(pmf.shape[0])
    bins = np.asarray(bins)
    events = np.asarray(events)
    surv = ad.rcumsum(pmf, axis=1) - pmf
    f_at = pmf[rows, bins]
    s_at = surv[rows, bins]
    ev = events.astype(np.float64)
    terms = ev * ad.log(f_at + LOG_EPS) + (1.0 - ev) * ad.log(s_at + LOG_EPS)
    return -terms.sum()


def acceptable_pairs(times: np.ndarray, events: np.ndarray) -> np.ndarray:
    """Mask ``[j, i]`` true when subject ``i`` had the event and ``t_i < t_j``."""
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    return (events[None, :] == 1) & (times[None, :] < times[:, None])


def ranking_loss(pmf: Tensor, bins: np.ndarray, times: np.ndarray, events: np.ndarray, sigma: float) -> tuple[Tensor, int]:
    """``sum exp(-(F_i(t_i) - F_j(t_i)) / sigma)`` over acceptable pairs, and the pair count."""
    pmf = ad.as_tensor(pmf)
    n = pmf.shape[0]
    mask = acceptable_pairs(times, events)
    n_pairs = int(mask.sum())
    if n_pairs == 0:
        return Tensor(0.0), 0
    cdf = ad.cumsum(pmf, axis=1)
    cols = cdf[:, np.asarray(bins)]  # cols[j, i] = F_j(t_i)
    own = cols[np.arange(n), np.arange(n)]  # F_i(t_i)
    diff = own.reshape(1, n) - cols
    return (ad.exp(diff * (-1.0 / sigma)) * mask.astype(np.float64)).sum(), n_pairs


def deephit_loss(pmf: Tensor, bins, times, events, alpha: float, sigma: float) -> Tensor:
    """Per-batch objective: mean likelihood term plus ``alpha`` times the mean pair term."""
    n = pmf.shape[0]
    loss = likelihood_loss(pmf, bins, events) * (1.0 / n)
    rank, n_pairs = ranking_loss(pmf, bins, times, events, sigma)
    if n_pairs:
        loss = loss + rank * (alpha / n_pairs)
    return loss


def survival_from_pmf(pmf: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - np.cumsum(pmf, axis=1), 0.0, 1.0)


class SurvivalNet:
    def __init__(self, net: MLP, grid: HorizonGrid, config: DeepHitConfig):
        self.net = net
        self.grid = grid
        self.config = config
        self.history: list[dict] = []

    def predict_pmf(self, features: np.ndarray) -> np.ndarray:
        self.net.eval()
        with ad.no_grad():
            return self.net(np.atleast_2d(features)).value

    def predict_curves(self, features: np.ndarray) -> np.ndarray:
        """``S(x, t_i)`` at every grid point; non-increasing along axis 1."""
        features = np.atleast_2d(features)
        if features.shape[0] == 0:
            return np.zeros((0, len(self.grid)))
        return np.minimum.accumulate(survival_from_pmf(self.predict_pmf(features)), axis=1)

    def survival_at(self, features: np.ndarray, horizons: np.ndarray) -> np.ndarray:
        curves = self.predict_curves(features)
        return curves[:, self.grid.bin_index(np.asarray(horizons))]


def build_survival_net(in_dim: int, grid: HorizonGrid, config: DeepHitConfig, rng: np.random.Generator) -> SurvivalNet:
    net = MLP(
        MlpConfig(
            in_dim=in_dim,
            out_dim=len(grid),
            hidden=config.hidden,
            activation=config.activation,
            output_activation="softmax",
            dropout=config.dropout,
            batch_norm=config.batch_norm,
        ),
        rng,
    )
    return SurvivalNet(net, grid, config)


def train_survival_net(
    features: np.ndarray,
    times: np.ndarray,
    events: np.ndarray,
    config: DeepHitConfig | None = None,
    seed: int = 0,
) -> SurvivalNet:
    """Fit the network with Adam and early stopping on a seeded validation split."""
    config = config or DeepHitConfig()
    features = np.asarray(features, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    n = len(times)
    if n == 0:
        raise ValueError("cannot train a survival network on an empty dataset")
    if not np.any(events == 1):
        log.warning("all subjects are censored; training on the censored likelihood term only")
    rng = np.random.default_rng(seed)
    grid = HorizonGrid.from_times(times, config.bins)
    bins = grid.bin_index(times)
    model = build_survival_net(features.shape[1], grid, config, rng)
    net = model.net
    n_val = int(round(n * config.validation_fraction))
    perm = rng.permutation(n)
    if n_val >= 1 and n - n_val >= 2:
        val, tr = perm[:n_val], perm[n_val:]
    else:
        val, tr = perm, perm
    opt = Adam(net.parameters(), lr=config.lr)
    best_loss, best_state, stale = np.inf, net.state_dict(), 0
    batch = min(config.batch_size, len(tr))

    for epoch in range(config.max_epochs):
        net.train()
        order = rng.permutation(tr)
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            if len(idx) < 2 and len(order) >= 2:
                continue
            pmf = net(features[idx], rng)
            loss = deephit_loss(pmf, bins[idx], times[idx], events[idx], config.alpha, config.sigma)
            opt.step(ad.grad(loss, opt.params))
        net.eval()
        with ad.no_grad():
            val_loss = deephit_loss(
                net(features[val]), bins[val], times[val], events[val], config.alpha, config.sigma
            ).item()
        model.history.append({"epoch": epoch, "val_loss": val_loss})
        if val_loss < best_loss - 1e-9:
            best_loss, best_state, stale = val_loss, net.state_dict(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    net.load_state_dict(best_state)
    net.eval()
    log.debug("survival net stopped after %d epochs (best val %.4f)", len(model.history), best_loss)
    return model


def fit_survival_function(train: SurvivalDataset, codec: Codec, config: DeepHitConfig | None = None, seed: int = 0) -> SurvivalNet:
    """Train on codec-encoded covariates of ``train``."""
    return train_survival_net(codec.transform(train.data), train.times, train.events, config, seed)
