"""Downstream survival models and the train-on-synthetic, test-on-real harness.

Two models are registered: a Cox proportional hazards model fitted by
Newton-Raphson on the Breslow partial likelihood, and the discrete-time
survival network from :mod:`survgan.survival_net`. Both are scored by
Harrell's C-index and an IPCW Brier score at a set of horizons.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import ColumnSchema, SurvivalDataset
from .km import kaplan_meier
from .survival_net import DeepHitConfig, train_survival_net

log = logging.getLogger(__name__)

N_HORIZONS = 5
# larger coefficients on standardized inputs only arise from separation
MAX_ABS_BETA = 10.0


class CoxWarning(UserWarning):
    pass


# design matrix


@dataclass(frozen=True)
class DesignEncoder:
    """Standardized continuous columns plus dummy-coded categoricals (first level dropped)."""

    schema: tuple[ColumnSchema, ...]
    means: np.ndarray
    stds: np.ndarray

    @classmethod
    def fit(cls, ds: SurvivalDataset) -> "DesignEncoder":
        means = np.zeros(ds.m)
        stds = np.ones(ds.m)
        for j, col in enumerate(ds.schema):
            if col.kind == "continuous":
                means[j] = ds.data[:, j].mean()
                sd = ds.data[:, j].std()
                stds[j] = sd if sd > 0 else 1.0
        return cls(tuple(ds.schema), means, stds)

    def transform(self, data: np.ndarray) -> np.ndarray:
        cols = []
        for j, col in enumerate(self.schema):
            if col.kind == "continuous":
                cols.append(((data[:, j] - self.means[j]) / self.stds[j])[:, None])
            else:
                idx = data[:, j].astype(np.int64)
                cols.append(np.eye(len(col.categories))[idx][:, 1:])
        return np.hstack(cols) if cols else np.zeros((len(data), 0))


# Cox model


def _breslow_terms(x: np.ndarray, times: np.ndarray, events: np.ndarray, beta: np.ndarray, hessian: bool = True):
    """Partial log-likelihood, gradient and Hessian with Breslow tie handling."""
    order = np.argsort(-times, kind="stable")
    x, t, e = x[order], times[order], events[order].astype(np.float64)
    eta = x @ beta
    shift = eta.max() if eta.size else 0.0
    w = np.exp(eta - shift)
    s0 = np.cumsum(w)
    s1 = np.cumsum(w[:, None] * x, axis=0)
    # every subject tied at a time shares the risk set of the last one in the group
    last = np.searchsorted(-t, -t, side="right") - 1
    s0, s1 = s0[last], s1[last]
    mean_x = s1 / s0[:, None]
    loglik = float(np.sum(e * (eta - shift - np.log(s0))))
    grad = np.sum(e[:, None] * (x - mean_x), axis=0)
    if not hessian:
        return loglik, grad, None
    s2 = np.cumsum(w[:, None, None] * x[:, :, None] * x[:, None, :], axis=0)[last]
    cov = s2 / s0[:, None, None] - mean_x[:, :, None] * mean_x[:, None, :]
    hess = -np.sum(e[:, None, None] * cov, axis=0)
    return loglik, grad, hess


def _newton(x, times, events, penalty: float, max_iter: int, tol: float):
    p = x.shape[1]
    beta = np.zeros(p)

    def objective(b, hessian=True):
        ll, g, h = _breslow_terms(x, times, events, b, hessian)
        ll -= 0.5 * penalty * b @ b
        g = g - penalty * b
        if h is not None:
            h = h - penalty * np.eye(p)
        return ll, g, h

    ll, g, h = objective(beta)
    for it in range(max_iter):
        if np.linalg.norm(g) < tol:
            return beta, True, it
        try:
            step = np.linalg.solve(-h, g)
        except np.linalg.LinAlgError:
            return beta, False, it
        if not np.all(np.isfinite(step)):
            return beta, False, it
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            ll_c = objective(cand, hessian=False)[0]
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12:
                break
            scale *= 0.5
        else:
            return beta, False, it
        beta = cand
        ll, g, h = objective(beta)
    return beta, bool(np.linalg.norm(g) < tol), max_iter


@dataclass
class CoxModel:
    beta: np.ndarray
    baseline_times: np.ndarray
    baseline_hazard: np.ndarray
    encoder: DesignEncoder | None = None
    penalty: float = 0.0
    converged: bool = True

    def linear_predictor(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.beta

    def cumulative_baseline(self, t) -> np.ndarray:
        idx = np.searchsorted(self.baseline_times, np.asarray(t, dtype=np.float64), side="right") - 1
        return np.where(idx >= 0, self.baseline_hazard[np.clip(idx, 0, None)], 0.0)

    def survival_at(self, x: np.ndarray, horizons) -> np.ndarray:
        """``S(h | x) = exp(-H0(h) exp(x beta))`` for each row and horizon."""
        h0 = self.cumulative_baseline(np.atleast_1d(horizons))
        return np.exp(-np.outer(np.exp(self.linear_predictor(x)), h0))


def fit_cox(
    x: np.ndarray,
    times: np.ndarray,
    events: np.ndarray,
    max_iter: int = 50,
    tol: float = 1e-8,
    ridge: float = 1e-4,
) -> CoxModel:
    """Maximize the Breslow partial likelihood; falls back to a small ridge penalty when Newton fails."""
    x = np.asarray(x, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(times) or len(times) != len(events):
        raise ValueError("x, times and events must be aligned")
    if not np.any(events == 1):
        raise ValueError("cannot fit a Cox model without events")
    penalty = 0.0
    beta, ok, _ = _newton(x, times, events, 0.0, max_iter, tol)
    if not ok or not np.all(np.isfinite(beta)) or np.abs(beta).max(initial=0.0) > MAX_ABS_BETA:
        warnings.warn(f"Cox fit did not converge; refitting with ridge penalty {ridge}", CoxWarning, stacklevel=2)
        penalty = ridge
        beta, ok, _ = _newton(x, times, events, ridge, max_iter, tol)
    bt, bh = breslow_baseline(x, times, events, beta)
    return CoxModel(beta, bt, bh, penalty=penalty, converged=ok)


def breslow_baseline(x, times, events, beta) -> tuple[np.ndarray, np.ndarray]:
    """Breslow cumulative baseline hazard at each distinct event time."""
    w = np.exp(np.asarray(x) @ beta)
    uniq = np.unique(times[events == 1])
    d = np.array([np.sum((times == u) & (events == 1)) for u in uniq], dtype=np.float64)
    order = np.argsort(times)
    ts, ws = times[order], w[order]
    tail = np.cumsum(ws[::-1])[::-1]
    risk = tail[np.searchsorted(ts, uniq, side="left")]
    return uniq, np.cumsum(d / risk)


# scoring


def c_index(times, events, risk_scores) -> float:
    """Harrell's C over pairs with ``E_i = 1`` and ``t_i < t_j``; ties in risk count one half."""
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    risk = np.asarray(risk_scores, dtype=np.float64)
    if not (times.shape == events.shape == risk.shape):
        raise ValueError("times, events and risk scores must be aligned")
    concordant, pairs = 0.0, 0
    for start in range(0, len(times), 1024):
        i = np.arange(start, min(start + 1024, len(times)))
        comparable = (events[i, None] == 1) & (times[i, None] < times[None, :])
        diff = risk[i, None] - risk[None, :]
        concordant += np.sum(comparable & (diff > 0)) + 0.5 * np.sum(comparable & (diff == 0))
        pairs += int(comparable.sum())
    if pairs == 0:
        raise ValueError("no comparable pairs")
    return float(concordant / pairs)


def brier_score(times, events, surv_at_h, horizon: float, censor_curve=None) -> float:
    """Inverse-probability-of-censoring weighted Brier score at one horizon.

    Events at or before ``h`` are weighted by ``1 / G(t_i)``, subjects still at
    risk by ``1 / G(h)``, and subjects censored before ``h`` get weight zero.
    ``G`` is the Kaplan-Meier estimate of the censoring distribution.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    pred = np.asarray(surv_at_h, dtype=np.float64)
    if np.any(pred < 0) or np.any(pred > 1):
        raise ValueError("survival predictions must lie in [0, 1]")
    g = censor_curve or kaplan_meier(times, 1 - events)
    died = (times <= horizon) & (events == 1)
    alive = times > horizon
    g_t = g(times)
    g_h = float(g(horizon))
    weights = np.zeros_like(times)
    bad = (died & (g_t <= 0)) | (alive & (g_h <= 0))
    if np.any(bad):
        log.warning("dropping %d subjects with zero censoring survival", int(bad.sum()))
    ok_d = died & (g_t > 0)
    weights[ok_d] = 1.0 / g_t[ok_d]
    if g_h > 0:
        weights[alive] = 1.0 / g_h
    target = alive.astype(np.float64)
    n = len(times) - int(bad.sum())
    return float(np.sum(weights * (target - pred) ** 2) / max(n, 1))


def evaluation_horizons(times, n: int = N_HORIZONS) -> np.ndarray:
    """``n`` evenly spaced interior points of ``[min t, max t]``."""
    times = np.asarray(times, dtype=np.float64)
    return np.linspace(times.min(), times.max(), n + 2)[1:-1]


# TSTR harness


class SurvivalPredictor:
    """Anything with ``survival_at(dataset_rows, horizons) -> (N, H)``."""

    def survival_at(self, data: np.ndarray, horizons: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def risk_at(self, data: np.ndarray, horizons: np.ndarray) -> np.ndarray:
        """Risk score per horizon; any increasing transform of ``1 - S(h | x)`` ranks identically."""
        return 1.0 - self.survival_at(data, horizons)


@dataclass
class _CoxPredictor(SurvivalPredictor):
    model: CoxModel
    encoder: DesignEncoder

    def survival_at(self, data, horizons):
        return self.model.survival_at(self.encoder.transform(data), horizons)

    def risk_at(self, data, horizons):
        # log cumulative hazard, which does not saturate the way 1 - S does
        eta = self.model.linear_predictor(self.encoder.transform(data))
        h0 = self.model.cumulative_baseline(np.atleast_1d(horizons))
        return eta[:, None] + np.log(np.maximum(h0, 1e-300))[None, :]


@dataclass
class _NetPredictor(SurvivalPredictor):
    net: object
    encoder: DesignEncoder

    def survival_at(self, data, horizons):
        return self.net.survival_at(self.encoder.transform(data), horizons)


def train_cox(train: SurvivalDataset, seed: int = 0) -> SurvivalPredictor:
    enc = DesignEncoder.fit(train)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoxWarning)
        model = fit_cox(enc.transform(train.data), train.times, train.events)
    return _CoxPredictor(model, enc)


def make_net_trainer(config: DeepHitConfig | None = None) -> Callable[[SurvivalDataset, int], SurvivalPredictor]:
    def train(ds: SurvivalDataset, seed: int = 0) -> SurvivalPredictor:
        enc = DesignEncoder.fit(ds)
        net = train_survival_net(enc.transform(ds.data), ds.times, ds.events, config, seed)
        return _NetPredictor(net, enc)

    return train


DOWNSTREAM_MODELS: dict[str, Callable[..., SurvivalPredictor]] = {
    "cox": train_cox,
    "deephit": make_net_trainer(DeepHitConfig(max_epochs=200, patience=10)),
}


@dataclass
class ModelScores:
    c_index: list[float] = field(default_factory=list)
    brier: list[float] = field(default_factory=list)
    failure: str | None = None

    @property
    def mean_c_index(self) -> float:
        return float(np.mean(self.c_index)) if self.c_index else float("nan")

    @property
    def mean_brier(self) -> float:
        return float(np.mean(self.brier)) if self.brier else float("nan")

    def to_dict(self) -> dict:
        if self.failure is not None:
            return {"failure": self.failure}
        return {
            "c_index": self.mean_c_index,
            "brier": self.mean_brier,
            "c_index_per_horizon": list(self.c_index),
            "brier_per_horizon": list(self.brier),
        }


@dataclass
class TstrReport:
    horizons: list[float]
    synthetic: dict[str, ModelScores]
    original: dict[str, ModelScores]

    def best(self, which: str = "synthetic") -> dict[str, float]:
        rows = [s for s in getattr(self, which).values() if s.failure is None]
        if not rows:
            return {"c_index": float("nan"), "brier": float("nan")}
        return {"c_index": max(s.mean_c_index for s in rows), "brier": min(s.mean_brier for s in rows)}

    def to_dict(self) -> dict:
        return {
            "horizons": list(self.horizons),
            "synthetic": {k: v.to_dict() for k, v in self.synthetic.items()},
            "original": {k: v.to_dict() for k, v in self.original.items()},
            "best": self.best("synthetic"),
            "best_original": self.best("original"),
        }

    def table_csv(self) -> str:
        lines = ["source,model,c_index,brier"]
        for source in ("original", "synthetic"):
            for name, s in getattr(self, source).items():
                if s.failure is not None:
                    lines.append(f"{source},{name},*,*")
                else:
                    lines.append(f"{source},{name},{s.mean_c_index:.6f},{s.mean_brier:.6f}")
        return "\n".join(lines) + "\n"


def score_predictor(predictor: SurvivalPredictor, test: SurvivalDataset, horizons: np.ndarray) -> ModelScores:
    surv = np.clip(predictor.survival_at(test.data, horizons), 0.0, 1.0)
    risk = predictor.risk_at(test.data, horizons)
    g = kaplan_meier(test.times, 1 - test.events)
    scores = ModelScores()
    for k, h in enumerate(horizons):
        scores.c_index.append(c_index(test.times, test.events, risk[:, k]))
        scores.brier.append(brier_score(test.times, test.events, surv[:, k], float(h), g))
    return scores


def evaluate_model(train_fn, train: SurvivalDataset | None, test: SurvivalDataset, horizons, seed: int) -> ModelScores:
    """Fit and score one model; any failure is recorded instead of raised."""
    if train is None or train.n == 0:
        return ModelScores(failure="empty training data")
    try:
        return score_predictor(train_fn(train, seed), test, horizons)
    except Exception as exc:  # noqa: BLE001 - failures become table entries
        log.warning("downstream model failed: %s", exc)
        return ModelScores(failure=f"{type(exc).__name__}: {exc}")


def tstr(
    real_train: SurvivalDataset,
    real_test: SurvivalDataset,
    synthetic: SurvivalDataset | None,
    models: dict[str, Callable[..., SurvivalPredictor]] | None = None,
    horizons=None,
    seed: int = 0,
) -> TstrReport:
    """Fit every model on synthetic data and on ``real_train``; score both on ``real_test``."""
    models = DOWNSTREAM_MODELS if models is None else models
    if horizons is None:
        horizons = evaluation_horizons(real_train.times)
    horizons = np.asarray(horizons, dtype=np.float64)
    syn = {name: evaluate_model(fn, synthetic, real_test, horizons, seed) for name, fn in models.items()}
    orig = {name: evaluate_model(fn, real_train, real_test, horizons, seed) for name, fn in models.items()}
    return TstrReport([float(h) for h in horizons], syn, orig)
