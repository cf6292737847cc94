"""Synthetic Weibull survival data with a known generating process."""

from __future__ import annotations

import numpy as np

from .dataset import ColumnSchema, SurvivalDataset

TOY_SCHEMA = (ColumnSchema("x1", "continuous"), ColumnSchema("x2", "categorical", ("a", "b")))
SHAPE = 1.5
BASE_SCALE = 10.0
LOG_SCALE_EFFECT = (-0.8, 0.8)
# censoring rate giving roughly half censored subjects
CENSOR_RATE = 0.058


def weibull_toy(n: int, seed: int = 0, censor_rate: float = CENSOR_RATE) -> SurvivalDataset:
    """``x1 ~ N(0, 1)``, ``x2 ~ Bernoulli(0.5)``; ``T ~ Weibull(1.5, scale(x))`` with independent exponential censoring.

    ``log scale(x) = log(10) - 0.8 x1 + 0.8 x2``.
    """
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    x2 = rng.integers(0, 2, n)
    scale = BASE_SCALE * np.exp(LOG_SCALE_EFFECT[0] * x1 + LOG_SCALE_EFFECT[1] * x2)
    t_event = scale * rng.weibull(SHAPE, n)
    t_cens = rng.exponential(1.0 / censor_rate, n) if censor_rate > 0 else np.full(n, np.inf)
    times = np.minimum(t_event, t_cens)
    events = (t_event <= t_cens).astype(np.int64)
    return SurvivalDataset(TOY_SCHEMA, np.column_stack([x1, x2]), times, events)
