"""Assemble the metric report for one synthetic dataset and aggregate over seeds."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .covariates import marginal_distances
from .dataset import SurvivalDataset
from .downstream import DOWNSTREAM_MODELS, evaluation_horizons, tstr
from .km import kaplan_meier, km_divergence, optimism, short_sightedness

METRIC_KEYS = ("optimism", "short_sightedness", "km_divergence", "jsd", "wasserstein")


def evaluate_synthetic(
    reference: SurvivalDataset,
    test: SurvivalDataset,
    synthetic: SurvivalDataset,
    models: Sequence[str] | None = None,
    n_horizons: int = 5,
    seed: int = 0,
) -> dict:
    """Survival, covariate and downstream metrics of ``synthetic`` against real data.

    ``reference`` is the real data the generator imitated (KM curves and
    covariate marginals are compared against it); ``test`` is the held-out real
    data used for the train-on-synthetic scores.
    """
    names = list(models) if models is not None else list(DOWNSTREAM_MODELS)
    unknown = [n for n in names if n not in DOWNSTREAM_MODELS]
    if unknown:
        raise ValueError(f"unknown downstream models {unknown}; known: {sorted(DOWNSTREAM_MODELS)}")
    out: dict = {"n_real": reference.n, "n_synthetic": synthetic.n}
    if synthetic.n == 0:
        out.update({k: None for k in METRIC_KEYS})
        out["failure"] = "empty synthetic dataset"
    else:
        real_km = kaplan_meier(reference.times, reference.events)
        syn_km = kaplan_meier(synthetic.times, synthetic.events)
        cov = marginal_distances(reference, synthetic)
        out.update(
            {
                "optimism": optimism(syn_km, real_km),
                "short_sightedness": short_sightedness(syn_km, real_km),
                "km_divergence": km_divergence(syn_km, real_km),
                "jsd": cov.mean_jsd,
                "wasserstein": cov.mean_wasserstein,
                "covariates": cov.to_dict()["per_feature"],
                "censoring_fraction": synthetic.censoring_fraction,
            }
        )
    horizons = evaluation_horizons(reference.times, n_horizons)
    report = tstr(
        reference,
        test,
        synthetic if synthetic.n else None,
        {n: DOWNSTREAM_MODELS[n] for n in names},
        horizons,
        seed,
    )
    out["tstr"] = report.to_dict()
    out["tstr_table"] = report.table_csv()
    return out


def _flatten(d: dict, prefix: str = "") -> dict[str, float]:
    flat = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, key + "."))
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            flat[key] = float(v)
    return flat


def summarize(values: Iterable[float]) -> dict:
    """Mean, sample standard deviation and count over the finite values."""
    vals = [v for v in values if v is not None and math.isfinite(v)]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    arr = np.array(vals)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0, "n": len(arr)}


def aggregate(per_seed: Sequence[dict]) -> dict:
    """Mean and std over seeds for every numeric leaf of the per-seed reports, skipping failed seeds."""
    flats = [_flatten(r) for r in per_seed if "error" not in r]
    keys = sorted({k for f in flats for k in f if not k.startswith("tstr.horizons")})
    return {k: summarize(f.get(k) for f in flats) for k in keys}
