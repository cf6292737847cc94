"""End-to-end fitting and sampling of the survival generator.

Training runs four stages in order: codec, conditional GAN, survival
network, time regressor. Generation draws a condition cell (from the
sampler or the caller), produces covariates with the generator, scores them
with the survival network and asks the regressor for a time.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from .codec import Codec, fit_codec
from .dataset import ColumnSchema, SurvivalDataset
from .gan import (
    SAMPLER_MODES,
    ConditionalGan,
    GanConfig,
    ImbalancedSampler,
    build_gan,
    generate_covariates,
    train_gan,
)
from .nn import load_checkpoint, save_checkpoint
from .survival_net import DeepHitConfig, HorizonGrid, SurvivalNet, build_survival_net, fit_survival_function
from .time_regressor import GbtConfig, TimeRegressor, train_time_regressor

log = logging.getLogger(__name__)

GENERATION_BATCH = 512
STAGES = ("codec", "gan", "survival", "regressor")
ABLATIONS = ("no-time-regressor", "no-imbalanced-sampling", "censoring-only-sampling", "no-conditional-gan")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


@dataclass
class CodecConfig:
    max_components: int = 10
    time_bins: int = 10
    sample_modes: bool = False


def _build(cls, d: Mapping | None):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class PipelineConfig:
    codec: CodecConfig = field(default_factory=CodecConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    survival: DeepHitConfig = field(default_factory=DeepHitConfig)
    regressor: GbtConfig = field(default_factory=GbtConfig)
    sampler: str = "full"
    no_time_regressor: bool = False
    no_conditional_gan: bool = False

    def __post_init__(self):
        if self.sampler not in SAMPLER_MODES:
            raise ValueError(f"sampler must be one of {SAMPLER_MODES}, got {self.sampler!r}")
        if self.no_conditional_gan:
            self.gan.conditional = False

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "PipelineConfig":
        d = dict(d or {})
        out = cls(
            codec=_build(CodecConfig, d.pop("codec", None)),
            gan=_build(GanConfig, d.pop("gan", None)),
            survival=_build(DeepHitConfig, d.pop("survival", None)),
            regressor=_build(GbtConfig, d.pop("regressor", None)),
            **{k: d.pop(k) for k in ("sampler", "no_time_regressor", "no_conditional_gan") if k in d},
        )
        if d:
            raise ValueError(f"unknown pipeline keys: {sorted(d)}")
        return out

    def to_dict(self) -> dict:
        return {
            "codec": dict(vars(self.codec)),
            "gan": self.gan.to_dict(),
            "survival": self.survival.to_dict(),
            "regressor": self.regressor.to_dict(),
            "sampler": self.sampler,
            "no_time_regressor": self.no_time_regressor,
            "no_conditional_gan": self.no_conditional_gan,
        }

    def with_ablation(self, name: str | None) -> "PipelineConfig":
        """Copy of this config with one named ablation switched on."""
        cfg = PipelineConfig.from_dict(self.to_dict())
        if name is None:
            return cfg
        if name == "no-time-regressor":
            cfg.no_time_regressor = True
        elif name == "no-imbalanced-sampling":
            cfg.sampler = "uniform"
        elif name == "censoring-only-sampling":
            cfg.sampler = "censoring_only"
        elif name == "no-conditional-gan":
            cfg.no_conditional_gan = True
            cfg.gan.conditional = False
        else:
            raise ValueError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")
        return cfg


@dataclass
class SurvivalGanModel:
    config: PipelineConfig
    codec: Codec
    sampler: ImbalancedSampler
    gan: ConditionalGan
    survival: SurvivalNet
    regressor: TimeRegressor | None
    train_time_max: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def schema(self) -> tuple[ColumnSchema, ...]:
        return self.codec.schema


def stage_seeds(seed: int) -> dict[str, int]:
    """Independent integer seeds per stage derived from one root seed."""
    children = np.random.SeedSequence(seed).spawn(len(STAGES))
    return {name: int(c.generate_state(1)[0]) for name, c in zip(STAGES, children)}


def fit(train: SurvivalDataset, config: PipelineConfig | None = None, seed: int = 0) -> SurvivalGanModel:
    """Fit codec, GAN, survival network and time regressor, in that order."""
    config = config or PipelineConfig()
    seeds = stage_seeds(seed)
    diag: dict = {"seeds": seeds}

    def run(stage, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as exc:
            raise StageError(stage, exc) from exc
        diag.setdefault("seconds", {})[stage] = time.perf_counter() - t0
        log.info("stage %s done in %.1fs", stage, diag["seconds"][stage])
        return out

    cc = config.codec
    codec = run("codec", lambda: fit_codec(train, cc.max_components, seeds["codec"], cc.time_bins, cc.sample_modes))
    mode_rng = np.random.default_rng(seeds["codec"]) if cc.sample_modes else None
    cells = codec.condition_cells(train.data, train.times, train.events, mode_rng)
    sampler = ImbalancedSampler.fit(cells, codec.time_bins, config.sampler)

    def fit_gan():
        encoded = codec.transform(train.data, mode_rng)
        conditions = codec.cells_to_conditions(cells) if config.gan.conditional else None
        return train_gan(encoded, conditions, codec.blocks, config.gan, seeds["gan"])

    gan = run("gan", fit_gan)
    survival = run("survival", lambda: fit_survival_function(train, codec, config.survival, seeds["survival"]))
    regressor = None
    if not config.no_time_regressor:
        regressor = run(
            "regressor", lambda: train_time_regressor(train, codec, survival, config.regressor, seeds["regressor"])
        )
    diag["gan_final"] = gan.history[-1] if gan.history else {}
    diag["survival_epochs"] = len(survival.history)
    if regressor is not None:
        diag["regressor_train_mse"] = regressor.model.train_loss[-1]
    return SurvivalGanModel(config, codec, sampler, gan, survival, regressor, float(train.times.max()), diag)


# generation


def parse_condition(codec: Codec, key: str, value) -> tuple[int, int]:
    """Map a user condition such as ``E=1``, ``time_bin=3`` or ``sex=F`` to a pinned cell column."""
    m = len(codec.schema)
    if key in ("E", "event"):
        v = int(value)
        if v not in (0, 1):
            raise ValueError(f"event condition must be 0 or 1, got {value!r}")
        return m + 1, v
    if key in ("time_bin", "T"):
        v = int(value)
        if not 0 <= v < codec.time_bins:
            raise ValueError(f"time bin must be in [0, {codec.time_bins}), got {value!r}")
        return m, v
    names = [c.name for c in codec.schema]
    if key not in names:
        raise ValueError(f"unknown condition key {key!r}")
    j = names.index(key)
    col = codec.schema[j]
    if col.is_categorical:
        if str(value) in col.categories:
            return j, col.categories.index(str(value))
        v = int(value)
    else:
        v = int(value)
    width = codec.condition_blocks[j].width
    if not 0 <= v < width:
        raise ValueError(f"condition index for {key!r} must be in [0, {width}), got {value!r}")
    return j, v


def sample_times_from_pmf(curves: np.ndarray, grid: HorizonGrid, rng: np.random.Generator) -> np.ndarray:
    """Draw a bin from each curve's implied mass function, then a uniform time inside the bin."""
    g = grid.array
    surv = np.concatenate([np.ones((len(curves), 1)), curves], axis=1)
    pmf = np.clip(-np.diff(surv, axis=1), 0.0, None)
    # leftover mass past the last grid point lands on the last bin
    pmf[:, -1] += np.clip(curves[:, -1], 0.0, None)
    cdf = np.cumsum(pmf, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random((len(curves), 1))
    k = np.minimum((cdf < u).sum(axis=1), len(g) - 1)
    lo = g[k]
    hi = np.where(k + 1 < len(g), g[np.minimum(k + 1, len(g) - 1)], g[-1])
    return lo + (hi - lo) * rng.random(len(curves))


def generate(
    model: SurvivalGanModel,
    m: int,
    rng: np.random.Generator,
    conditions: np.ndarray | None = None,
    fixed: Mapping[int, int] | None = None,
) -> SurvivalDataset:
    """Sample ``m`` synthetic rows.

    ``conditions`` optionally supplies explicit integer cells of shape
    ``(m, n_columns + 2)``; ``fixed`` pins individual cell columns and leaves
    the rest to the sampler.
    """
    if m < 0:
        raise ValueError("row count must be non-negative")
    codec = model.codec
    if m == 0:
        return SurvivalDataset.empty(codec.schema)
    if conditions is not None:
        cells = np.asarray(conditions, dtype=np.int64)
        if cells.shape != (m, len(codec.schema) + 2):
            raise ValueError(f"explicit conditions must have shape {(m, len(codec.schema) + 2)}, got {cells.shape}")
    else:
        cells = model.sampler.sample(rng, m, dict(fixed or {}))
    events = cells[:, -1]
    pinned = {
        col: value for col, value in dict(fixed or {}).items() if col < len(codec.schema) and codec.schema[col].kind == "categorical"
    }
    data, times = [], []
    for start in range(0, m, GENERATION_BATCH):
        sl = slice(start, min(start + GENERATION_BATCH, m))
        c = codec.cells_to_conditions(cells[sl]) if model.gan.conditional else None
        x_enc = generate_covariates(model.gan, c, sl.stop - sl.start, rng)
        x = codec.inverse_transform(x_enc)
        # a pinned category is a request, not a hint
        for col, value in pinned.items():
            x[:, col] = value
        # re-encode so downstream stages see hard one-hots like the training rows
        x_clean = codec.transform(x)
        curves = model.survival.predict_curves(x_clean)
        if model.regressor is None:
            t = sample_times_from_pmf(curves, model.survival.grid, rng)
        else:
            t = model.regressor.predict_time(x_clean, curves, events[sl])
        data.append(x)
        times.append(t)
    return SurvivalDataset(codec.schema, np.vstack(data), np.concatenate(times), events)


# persistence


def save_model(model: SurvivalGanModel, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": model.config.to_dict(),
        "codec": model.codec.to_dict(),
        "sampler": model.sampler.to_dict(),
        "grid": list(model.survival.grid.times),
        "gan_conditional": model.gan.conditional,
        "gan_condition_dim": model.gan.generator.condition_dim,
        "train_time_max": model.train_time_max,
    }
    _write_json(d / "model.json", meta)
    save_checkpoint(d / "gan.npz", {"generator": model.gan.generator.net, "critic": model.gan.critic.net}, model.config.gan.to_dict())
    save_checkpoint(d / "survival.npz", {"net": model.survival.net}, model.config.survival.to_dict())
    if model.regressor is not None:
        _write_json(d / "regressor.json", model.regressor.to_dict())


def load_model(directory: str | Path) -> SurvivalGanModel:
    d = Path(directory)
    meta = json.loads((d / "model.json").read_text())
    config = PipelineConfig.from_dict(meta["config"])
    codec = Codec.from_dict(meta["codec"])
    sampler = ImbalancedSampler.from_dict(meta["sampler"])
    rng = np.random.default_rng(0)
    gan = build_gan(codec.blocks, meta["gan_condition_dim"] or codec.condition_dim, config.gan, rng)
    _, states = load_checkpoint(d / "gan.npz")
    gan.generator.net.load_state_dict(states["generator"])
    gan.critic.net.load_state_dict(states["critic"])
    gan.generator.net.eval()
    gan.critic.net.eval()
    survival = build_survival_net(codec.dim, HorizonGrid(tuple(meta["grid"])), config.survival, rng)
    _, states = load_checkpoint(d / "survival.npz")
    survival.net.load_state_dict(states["net"])
    survival.net.eval()
    regressor = None
    if (d / "regressor.json").exists():
        regressor = TimeRegressor.from_dict(json.loads((d / "regressor.json").read_text()))
    return SurvivalGanModel(config, codec, sampler, gan, survival, regressor, meta["train_time_max"])


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=1))
    tmp.replace(path)
