"""Conditional WGAN-GP over encoded covariates and the condition-cell sampler."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codec import Block
from .nn import MLP, Adam, MlpConfig

log = logging.getLogger(__name__)

SAMPLER_MODES = ("full", "censoring_only", "uniform")


class TrainingError(RuntimeError):
    def __init__(self, iteration: int, message: str):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")


@dataclass
class GanConfig:
    latent_dim: int = 50
    generator_hidden: tuple[int, ...] = (250, 250, 250)
    generator_activation: str = "tanh"
    generator_dropout: float = 0.1
    generator_batch_norm: bool = True
    discriminator_hidden: tuple[int, ...] = (250, 250)
    discriminator_activation: str = "leaky_relu"
    discriminator_dropout: float = 0.1
    lr: float = 1e-3
    weight_decay: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    ema_decay: float = 0.0
    batch_size: int = 500
    iterations: int = 1500
    gp_lambda: float = 10.0
    critic_steps: int = 1
    conditional: bool = True

    def __post_init__(self):
        self.generator_hidden = tuple(self.generator_hidden)
        self.discriminator_hidden = tuple(self.discriminator_hidden)
        if self.gp_lambda < 0:
            raise ValueError("gradient penalty weight must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0, 1)")
        if self.critic_steps < 1 or self.iterations < 0 or self.latent_dim < 1:
            raise ValueError(f"invalid GAN schedule: {self}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator_hidden"] = list(self.generator_hidden)
        d["discriminator_hidden"] = list(self.discriminator_hidden)
        return d


class Generator:
    """MLP from ``[z, C]`` to an encoded row; one-hot blocks pass through a softmax."""

    def __init__(self, blocks: Sequence[Block], condition_dim: int, config: GanConfig, rng: np.random.Generator):
        self.blocks = list(blocks)
        self.out_dim = max(b.stop for b in self.blocks)
        self.condition_dim = condition_dim if config.conditional else 0
        self.latent_dim = config.latent_dim
        self.net = MLP(
            MlpConfig(
                in_dim=config.latent_dim + self.condition_dim,
                out_dim=self.out_dim,
                hidden=config.generator_hidden,
                activation=config.generator_activation,
                dropout=config.generator_dropout,
                batch_norm=config.generator_batch_norm,
            ),
            rng,
        )

    def __call__(self, z: np.ndarray, conditions: np.ndarray | None, rng=None) -> Tensor:
        inputs = z if not self.condition_dim else np.concatenate([z, conditions], axis=1)
        raw = self.net(inputs, rng)
        parts = []
        for b in self.blocks:
            piece = raw[:, b.start:b.stop]
            parts.append(ad.softmax(piece, axis=1) if b.kind == "onehot" else piece)
        return ad.concat(parts, axis=1)


class Critic:
    """Wasserstein critic on ``[x, C]``; no batch norm, so the gradient penalty stays per-sample."""

    def __init__(self, data_dim: int, condition_dim: int, config: GanConfig, rng: np.random.Generator):
        self.condition_dim = condition_dim if config.conditional else 0
        self.net = MLP(
            MlpConfig(
                in_dim=data_dim + self.condition_dim,
                out_dim=1,
                hidden=config.discriminator_hidden,
                activation=config.discriminator_activation,
                dropout=config.discriminator_dropout,
            ),
            rng,
        )

    def __call__(self, x, conditions: np.ndarray | None, rng=None) -> Tensor:
        if self.condition_dim:
            x = ad.concat([ad.as_tensor(x), Tensor(conditions)], axis=1)
        return self.net(x, rng)


def gradient_penalty(critic: Callable[[Tensor], Tensor], interpolates: np.ndarray, lam: float) -> tuple[Tensor, np.ndarray]:
    """``lam * mean((||grad_x critic(x)||_2 - 1)^2)`` at ``interpolates``, kept differentiable.

    Also returns the per-row gradient norms for diagnostics.
    """
    x = Tensor(interpolates, requires_grad=True)
    scores = critic(x)
    (g,) = ad.grad(scores.sum(), [x], create_graph=True)
    norms = ad.sqrt((g * g).sum(axis=1) + 1e-12)
    dev = norms - 1.0
    return lam * (dev * dev).mean(), norms.value.copy()


@dataclass
class ConditionalGan:
    generator: Generator
    critic: Critic
    config: GanConfig
    history: list[dict] = field(default_factory=list)

    @property
    def conditional(self) -> bool:
        return self.config.conditional


def build_gan(blocks: Sequence[Block], condition_dim: int, config: GanConfig, rng: np.random.Generator) -> ConditionalGan:
    gen = Generator(blocks, condition_dim, config, rng)
    critic = Critic(gen.out_dim, condition_dim, config, rng)
    return ConditionalGan(gen, critic, config)


def train_gan(
    encoded: np.ndarray,
    conditions: np.ndarray | None,
    blocks: Sequence[Block],
    config: GanConfig,
    seed: int = 0,
    log_every: int = 100,
    callback: Callable[[int, ConditionalGan], None] | None = None,
) -> ConditionalGan:
    """Alternate critic and generator updates of the conditional WGAN-GP.

    The critic loss is ``D(C, G(C, z)) - D(C, x) + lam * (||grad D(C, x~)|| - 1)^2``
    with ``x~ = eps * x + (1 - eps) * G(C, z)`` and one ``eps ~ U[0, 1]`` per row;
    the generator loss is ``-D(C, G(C, z))``.
    """
    encoded = np.asarray(encoded, dtype=np.float64)
    n = encoded.shape[0]
    if n == 0:
        raise ValueError("cannot train a GAN on an empty dataset")
    if config.conditional:
        if conditions is None or len(conditions) != n:
            raise ValueError("conditional GAN needs one condition vector per row")
        conditions = np.asarray(conditions, dtype=np.float64)
        cond_dim = conditions.shape[1]
    else:
        cond_dim = 0
    rng = np.random.default_rng(seed)
    gan = build_gan(blocks, cond_dim, config, rng)
    gen, critic = gan.generator, gan.critic
    betas = {"beta1": config.beta1, "beta2": config.beta2}
    opt_g = Adam(gen.net.parameters(), lr=config.lr, weight_decay=config.weight_decay, **betas)
    opt_d = Adam(critic.net.parameters(), lr=config.lr, weight_decay=config.weight_decay, **betas)
    d_params, g_params = opt_d.params, opt_g.params
    # Polyak average of the generator weights, swapped in at the end when enabled
    shadow = [p.value.copy() for p in g_params] if config.ema_decay > 0 else None
    batch = min(config.batch_size, n)
    gen.net.train()
    critic.net.train()

    for it in range(config.iterations):
        try:
            for _ in range(config.critic_steps):
                idx = rng.choice(n, size=batch, replace=False)
                x_real = encoded[idx]
                c = conditions[idx] if config.conditional else None
                z = rng.standard_normal((batch, config.latent_dim))
                with ad.no_grad():
                    x_fake = gen(z, c, rng).value
                eps = rng.random((batch, 1))
                interp = eps * x_real + (1.0 - eps) * x_fake
                gp, norms = gradient_penalty(lambda x: critic(x, c, rng), interp, config.gp_lambda)
                wdist = critic(x_fake, c, rng).mean() - critic(x_real, c, rng).mean()
                d_loss = wdist + gp
                opt_d.step(ad.grad(d_loss, d_params))

            z = rng.standard_normal((batch, config.latent_dim))
            g_loss = -critic(gen(z, c, rng), c, rng).mean()
            opt_g.step(ad.grad(g_loss, g_params))
            if shadow is not None:
                a = config.ema_decay
                for sh, p in zip(shadow, g_params):
                    sh *= a
                    sh += (1.0 - a) * p.value
        except ad.NonFiniteError as exc:
            raise TrainingError(it, str(exc)) from exc
        record = {
            "iteration": it,
            "d_loss": d_loss.item(),
            "g_loss": g_loss.item(),
            "gradient_penalty": gp.item(),
            "grad_norm_mean": float(norms.mean()),
        }
        if not all(np.isfinite(v) for v in record.values()):
            raise TrainingError(it, "non-finite loss")
        gan.history.append(record)
        if log_every and (it % log_every == 0 or it == config.iterations - 1):
            log.debug("gan it=%d d=%.4f g=%.4f gp=%.4f", it, record["d_loss"], record["g_loss"], record["gradient_penalty"])
        if callback is not None:
            callback(it, gan)
            gen.net.train()
            critic.net.train()
    if shadow is not None:
        for sh, p in zip(shadow, g_params):
            p.value = sh
    gen.net.eval()
    critic.net.eval()
    return gan


def generate_covariates(gan: ConditionalGan, conditions: np.ndarray | None, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` encoded rows ``G(C, z)`` with ``z ~ N(0, I)`` (inference mode)."""
    gen = gan.generator
    if n == 0:
        return np.zeros((0, gen.out_dim))
    if gen.condition_dim and (conditions is None or len(conditions) != n):
        raise ValueError("conditional generator needs one condition vector per row")
    gen.net.eval()
    z = rng.standard_normal((n, gen.latent_dim))
    with ad.no_grad():
        return gen(z, conditions if gen.condition_dim else None).value


def write_history_csv(history: Sequence[dict], path: str | Path) -> None:
    if not history:
        return
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0]))
        writer.writeheader()
        writer.writerows(history)
    tmp.replace(path)


class ImbalancedSampler:
    """Categorical distribution over observed condition cells ``(modes..., time_bin, E)``.

    ``mode="full"`` draws cells with their training frequencies,
    ``"censoring_only"`` does the same but redraws the time bin uniformly,
    and ``"uniform"`` puts equal mass on every observed cell.
    """

    def __init__(self, cells: np.ndarray, counts: np.ndarray, time_bins: int, mode: str = "full"):
        if mode not in SAMPLER_MODES:
            raise ValueError(f"unknown sampler mode {mode!r}")
        self.cells = np.asarray(cells, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.time_bins = int(time_bins)
        self.mode = mode
        freq = self.counts / self.counts.sum()
        if mode == "uniform":
            self.probs = np.full(len(self.cells), 1.0 / len(self.cells))
        else:
            self.probs = freq

    @classmethod
    def fit(cls, row_cells: np.ndarray, time_bins: int, mode: str = "full") -> "ImbalancedSampler":
        row_cells = np.asarray(row_cells, dtype=np.int64)
        if row_cells.shape[0] == 0:
            raise ValueError("cannot fit a sampler on an empty dataset")
        cells, counts = np.unique(row_cells, axis=0, return_counts=True)
        return cls(cells, counts, time_bins, mode)

    @property
    def time_column(self) -> int:
        return self.cells.shape[1] - 2

    @property
    def event_column(self) -> int:
        return self.cells.shape[1] - 1

    def with_mode(self, mode: str) -> "ImbalancedSampler":
        return ImbalancedSampler(self.cells, self.counts, self.time_bins, mode)

    def sample(self, rng: np.random.Generator, n: int, fixed: dict[int, int] | None = None) -> np.ndarray:
        """Draw ``n`` cells; ``fixed`` pins cell columns (by position) to given values.

        Pinned draws use the observed cells that match the pins when any exist;
        otherwise the remaining columns are drawn unpinned and overwritten.
        """
        cells, probs = self.cells, self.probs
        fixed = dict(fixed or {})
        if fixed:
            match = np.ones(len(cells), dtype=bool)
            for col, value in fixed.items():
                match &= cells[:, col] == value
            if np.any(match):
                cells, probs = cells[match], probs[match] / probs[match].sum()
        out = cells[rng.choice(len(cells), size=n, p=probs)].copy()
        if self.mode == "censoring_only" and self.time_column not in fixed:
            out[:, self.time_column] = rng.integers(0, self.time_bins, size=n)
        for col, value in fixed.items():
            out[:, col] = value
        return out

    def to_dict(self) -> dict:
        return {"cells": self.cells.tolist(), "counts": self.counts.tolist(), "time_bins": self.time_bins, "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "ImbalancedSampler":
        return cls(np.array(d["cells"]), np.array(d["counts"]), d["time_bins"], d["mode"])
