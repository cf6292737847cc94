import numpy as np
import pytest

from survgan import autodiff as ad
from survgan.autodiff import Tensor
from survgan.codec import Block, fit_codec
from survgan.dataset import ColumnSchema, SurvivalDataset
from survgan.gan import (
    GanConfig,
    ImbalancedSampler,
    TrainingError,
    generate_covariates,
    gradient_penalty,
    train_gan,
)


def test_gradient_penalty_linear_critic():
    w = np.array([[3.0], [4.0]])
    x = np.random.default_rng(0).standard_normal((7, 2))
    gp, norms = gradient_penalty(lambda t: ad.matmul(t, Tensor(w)), x, 10.0)
    assert gp.item() == pytest.approx(160.0)
    np.testing.assert_allclose(norms, 5.0)
    gp0, _ = gradient_penalty(lambda t: ad.matmul(t, Tensor(w)), x, 0.0)
    assert gp0.item() == 0.0


def _cells(n_censored, n_events):
    e = np.r_[np.zeros(n_censored, int), np.ones(n_events, int)]
    bins = np.arange(len(e)) % 3
    return np.column_stack([np.zeros(len(e), int), bins, e])


def test_sampler_event_frequency():
    sampler = ImbalancedSampler.fit(_cells(90, 10), time_bins=3)
    draws = sampler.sample(np.random.default_rng(0), 10_000)
    assert abs(np.mean(draws[:, sampler.event_column] == 0) - 0.9) < 0.02


def test_sampler_cell_frequencies_within_3_sigma():
    rng = np.random.default_rng(1)
    rows = np.column_stack([rng.integers(0, 3, 500), rng.integers(0, 4, 500), rng.integers(0, 2, 500)])
    sampler = ImbalancedSampler.fit(rows, time_bins=4)
    n = 100_000
    draws = sampler.sample(np.random.default_rng(2), n)
    for cell, p in zip(sampler.cells, sampler.probs):
        freq = np.mean(np.all(draws == cell, axis=1))
        assert abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_sampler_variants():
    sampler = ImbalancedSampler.fit(_cells(90, 10), time_bins=3)
    rng = np.random.default_rng(3)
    cens = sampler.with_mode("censoring_only").sample(rng, 30_000)
    assert abs(np.mean(cens[:, 2] == 0) - 0.9) < 0.02
    np.testing.assert_allclose(np.bincount(cens[:, 1], minlength=3) / 30_000, 1 / 3, atol=0.02)
    uni = sampler.with_mode("uniform").sample(rng, 30_000)
    assert abs(np.mean(uni[:, 2] == 0) - 0.5) < 0.02
    fixed = sampler.sample(rng, 100, fixed={2: 1})
    assert np.all(fixed[:, 2] == 1)
    again = ImbalancedSampler.from_dict(sampler.to_dict())
    np.testing.assert_array_equal(again.sample(np.random.default_rng(4), 50), sampler.sample(np.random.default_rng(4), 50))
    with pytest.raises(ValueError):
        ImbalancedSampler.fit(np.zeros((0, 3), int), 3)
    with pytest.raises(ValueError):
        sampler.with_mode("bogus")


def _two_clusters(n, seed=0):
    rng = np.random.default_rng(seed)
    lab = rng.integers(0, 2, n)
    centers = np.array([[-2.0, -2.0], [2.0, 2.0]])
    x = centers[lab] + 0.5 * rng.standard_normal((n, 2))
    return x, np.eye(2)[lab], centers


BLOCKS = [Block("a", "scalar", 0, 1), Block("b", "scalar", 1, 1)]


def test_generate_shapes_and_determinism():
    x, c, _ = _two_clusters(200)
    cfg = GanConfig(iterations=5, batch_size=64, generator_hidden=(16,), discriminator_hidden=(16,), latent_dim=4)
    gan = train_gan(x, c, BLOCKS, cfg, seed=0)
    again = train_gan(x, c, BLOCKS, cfg, seed=0)
    out = generate_covariates(gan, c[:10], 10, np.random.default_rng(0))
    assert out.shape == (10, 2)
    np.testing.assert_array_equal(out, generate_covariates(again, c[:10], 10, np.random.default_rng(0)))
    assert generate_covariates(gan, c[:0], 0, np.random.default_rng(0)).shape == (0, 2)
    assert len(gan.history) == 5 and set(gan.history[0]) >= {"d_loss", "g_loss", "gradient_penalty"}
    with pytest.raises(ValueError):
        generate_covariates(gan, None, 3, np.random.default_rng(0))


def test_onehot_blocks_are_distributions():
    rng = np.random.default_rng(0)
    x = np.eye(3)[rng.integers(0, 3, 100)]
    cfg = GanConfig(iterations=3, batch_size=32, generator_hidden=(8,), discriminator_hidden=(8,), latent_dim=2, conditional=False)
    gan = train_gan(x, None, [Block("k", "onehot", 0, 3)], cfg, seed=1)
    out = generate_covariates(gan, None, 20, rng)
    np.testing.assert_allclose(out.sum(axis=1), 1.0)
    assert np.all(out >= 0)


def test_training_errors():
    x, c, _ = _two_clusters(50)
    with pytest.raises(ValueError):
        train_gan(x[:0], c[:0], BLOCKS, GanConfig(iterations=1), seed=0)
    with pytest.raises(ValueError):
        train_gan(x, None, BLOCKS, GanConfig(iterations=1), seed=0)
    bad = x.copy()
    bad[:, 0] = np.nan
    with pytest.raises(TrainingError, match="iteration 0"):
        train_gan(bad, c, BLOCKS, GanConfig(iterations=3, batch_size=50), seed=0)
    with pytest.raises(ValueError):
        GanConfig(gp_lambda=-1)
    with pytest.raises(ValueError):
        GanConfig(batch_size=1)


@pytest.mark.slow
def test_conditional_cluster_means():
    # the GAN works on codec-encoded rows, as in the pipeline
    x, c, centers = _two_clusters(1000)
    schema = (ColumnSchema("a", "continuous"), ColumnSchema("b", "continuous"))
    codec = fit_codec(SurvivalDataset(schema, x, np.ones(1000), np.ones(1000, int)), 10, seed=0)
    gan = train_gan(codec.transform(x), c, codec.blocks, GanConfig(), seed=0)
    for k in range(2):
        enc = generate_covariates(gan, np.tile(np.eye(2)[k], (2000, 1)), 2000, np.random.default_rng(1))
        s = codec.inverse_transform(enc)
        assert np.abs(s.mean(axis=0) - centers[k]).max() < 0.5
