import logging

import numpy as np
import pytest

from survgan import autodiff as ad
from survgan.autodiff import Tensor
from survgan.km import kaplan_meier
from survgan.survival_net import (
    DeepHitConfig,
    HorizonGrid,
    acceptable_pairs,
    deephit_loss,
    likelihood_loss,
    ranking_loss,
    survival_from_pmf,
    train_survival_net,
)


def test_uncensored_full_mass_zero_loss():
    pmf = np.array([[0.0, 1.0, 0.0, 0.0]])
    assert likelihood_loss(pmf, np.array([1]), np.array([1])).item() == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_censored_uniform_tail(k):
    K = 4
    pmf = np.full((1, K), 1.0 / K)
    # survival past bin k excludes the mass of bins 0..k
    expected = -np.log((K - k - 1) / K)
    got = likelihood_loss(pmf, np.array([k]), np.array([0])).item()
    assert got == pytest.approx(expected, rel=1e-5)


def test_pair_term():
    pmf = np.array([[1.0, 0.0], [0.0, 1.0]])
    # subject 0 has the event at bin 0 before subject 1
    rank, n_pairs = ranking_loss(pmf, np.array([0, 1]), np.array([1.0, 2.0]), np.array([1, 0]), 0.38)
    assert n_pairs == 1
    assert rank.item() == pytest.approx(np.exp(-1 / 0.38), abs=1e-4)
    assert np.exp(-1 / 0.38) == pytest.approx(0.0719, abs=1e-4)


def test_acceptable_pairs():
    mask = acceptable_pairs(np.array([1.0, 2.0, 3.0]), np.array([1, 0, 1]))
    # mask[j, i]: i had the event strictly before j
    assert mask.tolist() == [[False, False, False], [True, False, False], [True, False, False]]


def test_survival_from_pmf():
    np.testing.assert_allclose(survival_from_pmf(np.array([[1.0, 0, 0]])), [[0, 0, 0]])
    np.testing.assert_allclose(survival_from_pmf(np.full((1, 4), 0.25)), [[0.75, 0.5, 0.25, 0.0]])


def _fd(f, arr, h=1e-6):
    out = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def test_loss_gradient_two_subjects_four_bins():
    rng = np.random.default_rng(0)
    for _ in range(20):
        logits = rng.standard_normal((2, 4))
        bins = rng.integers(0, 4, 2)
        times = np.sort(rng.random(2))
        bins = np.sort(bins)
        events = rng.integers(0, 2, 2)
        events[0] = 1
        z = Tensor(logits, requires_grad=True)
        f = lambda: deephit_loss(ad.softmax(Tensor(logits), 1), bins, times, events, 0.28, 0.38).item()
        (g,) = ad.grad(deephit_loss(ad.softmax(z, 1), bins, times, events, 0.28, 0.38), [z])
        num = _fd(f, logits)
        np.testing.assert_allclose(g.value, num, rtol=1e-4, atol=1e-8)


def test_grid_and_bins():
    grid = HorizonGrid.from_times(np.array([2.0, 4.0, 10.0]), 5)
    np.testing.assert_allclose(grid.array, [2, 4, 6, 8, 10])
    np.testing.assert_array_equal(grid.bin_index([1.0, 2.0, 5.9, 6.0, 10.0, 12.0]), [0, 0, 1, 2, 4, 4])
    with pytest.raises(ValueError):
        HorizonGrid((1.0, 1.0))


def test_exponential_population_curve():
    rng = np.random.default_rng(0)
    rate = 0.5
    t = rng.exponential(1 / rate, 2000)
    x = rng.standard_normal((2000, 2))
    model = train_survival_net(x, t, np.ones(2000, dtype=int), DeepHitConfig(max_epochs=100), seed=0)
    curves = model.predict_curves(x)
    assert np.all(np.diff(curves, axis=1) <= 1e-12)
    grid = model.grid.array
    mean_curve = curves.mean(axis=0)
    # curve value at grid point i covers the bin that starts there
    err = np.abs(mean_curve[:-1] - np.exp(-rate * grid[1:]))
    assert err.mean() < 0.08


def test_all_censored_warns(caplog):
    rng = np.random.default_rng(1)
    with caplog.at_level(logging.WARNING):
        model = train_survival_net(rng.standard_normal((50, 2)), rng.exponential(1, 50), np.zeros(50, int), DeepHitConfig(max_epochs=3), 0)
    assert "censored" in caplog.text
    assert model.predict_curves(rng.standard_normal((3, 2))).shape == (3, 100)


def test_training_is_deterministic():
    rng = np.random.default_rng(2)
    x, t, e = rng.standard_normal((100, 2)), rng.exponential(1, 100), rng.integers(0, 2, 100)
    cfg = DeepHitConfig(max_epochs=5)
    a = train_survival_net(x, t, e, cfg, 3).predict_curves(x)
    b = train_survival_net(x, t, e, cfg, 3).predict_curves(x)
    np.testing.assert_array_equal(a, b)


def test_config_validation():
    with pytest.raises(ValueError):
        DeepHitConfig(alpha=1.5)
    with pytest.raises(ValueError):
        DeepHitConfig(sigma=0)
