import time

import numpy as np
import pytest
from scipy.stats import norm

from survgan.codec import CLIP, Codec, GmmSpec, fit_codec, fit_gmm
from survgan.dataset import ColumnSchema, SurvivalDataset

CONT = ColumnSchema("x", "continuous")
SEX = ColumnSchema("sex", "categorical", ("M", "F"))


def _codec(gmm, schema=(CONT,), t_range=(0.0, 10.0), bins=10):
    gmms = {c.name: gmm for c in schema if not c.is_categorical}
    return Codec(schema, gmms, *t_range, time_bins=bins)


def test_single_gaussian_recovered():
    x = np.random.default_rng(0).standard_normal(5000)
    g = fit_gmm(x, 10, seed=0)
    heavy = int(np.argmax(g.weights))
    assert abs(g.means[heavy]) < 0.1
    assert abs(np.sum(np.array(g.weights) * np.array(g.means)) - x.mean()) < 0.05


def test_constant_feature_single_component():
    g = fit_gmm(np.full(100, 5.0), 10)
    assert g.n_components == 1
    assert g.means == (5.0,) and g.stds == (1e-6,)


def test_two_clusters():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(0, 1, 1000), rng.normal(100, 1, 1000)])
    g = fit_gmm(x, 10, seed=0)
    assert g.n_components == 2
    # oracle: the two cluster sample means
    assert abs(g.means[0] - x[:1000].mean()) < 0.5 and abs(g.means[1] - x[1000:].mean()) < 0.5


def test_gmm_constraints_and_determinism():
    x = np.random.default_rng(2).gamma(2.0, 3.0, 3000)
    a, b = fit_gmm(x, 10, seed=3), fit_gmm(x, 10, seed=3)
    assert a == b
    assert abs(sum(a.weights) - 1) < 1e-9 and min(a.stds) > 0 and min(a.weights) >= 1e-3
    assert 1 <= a.n_components <= 10


def test_em_log_likelihood_monotone():
    x = np.random.default_rng(4).standard_normal(2000) * np.where(np.random.default_rng(5).random(2000) < 0.5, 1, 3)
    hist = []
    fit_gmm(x, 4, seed=0, select="none", history=hist)
    assert len(hist) > 1
    assert np.all(np.diff(hist) >= -1e-9)


def test_fewer_points_than_components():
    g = fit_gmm(np.array([1.0, 2.0, 3.0]), 10)
    assert g.n_components <= 3


def test_encode_single_component_identity():
    c = _codec(GmmSpec((1.0,), (0.0,), (1.0,)))
    np.testing.assert_allclose(c.encode((2.0,)), [1.0, 2.0])


def test_encode_two_components_posterior():
    g = GmmSpec((0.5, 0.5), (0.0, 10.0), (1.0, 1.0))
    c = _codec(g)
    # oracle: direct Gaussian density comparison
    assert norm.pdf(9, 10, 1) > norm.pdf(9, 0, 1)
    np.testing.assert_allclose(c.encode((9.0,)), [0.0, 1.0, -1.0])
    assert c.decode(np.array([0.0, 1.0, -1.0])) == (9.0,)


def test_categorical_onehot_and_soft_decode():
    c = Codec((SEX,), {}, 0.0, 1.0)
    np.testing.assert_array_equal(c.encode(("F",)), [0, 1])
    assert c.decode(np.array([0.4, 0.6])) == ("F",)
    with pytest.raises(ValueError, match="unknown category"):
        c.encode(("X",))


def test_clipping():
    c = _codec(GmmSpec((1.0,), (0.0,), (1.0,)))
    assert c.encode((10.0,))[1] == CLIP


def test_class_encode_blocks():
    schema = (CONT,)
    c = _codec(GmmSpec((1.0,), (0.0,), (1.0,)), schema, (0.0, 10.0), bins=2)
    np.testing.assert_array_equal(c.class_encode((0.3,), 2.0, 1), [1, 1, 0, 0, 1])
    np.testing.assert_array_equal(c.class_encode((0.3,), 2.0, 0)[-2:], [1, 0])
    np.testing.assert_array_equal(c.class_encode((0.3,), 10.0, 1)[1:3], [0, 1])
    # out-of-range times clamp to the boundary bins
    np.testing.assert_array_equal(c.class_encode((0.3,), -5.0, 1)[1:3], [1, 0])
    np.testing.assert_array_equal(c.class_encode((0.3,), 50.0, 1)[1:3], [0, 1])


def _mixed(n, seed):
    rng = np.random.default_rng(seed)
    x = np.where(rng.random(n) < 0.3, rng.normal(-5, 1, n), rng.normal(3, 0.5, n))
    data = np.column_stack([x, rng.integers(0, 2, n), rng.gamma(2, 2, n)])
    schema = (CONT, SEX, ColumnSchema("z", "continuous"))
    return SurvivalDataset(schema, data, rng.exponential(3, n), rng.integers(0, 2, n))


def test_dimension_formula_and_json_round_trip():
    ds = _mixed(800, 0)
    c = fit_codec(ds, 10, seed=0)
    expected = sum(g.n_components + 1 for g in c.gmms.values()) + 2
    assert c.dim == expected
    enc = c.transform(ds.data)
    assert enc.shape == (800, expected)
    c2 = Codec.from_json(c.to_json())
    np.testing.assert_array_equal(c2.transform(ds.data), enc)


def test_sampled_modes_need_rng_and_are_valid():
    ds = _mixed(300, 1)
    c = fit_codec(ds, 10, seed=0, sample_modes=True)
    with pytest.raises(ValueError):
        c.transform(ds.data)
    enc = c.transform(ds.data, np.random.default_rng(0))
    blocks = [b for b in c.blocks if b.kind == "onehot"]
    for b in blocks:
        np.testing.assert_array_equal(enc[:, b.start:b.stop].sum(axis=1), 1.0)


def test_round_trip_training_rows():
    ds = _mixed(1000, 2)
    c = fit_codec(ds, 10, seed=0)
    t0 = time.perf_counter()
    dec = c.inverse_transform(c.transform(ds.data))
    assert time.perf_counter() - t0 < 1.0
    enc = c.transform(ds.data)
    scalars = [b.start for b in c.blocks if b.kind == "scalar"]
    unclipped = np.all(np.abs(enc[:, scalars]) < CLIP, axis=1)
    cont = [0, 2]
    np.testing.assert_array_equal(dec[:, 1], ds.data[:, 1])
    rel = np.abs(dec[unclipped][:, cont] - ds.data[unclipped][:, cont]) / np.maximum(np.abs(ds.data[unclipped][:, cont]), 1e-12)
    assert rel.max() < 1e-9


def test_empty_dataset_rejected():
    ds = SurvivalDataset.empty((CONT,))
    with pytest.raises(ValueError):
        fit_codec(ds)
