import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survgan.dataset import (
    ColumnSchema,
    SchemaError,
    SplitSpec,
    SurvivalDataset,
    ValidationError,
    k_folds,
    load_csv,
    split,
    write_csv,
)

SCHEMA = [ColumnSchema("age", "continuous"), ColumnSchema("sex", "categorical", ("M", "F"))]


def _write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    p = _write(tmp_path, "age,sex,time,event\n50,M,1.5,1\n61.2,F,3,0\n40,F,0,1\n")
    ds = load_csv(p, SCHEMA)
    assert (ds.n, ds.m) == (3, 2)
    assert list(ds.column("sex")) == ["M", "F", "F"]
    np.testing.assert_array_equal(ds.times, [1.5, 3.0, 0.0])
    np.testing.assert_array_equal(ds.events, [1, 0, 1])


def test_event_two_names_row(tmp_path):
    p = _write(tmp_path, "age,sex,time,event\n50,M,1.5,1\n61,F,3,2\n")
    with pytest.raises(ValidationError) as err:
        load_csv(p, SCHEMA)
    assert err.value.row == 1 and err.value.column == "event"


def test_negative_time(tmp_path):
    p = _write(tmp_path, "age,sex,time,event\n50,M,-1.0,1\n")
    with pytest.raises(ValidationError, match="negative time"):
        load_csv(p, SCHEMA)


def test_missing_column_and_unknown_category(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(_write(tmp_path, "age,time,event\n50,1,1\n"), SCHEMA)
    with pytest.raises(ValidationError) as err:
        load_csv(_write(tmp_path, "age,sex,time,event\n50,X,1,1\n"), SCHEMA)
    assert err.value.column == "sex"


def test_missing_value_rejected(tmp_path):
    with pytest.raises(ValidationError):
        load_csv(_write(tmp_path, "age,sex,time,event\n,M,1,1\n"), SCHEMA)


def test_schema_invariants():
    with pytest.raises(SchemaError):
        ColumnSchema("c", "categorical", ())
    with pytest.raises(SchemaError):
        ColumnSchema("c", "continuous", ("a",))
    with pytest.raises(SchemaError):
        SurvivalDataset([ColumnSchema("a"), ColumnSchema("a")], np.zeros((1, 2)), [1.0], [1])


def _random_ds(rng, n):
    data = np.column_stack([rng.normal(50, 10, n), rng.integers(0, 2, n)])
    return SurvivalDataset(SCHEMA, data, rng.exponential(5, n), rng.integers(0, 2, n))


def test_csv_round_trip(tmp_path):
    ds = _random_ds(np.random.default_rng(0), 50)
    write_csv(ds, tmp_path / "out.csv")
    assert load_csv(tmp_path / "out.csv", SCHEMA).equals(ds)


def test_split_sizes_and_determinism():
    ds = _random_ds(np.random.default_rng(1), 10)
    a_tr, a_te = split(ds, SplitSpec(0.8, seed=7))
    b_tr, b_te = split(ds, SplitSpec(0.8, seed=7))
    assert (a_tr.n, a_te.n) == (8, 2)
    assert a_tr.equals(b_tr) and a_te.equals(b_te)


def test_three_folds_partition():
    ds = _random_ds(np.random.default_rng(2), 9)
    folds = k_folds(ds, SplitSpec(folds=3))
    assert [te.n for _, te in folds] == [3, 3, 3]
    seen = np.sort(np.concatenate([te.times for _, te in folds]))
    np.testing.assert_array_equal(seen, np.sort(ds.times))


def test_single_row_cannot_split():
    ds = _random_ds(np.random.default_rng(3), 1)
    with pytest.raises(ValueError):
        split(ds, SplitSpec())
    with pytest.raises(ValueError):
        k_folds(ds, SplitSpec())


def test_empty_side_rejected():
    ds = _random_ds(np.random.default_rng(4), 3)
    with pytest.raises(ValueError, match="empty side"):
        split(ds, SplitSpec(0.99))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 40), seed=st.integers(0, 2**31 - 1), frac=st.floats(0.1, 0.9))
def test_split_is_permutation_partition(n, seed, frac):
    ds = _random_ds(np.random.default_rng(seed), n)
    try:
        tr, te = split(ds, SplitSpec(frac, seed=seed))
    except ValueError:
        return
    rows = sorted(map(tuple, np.column_stack([ds.data, ds.times, ds.events]).tolist()))
    got = np.vstack([np.column_stack([d.data, d.times, d.events]) for d in (tr, te)])
    assert sorted(map(tuple, got.tolist())) == rows


def test_dataset_is_read_only():
    ds = _random_ds(np.random.default_rng(5), 4)
    with pytest.raises(ValueError):
        ds.times[0] = 1.0
