"""Censored tabular survival datasets: schema, validation, CSV I/O and splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


class SchemaError(ValueError):
    """The declared schema or a CSV header does not fit together."""


class ValidationError(ValueError):
    """A data cell violates the dataset contract."""

    def __init__(self, row: int, column: str, message: str):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column!r}: {message}")


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str = CONTINUOUS
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.categories:
                raise SchemaError(f"categorical column {self.name!r} needs at least one category")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"categorical column {self.name!r} has duplicate categories")
        elif self.categories:
            raise SchemaError(f"continuous column {self.name!r} must not list categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            out["categories"] = list(self.categories)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSchema":
        return cls(d["name"], d.get("kind", CONTINUOUS), tuple(d.get("categories", ())))


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """The ``(x, t, E)`` triples of a survival study.

    ``data`` is an ``(N, m)`` float matrix. Continuous columns hold their
    values; categorical columns hold the index of the category in the
    column's ``categories`` tuple. ``events`` is 1 for an observed event and
    0 for a censored subject.
    """

    schema: tuple[ColumnSchema, ...]
    data: np.ndarray
    times: np.ndarray
    events: np.ndarray
    allow_empty: bool = field(default=False, repr=False)

    def __post_init__(self):
        schema = tuple(self.schema)
        names = [c.name for c in schema]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {names}")
        data = np.array(self.data, dtype=np.float64).reshape(-1, len(schema))
        times = np.array(self.times, dtype=np.float64).reshape(-1)
        events = np.array(self.events).reshape(-1)
        n = len(times)
        if n < 1 and not self.allow_empty:
            raise ValidationError(0, "<dataset>", "dataset must contain at least one row")
        if data.shape[0] != n or len(events) != n:
            raise ValueError(
                f"misaligned dataset: {data.shape[0]} covariate rows, {n} times, {len(events)} events"
            )
        bad = np.flatnonzero(~np.isfinite(times) | (times < 0))
        if bad.size:
            raise ValidationError(int(bad[0]), "<time>", f"invalid time {times[bad[0]]!r} (negative time or non-finite)")
        bad = np.flatnonzero((events != 0) & (events != 1))
        if bad.size:
            raise ValidationError(int(bad[0]), "<event>", f"event must be 0 or 1, got {events[bad[0]]!r}")
        for j, col in enumerate(schema):
            column = data[:, j]
            if col.is_categorical:
                ok = (column == np.round(column)) & (column >= 0) & (column < len(col.categories))
            else:
                ok = np.isfinite(column)
            bad = np.flatnonzero(~ok)
            if bad.size:
                raise ValidationError(int(bad[0]), col.name, f"invalid value {column[bad[0]]!r}")
        data.setflags(write=False)
        times.setflags(write=False)
        events = events.astype(np.int64)
        events.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "events", events)

    @classmethod
    def from_rows(
        cls,
        schema: Sequence[ColumnSchema],
        rows: Sequence[Sequence],
        times: Sequence[float],
        events: Sequence[int],
    ) -> "SurvivalDataset":
        """Build a dataset from rows of raw cell values (category labels for categoricals)."""
        schema = tuple(schema)
        data = np.empty((len(rows), len(schema)))
        for i, row in enumerate(rows):
            if len(row) != len(schema):
                raise ValidationError(i, "<row>", f"expected {len(schema)} cells, got {len(row)}")
            for j, (col, cell) in enumerate(zip(schema, row)):
                data[i, j] = _parse_cell(col, cell, i)
        return cls(schema, data, times, events)

    @classmethod
    def empty(cls, schema: Sequence[ColumnSchema]) -> "SurvivalDataset":
        """A zero-row dataset, e.g. the result of generating ``M = 0`` rows."""
        return cls(tuple(schema), np.zeros((0, len(schema))), np.zeros(0), np.zeros(0, dtype=np.int64), allow_empty=True)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def m(self) -> int:
        return len(self.schema)

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.schema]

    def column(self, name: str) -> np.ndarray:
        """Raw column values; categorical columns come back as label strings."""
        j = self.column_names.index(name)
        col = self.schema[j]
        if col.is_categorical:
            return np.array(col.categories, dtype=object)[self.data[:, j].astype(int)]
        return self.data[:, j].copy()

    def row(self, i: int) -> tuple:
        return tuple(_format_value(c, v) for c, v in zip(self.schema, self.data[i]))

    def rows(self) -> Iterator[tuple]:
        for i in range(self.n):
            yield self.row(i)

    def subset(self, index) -> "SurvivalDataset":
        index = np.asarray(index)
        return SurvivalDataset(
            self.schema, self.data[index], self.times[index], self.events[index], allow_empty=self.allow_empty
        )

    @property
    def censoring_fraction(self) -> float:
        return float(np.mean(self.events == 0))

    def equals(self, other: "SurvivalDataset") -> bool:
        return (
            self.schema == other.schema
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.events, other.events)
        )


def _parse_cell(col: ColumnSchema, cell, row: int) -> float:
    if cell is None or (isinstance(cell, str) and cell.strip() == ""):
        raise ValidationError(row, col.name, "missing value")
    if col.is_categorical:
        label = str(cell).strip()
        try:
            return float(col.categories.index(label))
        except ValueError:
            raise ValidationError(row, col.name, f"unknown category {label!r}") from None
    try:
        value = float(cell)
    except (TypeError, ValueError):
        raise ValidationError(row, col.name, f"non-numeric value {cell!r}") from None
    if not math.isfinite(value):
        raise ValidationError(row, col.name, f"non-finite value {cell!r}")
    return value


def _format_value(col: ColumnSchema, value: float):
    if col.is_categorical:
        return col.categories[int(value)]
    return float(value)


def load_csv(
    path: str | Path,
    schema: Sequence[ColumnSchema],
    time_column: str = "time",
    event_column: str = "event",
) -> SurvivalDataset:
    """Read and validate a headed CSV file. Row indices in errors are 0-based data rows."""
    schema = tuple(schema)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        needed = [c.name for c in schema] + [time_column, event_column]
        missing = [name for name in needed if name not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        pos = {name: header.index(name) for name in needed}
        data, times, events = [], [], []
        for i, record in enumerate(reader):
            if not record:
                continue
            if len(record) != len(header):
                raise ValidationError(i, "<row>", f"expected {len(header)} fields, got {len(record)}")
            data.append([_parse_cell(c, record[pos[c.name]], i) for c in schema])
            times.append(_parse_time(record[pos[time_column]], i, time_column))
            events.append(_parse_event(record[pos[event_column]], i, event_column))
    if not times:
        raise ValidationError(0, "<dataset>", "dataset must contain at least one row")
    return SurvivalDataset(schema, np.array(data).reshape(len(times), len(schema)), times, events)


def _parse_time(cell: str, row: int, name: str) -> float:
    try:
        t = float(cell)
    except ValueError:
        raise ValidationError(row, name, f"non-numeric time {cell!r}") from None
    if not math.isfinite(t):
        raise ValidationError(row, name, f"non-finite time {cell!r}")
    if t < 0:
        raise ValidationError(row, name, f"negative time {cell!r}")
    return t


def _parse_event(cell: str, row: int, name: str) -> int:
    try:
        e = float(cell)
    except ValueError:
        raise ValidationError(row, name, f"event must be 0 or 1, got {cell!r}") from None
    if e not in (0.0, 1.0):
        raise ValidationError(row, name, f"event must be 0 or 1, got {cell!r}")
    return int(e)


def write_csv(
    ds: SurvivalDataset, path: str | Path, time_column: str = "time", event_column: str = "event"
) -> None:
    """Write ``ds`` atomically; floats use ``repr`` so a reload is bit-identical."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.column_names + [time_column, event_column])
        for i in range(ds.n):
            cells = [v if isinstance(v, str) else repr(v) for v in ds.row(i)]
            writer.writerow(cells + [repr(float(ds.times[i])), str(int(ds.events[i]))])
    tmp.replace(path)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    folds: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.folds < 1:
            raise ValueError(f"folds must be positive, got {self.folds}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def split(ds: SurvivalDataset, spec: SplitSpec) -> tuple[SurvivalDataset, SurvivalDataset]:
    """Seeded random train/test partition."""
    if ds.n < 2:
        raise ValueError("cannot split a dataset with fewer than 2 rows")
    n_train = int(round(ds.n * spec.train_fraction))
    if n_train <= 0 or n_train >= ds.n:
        raise ValueError(
            f"train_fraction={spec.train_fraction} leaves an empty side for N={ds.n}"
        )
    perm = np.random.default_rng(spec.seed).permutation(ds.n)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


def k_folds(ds: SurvivalDataset, spec: SplitSpec) -> list[tuple[SurvivalDataset, SurvivalDataset]]:
    """Seeded k-fold partition; each row lands in exactly one test fold."""
    if ds.n < 2:
        raise ValueError("cannot split a dataset with fewer than 2 rows")
    if spec.folds < 2:
        raise ValueError("cross-validation needs folds >= 2")
    if spec.folds > ds.n:
        raise ValueError(f"{spec.folds} folds requested for only {ds.n} rows")
    perm = np.random.default_rng(spec.seed).permutation(ds.n)
    out = []
    for test_idx in np.array_split(perm, spec.folds):
        mask = np.ones(ds.n, dtype=bool)
        mask[test_idx] = False
        out.append((ds.subset(np.flatnonzero(mask)), ds.subset(np.sort(test_idx))))
    return out


def schema_from_config(columns: Sequence[dict]) -> tuple[ColumnSchema, ...]:
    return tuple(ColumnSchema.from_dict(c) for c in columns)
