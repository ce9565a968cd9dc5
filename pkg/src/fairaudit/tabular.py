"""Typed tabular datasets: schema manifests, CSV ingestion, leak-safe splits.

Columns carry one of six roles. Numeric features are stored as float64,
categorical-like columns (categorical_feature / protected / label) as integer
codes into the schema's ordered category list, time as an integer period index
and id as strings. Missing values are rejected at load time: the audit
semantics stay unambiguous and no imputation step can leak the target.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadCell,
    BadColumn,
    DegenerateSplit,
    NoTimeColumn,
    RoleConflict,
    UnknownColumn,
)
from .rng import generator

ROLES = ("numeric_feature", "categorical_feature", "label", "protected", "time", "id")
CATEGORICAL_ROLES = ("categorical_feature", "label", "protected")


@dataclass(frozen=True)
class Column:
    name: str
    role: str
    categories: tuple[str, ...] | None = None


@dataclass(frozen=True)
class Schema:
    """Ordered column declarations with role invariants enforced at build."""

    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise RoleConflict("duplicate column names in schema")
        for col in self.columns:
            if col.role not in ROLES:
                raise RoleConflict(f"unknown role {col.role!r} for column {col.name!r}")
            if col.role in CATEGORICAL_ROLES:
                if not col.categories:
                    raise RoleConflict(f"column {col.name!r} needs a category list")
                if len(set(col.categories)) != len(col.categories):
                    raise RoleConflict(f"duplicate categories in column {col.name!r}")
            elif col.categories is not None:
                raise RoleConflict(f"column {col.name!r} role {col.role} takes no categories")
        labels = [c for c in self.columns if c.role == "label"]
        if len(labels) != 1:
            raise RoleConflict(f"schema needs exactly one label column, found {len(labels)}")
        if len(labels[0].categories) != 2:
            raise RoleConflict("label column must have exactly 2 categories")
        if sum(1 for c in self.columns if c.role == "time") > 1:
            raise RoleConflict("at most one time column allowed")

    def column(self, name: str) -> Column:
        for col in self.columns:
            if col.name == name:
                return col
        raise UnknownColumn(f"no column named {name!r}")

    @property
    def label_column(self) -> Column:
        return next(c for c in self.columns if c.role == "label")

    @property
    def time_column(self) -> Column | None:
        return next((c for c in self.columns if c.role == "time"), None)

    @property
    def protected_columns(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.role == "protected")

    @property
    def feature_columns(self) -> tuple[Column, ...]:
        return tuple(
            c for c in self.columns if c.role in ("numeric_feature", "categorical_feature")
        )

    def to_manifest(self) -> dict:
        cols = []
        for c in self.columns:
            entry = {"name": c.name, "role": c.role}
            if c.categories is not None:
                entry["categories"] = list(c.categories)
            cols.append(entry)
        return {"columns": cols}

    @classmethod
    def from_manifest(cls, manifest: dict) -> "Schema":
        cols = []
        for entry in manifest["columns"]:
            cats = entry.get("categories")
            cols.append(
                Column(entry["name"], entry["role"], tuple(cats) if cats is not None else None)
            )
        return cls(tuple(cols))


@dataclass(frozen=True)
class Issue:
    """One validation finding: a machine code plus the offending cell."""

    code: str
    column: str
    row: int


class TabularDataset:
    """Immutable column-major table conforming to a Schema.

    The constructor is permissive (``validate`` reports violations as data);
    ``load_csv`` only ever produces conforming datasets.
    """

    def __init__(self, schema: Schema, columns: dict[str, np.ndarray]):
        self.schema = schema
        self._columns = {}
        n_rows = None
        for col in schema.columns:
            arr = np.asarray(columns[col.name])
            arr.setflags(write=False)
            self._columns[col.name] = arr
            if n_rows is None:
                n_rows = len(arr)
        self.n_rows = int(n_rows) if n_rows is not None else 0

    def column(self, name: str) -> np.ndarray:
        if name not in self._columns:
            raise UnknownColumn(f"no column named {name!r}")
        return self._columns[name]

    def labels(self) -> np.ndarray:
        return self.column(self.schema.label_column.name)

    def group_codes(self, name: str) -> np.ndarray:
        col = self.schema.column(name)
        if col.role not in CATEGORICAL_ROLES:
            raise BadColumn(f"column {name!r} is not categorical")
        return self.column(name)

    def select(self, indices) -> "TabularDataset":
        """Row-subset view used to pass SplitPlan sides between modules."""
        idx = np.asarray(indices, dtype=np.int64)
        return TabularDataset(
            self.schema, {name: arr[idx] for name, arr in self._columns.items()}
        )

    def equals(self, other: "TabularDataset") -> bool:
        if self.schema != other.schema or self.n_rows != other.n_rows:
            return False
        return all(
            np.array_equal(self._columns[c.name], other._columns[c.name])
            for c in self.schema.columns
        )


@dataclass(frozen=True)
class FeatureLayout:
    """Feature-matrix metadata handed to tree learners.

    kinds[i] is 0 for numeric and 1 for categorical; n_categories[i] is the
    category count for categorical features (0 for numeric).
    """

    names: tuple[str, ...]
    kinds: np.ndarray
    n_categories: np.ndarray


def feature_layout(ds: TabularDataset, exclude: tuple[str, ...] = ()) -> FeatureLayout:
    names, kinds, ncat = [], [], []
    for col in ds.schema.feature_columns:
        if col.name in exclude:
            continue
        names.append(col.name)
        if col.role == "numeric_feature":
            kinds.append(0)
            ncat.append(0)
        else:
            kinds.append(1)
            ncat.append(len(col.categories))
    return FeatureLayout(
        tuple(names), np.asarray(kinds, np.int8), np.asarray(ncat, np.int64)
    )


def feature_matrix(ds: TabularDataset, layout: FeatureLayout | None = None) -> np.ndarray:
    """Float64 matrix of the layout's features; categorical codes as floats."""
    layout = layout or feature_layout(ds)
    out = np.empty((ds.n_rows, len(layout.names)), dtype=np.float64)
    for j, name in enumerate(layout.names):
        out[:, j] = ds.column(name)
    return out


# -- CSV and manifest I/O -------------------------------------------------


def load_manifest(path) -> Schema:
    with open(path, "r", encoding="utf-8") as fh:
        return Schema.from_manifest(json.load(fh))


def write_manifest(schema: Schema, path) -> None:
    Path(path).write_text(
        json.dumps(schema.to_manifest(), indent=2) + "\n", encoding="utf-8"
    )


def load_csv(path, manifest) -> TabularDataset:
    """Load a CSV (RFC-4180, UTF-8, header row) under a schema manifest.

    CSV columns not named by the manifest are ignored. Any unparseable,
    undeclared or missing cell raises BadCell with its position.
    """
    schema = manifest if isinstance(manifest, Schema) else Schema.from_manifest(manifest)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise BadCell("CSV file has no header row")
        positions = {}
        for col in schema.columns:
            if col.name not in header:
                raise UnknownColumn(f"manifest column {col.name!r} missing from CSV header")
            positions[col.name] = header.index(col.name)
        raw = {col.name: [] for col in schema.columns}
        for row_i, record in enumerate(reader):
            for col in schema.columns:
                pos = positions[col.name]
                if pos >= len(record):
                    raise BadCell(
                        f"row {row_i}: missing cell for column {col.name!r}",
                        column=col.name,
                        row=row_i,
                    )
                raw[col.name].append(record[pos])

    columns = {}
    for col in schema.columns:
        cells = raw[col.name]
        if col.role == "numeric_feature":
            columns[col.name] = _parse_numeric(cells, col.name)
        elif col.role in CATEGORICAL_ROLES:
            columns[col.name] = _parse_categorical(cells, col)
        elif col.role == "time":
            columns[col.name] = _parse_time(cells, col.name)
        else:  # id
            columns[col.name] = np.asarray(cells, dtype=object)
    return TabularDataset(schema, columns)


def _parse_numeric(cells, name):
    out = np.empty(len(cells), dtype=np.float64)
    for i, cell in enumerate(cells):
        if cell == "":
            raise BadCell(f"row {i}: missing value in numeric column {name!r}", name, i)
        try:
            value = float(cell)
        except ValueError:
            raise BadCell(f"row {i}: unparseable numeric {cell!r} in {name!r}", name, i)
        if not np.isfinite(value):
            raise BadCell(f"row {i}: non-finite value {cell!r} in {name!r}", name, i)
        out[i] = value
    return out


def _parse_categorical(cells, col):
    code_of = {cat: i for i, cat in enumerate(col.categories)}
    out = np.empty(len(cells), dtype=np.int32)
    for i, cell in enumerate(cells):
        if cell == "":
            raise BadCell(f"row {i}: missing value in column {col.name!r}", col.name, i)
        code = code_of.get(cell)
        if code is None:
            raise BadCell(
                f"row {i}: category {cell!r} not declared for column {col.name!r}",
                col.name,
                i,
            )
        out[i] = code
    return out


def _parse_time(cells, name):
    out = np.empty(len(cells), dtype=np.int64)
    for i, cell in enumerate(cells):
        try:
            out[i] = int(cell)
        except ValueError:
            raise BadCell(f"row {i}: time column {name!r} needs an integer, got {cell!r}", name, i)
    return out


def write_csv(ds: TabularDataset, path) -> None:
    """Write the dataset back to CSV; numeric cells round-trip bitwise."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in ds.schema.columns])
        rendered = []
        for col in ds.schema.columns:
            arr = ds.column(col.name)
            if col.role == "numeric_feature":
                rendered.append([repr(float(v)) for v in arr])
            elif col.role in CATEGORICAL_ROLES:
                rendered.append([col.categories[int(v)] for v in arr])
            elif col.role == "time":
                rendered.append([str(int(v)) for v in arr])
            else:
                rendered.append([str(v) for v in arr])
        for i in range(ds.n_rows):
            writer.writerow([column[i] for column in rendered])


# -- splitting ------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/eval row indices plus the recipe that produced them."""

    train_indices: np.ndarray
    eval_indices: np.ndarray
    seed: int
    strategy: str

    def train_view(self, ds: TabularDataset) -> TabularDataset:
        return ds.select(self.train_indices)

    def eval_view(self, ds: TabularDataset) -> TabularDataset:
        return ds.select(self.eval_indices)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_random(
    ds: TabularDataset,
    train_fraction: float,
    seed: int,
    stratify_by: str | None = None,
) -> SplitPlan:
    """Seeded random split; optionally stratified on a categorical column.

    |train| = round(train_fraction * n) overall; per stratum the train count
    is round(train_fraction * stratum size), so it never misses the exact
    fraction by 1 or more rows.
    """
    n = ds.n_rows
    if n < 2:
        raise DegenerateSplit(f"need at least 2 rows to split, have {n}")
    if not 0.0 < train_fraction < 1.0:
        raise DegenerateSplit(f"train_fraction must be in (0,1), got {train_fraction}")

    if stratify_by is None:
        k = _round_half_up(train_fraction * n)
        if k == 0 or k == n:
            raise DegenerateSplit(f"fraction {train_fraction} leaves an empty side for n={n}")
        perm = generator(seed, 0).permutation(n)
        train = np.sort(perm[:k])
        strategy = f"random({train_fraction})"
    else:
        col = ds.schema.column(stratify_by)
        if col.role not in CATEGORICAL_ROLES:
            raise BadColumn(f"cannot stratify by non-categorical column {stratify_by!r}")
        codes = ds.column(stratify_by)
        parts = []
        for code in range(len(col.categories)):
            rows = np.flatnonzero(codes == code)
            if len(rows) == 0:
                continue
            k_s = _round_half_up(train_fraction * len(rows))
            perm = generator(seed, code + 1).permutation(len(rows))
            parts.append(rows[perm[:k_s]])
        train = np.sort(np.concatenate(parts)) if parts else np.empty(0, np.int64)
        if len(train) == 0 or len(train) == n:
            raise DegenerateSplit(
                f"stratified fraction {train_fraction} leaves an empty side for n={n}"
            )
        strategy = f"stratified({stratify_by},{train_fraction})"

    mask = np.ones(n, dtype=bool)
    mask[train] = False
    return SplitPlan(
        train_indices=train.astype(np.int64),
        eval_indices=np.flatnonzero(mask).astype(np.int64),
        seed=seed,
        strategy=strategy,
    )


def split_temporal(ds: TabularDataset, train_periods, eval_periods, seed: int = 0) -> SplitPlan:
    """Split along the time column: named train periods vs eval periods."""
    slices = dict(slice_by_time(ds))
    for period in list(train_periods) + list(eval_periods):
        if period not in slices:
            raise DegenerateSplit(f"period {period} has no rows")
    train = np.sort(np.concatenate([slices[p] for p in train_periods]))
    ev = np.sort(np.concatenate([slices[p] for p in eval_periods]))
    if len(train) == 0 or len(ev) == 0:
        raise DegenerateSplit("temporal split side is empty")
    if np.intersect1d(train, ev).size:
        raise DegenerateSplit("train and eval periods overlap")
    return SplitPlan(train, ev, seed, f"temporal({list(train_periods)},{list(eval_periods)})")


def slice_by_time(ds: TabularDataset) -> list[tuple[int, np.ndarray]]:
    """Ascending (period, row indices) partition along the time column."""
    time_col = ds.schema.time_column
    if time_col is None:
        raise NoTimeColumn("dataset schema has no time column")
    values = ds.column(time_col.name)
    return [
        (int(p), np.flatnonzero(values == p).astype(np.int64))
        for p in np.unique(values)
    ]


# -- validation -----------------------------------------------------------


def validate(ds: TabularDataset) -> list[Issue]:
    """Check type invariants; conformance means an empty issue list."""
    issues = []
    for col in ds.schema.columns:
        arr = ds.column(col.name)
        if len(arr) != ds.n_rows:
            issues.append(Issue("bad_length", col.name, -1))
            continue
        if col.role == "numeric_feature":
            bad = np.flatnonzero(~np.isfinite(arr))
            issues.extend(Issue("bad_value", col.name, int(r)) for r in bad)
        elif col.role in CATEGORICAL_ROLES:
            bad = np.flatnonzero((arr < 0) | (arr >= len(col.categories)))
            issues.extend(Issue("bad_code", col.name, int(r)) for r in bad)
    return issues
