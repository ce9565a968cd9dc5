"""Intersectional subgroup grids and a guarded heterogeneity finder.

The finder splits rows into discovery and confirmation halves by hashing
stable row ids, fits a shallow regression tree to the per-row statistic on
the discovery half only, and re-tests every candidate leaf on the untouched
confirmation half with a Bonferroni-adjusted two-sided mean test. Nothing a
leaf learned from the discovery rows can confirm itself.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _treekernel
from .errors import BadAttribute, BadConfig, TooFewRows, UnknownColumn
from .fairmetrics import confusion
from .forest import DecisionTree
from .rng import derive_seed, hash64
from .tabular import Column, Schema, TabularDataset

GRID_METRICS = ("balanced_accuracy", "accuracy", "fnr", "parity_vs_global")


@dataclass(frozen=True)
class SubgroupKey:
    """Ordered (attribute, category) pairs naming one intersection cell."""

    items: tuple[tuple[str, str], ...]

    def describe(self) -> str:
        return ", ".join(f"{a}={c}" for a, c in self.items)


@dataclass(frozen=True)
class GridCell:
    key: SubgroupKey
    n: int
    value: float | None
    low_support: bool


@dataclass(frozen=True)
class SubgroupGrid:
    metric: str
    cells: tuple[GridCell, ...]
    min_support: int


def coding_scheme(schema: Schema, attribute: str) -> str:
    """Legend string like 'cit (0: nonDE, 1: DE)' for figure captions."""
    col = schema.column(attribute)
    if col.categories is None:
        raise BadAttribute(f"{attribute!r} is not a categorical column")
    inner = ", ".join(f"{i}: {c}" for i, c in enumerate(col.categories))
    return f"{attribute} ({inner})"


def _categorical_column(schema: Schema, attribute: str) -> Column:
    try:
        col = schema.column(attribute)
    except UnknownColumn:
        raise BadAttribute(f"no column named {attribute!r}")
    if col.categories is None:
        raise BadAttribute(f"attribute {attribute!r} is not categorical")
    return col


def enumerate_intersections(schema: Schema, attributes) -> list[SubgroupKey]:
    """Cartesian product of category lists, lexicographic in the given
    attribute order with each schema's category order."""
    attributes = list(attributes)
    if not attributes:
        raise BadAttribute("need at least one attribute")
    if len(set(attributes)) != len(attributes):
        raise BadAttribute(f"duplicate attributes in {attributes}")
    category_lists = [_categorical_column(schema, a).categories for a in attributes]
    return [
        SubgroupKey(tuple(zip(attributes, combo)))
        for combo in itertools.product(*category_lists)
    ]


def _key_mask(ds: TabularDataset, key: SubgroupKey) -> np.ndarray:
    mask = np.ones(ds.n_rows, dtype=bool)
    for attribute, category in key.items:
        col = _categorical_column(ds.schema, attribute)
        if category not in col.categories:
            raise BadAttribute(f"category {category!r} not declared for {attribute!r}")
        mask &= ds.column(attribute) == col.categories.index(category)
    return mask


def _cell_value(metric: str, y, yhat, global_ppr: float) -> float | None:
    if len(y) == 0:
        return None
    c = confusion(y, yhat)
    if metric == "accuracy":
        return (c.tp + c.tn) / c.n
    if metric == "fnr":
        return c.fn / (c.tp + c.fn) if c.tp + c.fn else None
    if metric == "parity_vs_global":
        return (c.tp + c.fp) / c.n - global_ppr
    # balanced_accuracy
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        return None
    return 0.5 * (c.tp / (c.tp + c.fn) + c.tn / (c.tn + c.fp))


def subgroup_grid(y, yhat, ds: TabularDataset, keys, metric: str,
                  min_support: int = 50) -> SubgroupGrid:
    """Metric per intersection cell with a low-support flag under
    min_support (default 50)."""
    if metric not in GRID_METRICS:
        raise BadConfig(f"metric must be one of {GRID_METRICS}, got {metric!r}")
    y = np.asarray(y)
    yhat = np.asarray(yhat)
    global_ppr = float((yhat == 1).mean()) if len(yhat) else 0.0
    cells = []
    for key in keys:
        mask = _key_mask(ds, key)
        n = int(mask.sum())
        value = _cell_value(metric, y[mask], yhat[mask], global_ppr)
        cells.append(GridCell(key=key, n=n, value=value, low_support=n < min_support))
    return SubgroupGrid(metric=metric, cells=tuple(cells), min_support=min_support)


# -- per-row statistics the finder consumes ---------------------------------


def error_indicator(y, yhat) -> np.ndarray:
    return (np.asarray(y) != np.asarray(yhat)).astype(np.float64)


def residual(y, scores) -> np.ndarray:
    return np.asarray(y, np.float64) - np.asarray(scores, np.float64)


# -- heterogeneity finder ----------------------------------------------------


@dataclass(frozen=True)
class Condition:
    column: str
    kind: str  # "le" | "gt" | "in" | "not_in"
    threshold: float | None = None
    categories: tuple[str, ...] | None = None

    def describe(self) -> str:
        if self.kind == "le":
            return f"{self.column} <= {self.threshold:g}"
        if self.kind == "gt":
            return f"{self.column} > {self.threshold:g}"
        inner = ",".join(self.categories)
        op = "in" if self.kind == "in" else "not in"
        return f"{self.column} {op} {{{inner}}}"


@dataclass(frozen=True)
class Predicate:
    """Conjunction of tree-path conditions; evaluable on any dataset that
    shares the schema."""

    conditions: tuple[Condition, ...]

    def describe(self) -> str:
        if not self.conditions:
            return "(all rows)"
        return " and ".join(c.describe() for c in self.conditions)

    def mask(self, ds: TabularDataset) -> np.ndarray:
        out = np.ones(ds.n_rows, dtype=bool)
        for c in self.conditions:
            values = ds.column(c.column)
            if c.kind == "le":
                out &= values <= c.threshold
            elif c.kind == "gt":
                out &= values > c.threshold
            else:
                col = ds.schema.column(c.column)
                codes = [col.categories.index(name) for name in c.categories]
                member = np.isin(values, codes)
                out &= member if c.kind == "in" else ~member
        return out


@dataclass(frozen=True)
class HeterogeneityFinding:
    predicate: Predicate
    n_discovery: int
    n_confirmation: int
    discovery_mean: float
    confirmation_mean: float | None
    discovery_deviation: float
    confirmation_deviation: float | None
    p_value: float | None
    adjusted_p: float | None
    confirmed: bool


@dataclass(frozen=True)
class HeterogeneityConfig:
    delta: float
    alpha: float
    split_fraction: float
    max_depth: int
    min_leaf: int
    seed: int = 0

    def __post_init__(self):
        if self.delta <= 0:
            raise BadConfig(f"delta must be > 0, got {self.delta}")
        if not 0.0 < self.alpha < 1.0:
            raise BadConfig(f"alpha must be in (0,1), got {self.alpha}")
        if not 0.0 < self.split_fraction < 1.0:
            raise BadConfig(f"split_fraction must be in (0,1), got {self.split_fraction}")
        if self.max_depth < 1:
            raise BadConfig(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_leaf < 1:
            raise BadConfig(f"min_leaf must be >= 1, got {self.min_leaf}")


def split_membership(ds: TabularDataset, split_fraction: float, seed: int) -> np.ndarray:
    """True = discovery half. Membership hashes the id column when present,
    so it survives row reordering; otherwise it hashes the row index."""
    id_col = next((c for c in ds.schema.columns if c.role == "id"), None)
    salt = derive_seed(seed, 0x5EED) & 0xFFFFFFFF
    if id_col is not None:
        ids = ds.column(id_col.name)
        draws = np.asarray([hash64(str(v), salt) for v in ids], np.uint64)
    else:
        draws = np.asarray([hash64(str(i), salt) for i in range(ds.n_rows)], np.uint64)
    return draws < np.uint64(split_fraction * 2.0**64)


def _audit_layout(schema: Schema):
    """All non-label, non-id columns as tree features (time counts as
    numeric)."""
    names, kinds, ncat = [], [], []
    for col in schema.columns:
        if col.role in ("label", "id"):
            continue
        names.append(col.name)
        if col.categories is not None:
            kinds.append(1)
            ncat.append(len(col.categories))
        else:
            kinds.append(0)
            ncat.append(0)
    return names, np.asarray(kinds, np.int8), np.asarray(ncat, np.int64)


def _path_predicates(tree: DecisionTree, names, kinds, schema: Schema) -> dict[int, Predicate]:
    """Leaf node id -> conjunction of the conditions along its root path."""
    out = {}

    def walk(nid: int, conditions: tuple):
        f = int(tree.feature[nid])
        if f < 0:
            out[nid] = Predicate(conditions)
            return
        name = names[f]
        if kinds[f] == 0:
            t = float(tree.threshold[nid])
            walk(int(tree.left[nid]), conditions + (Condition(name, "le", threshold=t),))
            walk(int(tree.right[nid]), conditions + (Condition(name, "gt", threshold=t),))
        else:
            cats = schema.column(name).categories
            mask = int(tree.catmask[nid])
            left_cats = tuple(cats[c] for c in range(len(cats)) if (mask >> c) & 1)
            walk(int(tree.left[nid]), conditions + (Condition(name, "in", categories=left_cats),))
            walk(int(tree.right[nid]), conditions + (Condition(name, "not_in", categories=left_cats),))

    walk(0, ())
    return out


def find_heterogeneity(ds: TabularDataset, statistic, config: HeterogeneityConfig) -> list[HeterogeneityFinding]:
    """Discovery-half tree leaves deviating >= delta from the global mean,
    confirmed (or not) on the confirmation half.

    Returned findings are every candidate leaf, in tree order, each carrying
    both halves' estimates; confirmed is the Bonferroni-adjusted verdict.
    """
    statistic = np.asarray(statistic, np.float64)
    if len(statistic) != ds.n_rows:
        raise BadConfig(f"statistic has {len(statistic)} values for {ds.n_rows} rows")
    if ds.n_rows < 2 * config.min_leaf:
        raise TooFewRows(f"need at least {2 * config.min_leaf} rows, have {ds.n_rows}")

    discovery = split_membership(ds, config.split_fraction, config.seed)
    disc_rows = np.flatnonzero(discovery).astype(np.int64)
    conf_rows = np.flatnonzero(~discovery).astype(np.int64)
    if len(disc_rows) < config.min_leaf or len(conf_rows) < config.min_leaf:
        raise TooFewRows("a split half is smaller than min_leaf")

    names, kinds, ncat = _audit_layout(ds.schema)
    if (ncat > 63).any():
        raise BadConfig("categorical features are limited to 63 categories")
    if not names:
        raise BadConfig("no non-label columns to search over")
    X = np.empty((ds.n_rows, len(names)), np.float64)
    for j, name in enumerate(names):
        X[:, j] = ds.column(name)

    tree = DecisionTree(*_treekernel.build_tree(
        X, statistic, disc_rows, kinds,
        len(names), 2 * config.min_leaf - 1, config.min_leaf, config.max_depth,
        np.uint64(derive_seed(config.seed, 1)),
    ))

    global_disc = float(statistic[disc_rows].mean())
    global_conf = float(statistic[conf_rows].mean())
    leaf_means = tree.vsum / tree.vcount
    candidates = [
        nid for nid in range(tree.n_nodes)
        if tree.feature[nid] < 0 and abs(leaf_means[nid] - global_disc) >= config.delta
    ]
    if not candidates:
        return []
    predicates = _path_predicates(tree, names, kinds, ds.schema)

    findings = []
    for nid in candidates:
        pred = predicates[nid]
        full_mask = pred.mask(ds)
        conf_sel = full_mask & ~discovery
        n_conf = int(conf_sel.sum())
        disc_mean = float(leaf_means[nid])
        conf_mean = None
        conf_dev = None
        p_value = None
        adjusted = None
        confirmed = False
        inside = statistic[conf_sel]
        outside = statistic[~full_mask & ~discovery]
        if n_conf >= 2 and len(outside) >= 2:
            conf_mean = float(inside.mean())
            conf_dev = conf_mean - global_conf
            t = stats.ttest_ind(inside, outside, equal_var=False)
            p_value = float(t.pvalue)
            if math.isnan(p_value):
                # zero variance on both sides: means either differ surely or not at all
                p_value = 0.0 if inside.mean() != outside.mean() else 1.0
            adjusted = min(1.0, p_value * len(candidates))
            confirmed = adjusted <= config.alpha and abs(conf_dev) >= config.delta
        findings.append(
            HeterogeneityFinding(
                predicate=pred,
                n_discovery=int(tree.vcount[nid]),
                n_confirmation=n_conf,
                discovery_mean=disc_mean,
                confirmation_mean=conf_mean,
                discovery_deviation=disc_mean - global_disc,
                confirmation_deviation=conf_dev,
                p_value=p_value,
                adjusted_p=adjusted,
                confirmed=confirmed,
            )
        )
    return findings
