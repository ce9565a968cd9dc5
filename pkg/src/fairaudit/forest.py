"""Random-forest classifier: training, scoring, threshold rules, rejection.

Trees are greedy CART with Gini splits (see _treekernel for the criterion
equivalence), grown on bootstrap resamples with a per-node feature subsample.
Every source of randomness is derived from the config seed, so a trained
forest is a pure function of (data, config) no matter how many threads run.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import _treekernel
from .errors import (
    ArityMismatch,
    BadBand,
    BadConfig,
    EmptyScores,
    EmptyTraining,
)
from .rng import derive_seed, generator
from .tabular import FeatureLayout, TabularDataset, feature_layout, feature_matrix

THREADS_ENV = "FAIRAUDIT_THREADS"
ABSTAIN = -1

SERIAL_FORMAT = "fairaudit.forest"
SERIAL_VERSION = 1


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise BadConfig(f"{THREADS_ENV} must be an integer, got {raw!r}")
    return max(1, value)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    min_node_size: int = 1
    max_depth: int | None = None
    mtry: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise BadConfig(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_node_size < 1:
            raise BadConfig(f"min_node_size must be >= 1, got {self.min_node_size}")
        if self.max_depth is not None and self.max_depth < 1:
            raise BadConfig(f"max_depth must be >= 1, got {self.max_depth}")
        if self.mtry is not None and self.mtry < 1:
            raise BadConfig(f"mtry must be >= 1, got {self.mtry}")


def resolved_mtry(config: ForestConfig, p: int) -> int:
    if config.mtry is not None:
        if config.mtry > p:
            raise BadConfig(f"mtry {config.mtry} exceeds feature count {p}")
        return config.mtry
    return max(1, int(math.isqrt(p)))


class DecisionTree:
    """Flat-array CART tree; leaves carry the class counts of their rows."""

    __slots__ = ("feature", "threshold", "catmask", "left", "right", "vsum", "vcount")

    def __init__(self, feature, threshold, catmask, left, right, vsum, vcount):
        self.feature = feature
        self.threshold = threshold
        self.catmask = catmask
        self.left = left
        self.right = right
        self.vsum = vsum
        self.vcount = vcount

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray, kinds: np.ndarray) -> np.ndarray:
        return _treekernel.apply_tree(
            X, kinds, self.feature, self.threshold, self.catmask, self.left, self.right
        )

    def leaf_values(self) -> np.ndarray:
        """Per-node mean target (positive fraction for classification)."""
        return self.vsum / self.vcount

    def nodes_payload(self) -> list[dict]:
        nodes = []
        for i in range(self.n_nodes):
            f = int(self.feature[i])
            if f < 0:
                n = self.vcount[i]
                n1 = self.vsum[i]
                nodes.append({"leaf": True, "n0": int(n - n1), "n1": int(n1)})
            else:
                node = {"feature": f}
                if math.isnan(self.threshold[i]):
                    mask = int(self.catmask[i])
                    node["left_categories"] = [c for c in range(64) if (mask >> c) & 1]
                else:
                    node["threshold"] = float(self.threshold[i])
                node["left"] = int(self.left[i])
                node["right"] = int(self.right[i])
                nodes.append(node)
        return nodes

    @classmethod
    def from_nodes_payload(cls, nodes: list[dict]) -> "DecisionTree":
        n = len(nodes)
        feature = np.full(n, -1, np.int64)
        threshold = np.full(n, np.nan, np.float64)
        catmask = np.zeros(n, np.int64)
        left = np.full(n, -1, np.int64)
        right = np.full(n, -1, np.int64)
        vsum = np.zeros(n, np.float64)
        vcount = np.zeros(n, np.float64)
        for i, node in enumerate(nodes):
            if node.get("leaf"):
                vsum[i] = node["n1"]
                vcount[i] = node["n0"] + node["n1"]
            else:
                feature[i] = node["feature"]
                if "threshold" in node:
                    threshold[i] = node["threshold"]
                else:
                    mask = 0
                    for c in node["left_categories"]:
                        mask |= 1 << c
                    catmask[i] = mask
                left[i] = node["left"]
                right[i] = node["right"]
        return cls(feature, threshold, catmask, left, right, vsum, vcount)


class RandomForest:
    """Bagged CART trees; the score is the mean per-tree leaf fraction."""

    def __init__(self, trees: list[DecisionTree], config: ForestConfig, layout: FeatureLayout):
        self.trees = trees
        self.config = config
        self.layout = layout
        self.n_features = len(layout.names)
        self._flat = None

    def _flatten(self):
        if self._flat is None:
            offsets = np.zeros(len(self.trees) + 1, np.int64)
            for i, tree in enumerate(self.trees):
                offsets[i + 1] = offsets[i] + tree.n_nodes
            self._flat = (
                np.concatenate([t.feature for t in self.trees]),
                np.concatenate([t.threshold for t in self.trees]),
                np.concatenate([t.catmask for t in self.trees]),
                np.concatenate([t.left for t in self.trees]),
                np.concatenate([t.right for t in self.trees]),
                np.concatenate([t.vsum for t in self.trees]),
                np.concatenate([t.vcount for t in self.trees]),
                offsets,
            )
        return self._flat

    def predict_scores(self, rows) -> np.ndarray:
        """Mean leaf positive fraction per row, in [0, 1].

        rows: a TabularDataset sharing the training schema, or a float
        matrix whose columns follow the training feature layout.
        """
        X = self._as_matrix(rows)
        feature, threshold, catmask, left, right, vsum, vcount, offsets = self._flatten()
        out = np.empty(len(X), np.float64)
        _treekernel.predict_mean_sum(
            X, self.layout.kinds, feature, threshold, catmask, left, right, vsum, vcount, offsets, out
        )
        return out / len(self.trees)

    def _as_matrix(self, rows) -> np.ndarray:
        if isinstance(rows, TabularDataset):
            X = np.empty((rows.n_rows, self.n_features), np.float64)
            for j, name in enumerate(self.layout.names):
                X[:, j] = rows.column(name)
            return X
        X = np.ascontiguousarray(np.asarray(rows, np.float64))
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ArityMismatch(
                f"expected {self.n_features} feature columns, got shape {X.shape}"
            )
        return X


def _training_arrays(ds: TabularDataset, extra_features: tuple[str, ...]):
    layout = feature_layout(ds)
    if extra_features:
        names = list(layout.names)
        kinds = list(layout.kinds)
        ncat = list(layout.n_categories)
        for name in extra_features:
            col = ds.schema.column(name)
            if col.categories is None:
                raise BadConfig(f"extra feature {name!r} is not categorical")
            names.append(name)
            kinds.append(1)
            ncat.append(len(col.categories))
        layout = FeatureLayout(tuple(names), np.asarray(kinds, np.int8), np.asarray(ncat, np.int64))
    if (layout.n_categories > 63).any():
        raise BadConfig("categorical features are limited to 63 categories")
    X = feature_matrix(ds, layout)
    y = ds.labels().astype(np.float64)
    return X, y, layout


def train_tree(ds: TabularDataset, config: ForestConfig, rng: np.random.Generator,
               extra_features: tuple[str, ...] = ()) -> DecisionTree:
    """Grow one tree with the given stream (kernel seed drawn first, then
    the bootstrap sample)."""
    X, y, layout = _training_arrays(ds, extra_features)
    return _grow(X, y, layout, config, rng)


def _grow(X, y, layout, config, rng) -> DecisionTree:
    n, p = X.shape
    if n == 0 or p == 0:
        raise EmptyTraining(f"cannot train on {n} rows x {p} features")
    kernel_seed = np.uint64(int(rng.integers(0, 2**63)))
    if config.bootstrap:
        rows = rng.integers(0, n, size=n).astype(np.int64)
    else:
        rows = np.arange(n, dtype=np.int64)
    depth = config.max_depth if config.max_depth is not None else _treekernel.NO_DEPTH_LIMIT
    arrays = _treekernel.build_tree(
        X, y, rows, layout.kinds,
        resolved_mtry(config, p), config.min_node_size, 1, depth, kernel_seed,
    )
    return DecisionTree(*arrays)


def train_forest(ds: TabularDataset, config: ForestConfig,
                 extra_features: tuple[str, ...] = ()) -> RandomForest:
    """Train n_trees trees, each on its own stream derived from config.seed.

    Worker threads (FAIRAUDIT_THREADS) only change wall time, never the
    result: tree t always uses stream (seed, t) and lands in slot t.
    """
    X, y, layout = _training_arrays(ds, extra_features)
    if ds.n_rows == 0 or not layout.names:
        raise EmptyTraining(f"cannot train on {ds.n_rows} rows x {len(layout.names)} features")

    def job(t: int) -> DecisionTree:
        return _grow(X, y, layout, config, generator(config.seed, t))

    workers = thread_count()
    if workers == 1 or config.n_trees == 1:
        trees = [job(t) for t in range(config.n_trees)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(job, range(config.n_trees)))
    return RandomForest(trees, config, layout)


def gini_impurity(n0, n1) -> float:
    """Gini impurity of a node with the given class counts."""
    n = n0 + n1
    if n == 0:
        return 0.0
    p1 = n1 / n
    return 2.0 * p1 * (1.0 - p1)


# -- threshold rules -------------------------------------------------------


@dataclass(frozen=True)
class ThresholdRule:
    kind: str  # "fixed" | "top_q"
    value: float

    def __post_init__(self):
        if self.kind == "fixed":
            if not 0.0 <= self.value <= 1.0:
                raise BadConfig(f"fixed threshold must be in [0,1], got {self.value}")
        elif self.kind == "top_q":
            if not 0.0 < self.value < 1.0:
                raise BadConfig(f"top_q fraction must be in (0,1), got {self.value}")
        else:
            raise BadConfig(f"unknown threshold kind {self.kind!r}")


def parse_threshold(text: str) -> ThresholdRule:
    """Parse 'fixed:T' or 'top_q:Q' (the CLI --threshold syntax)."""
    kind, sep, raw = text.partition(":")
    if not sep:
        raise BadConfig(f"threshold must look like fixed:T or top_q:Q, got {text!r}")
    try:
        value = float(raw)
    except ValueError:
        raise BadConfig(f"threshold value {raw!r} is not a number")
    return ThresholdRule(kind, value)


def classify(scores: np.ndarray, rule: ThresholdRule) -> np.ndarray:
    """Hard 0/1 predictions; top_q flags the ceil(q*n) highest scores.

    top_q ties at the cutoff go to the lower row index (stable sort on
    descending score).
    """
    scores = np.asarray(scores, np.float64)
    if scores.size == 0:
        raise EmptyScores("cannot threshold an empty score vector")
    if rule.kind == "fixed":
        return (scores >= rule.value).astype(np.int8)
    k = math.ceil(rule.value * len(scores))
    order = np.argsort(-scores, kind="stable")
    out = np.zeros(len(scores), np.int8)
    out[order[:k]] = 1
    return out


def reject_option_classify(scores: np.ndarray, band: tuple[float, float]) -> np.ndarray:
    """0/1/ABSTAIN per row: abstain inside [lo, hi], else threshold at the
    band midpoint."""
    lo, hi = band
    if not (0.0 <= lo <= hi <= 1.0):
        raise BadBand(f"band must satisfy 0 <= lo <= hi <= 1, got {band}")
    scores = np.asarray(scores, np.float64)
    mid = 0.5 * (lo + hi)
    out = np.where(scores >= mid, 1, 0).astype(np.int8)
    out[(scores >= lo) & (scores <= hi)] = ABSTAIN
    return out


# -- serialization ---------------------------------------------------------


def forest_payload(model: RandomForest) -> dict:
    """JSON-ready document with a fixed field order for stable hashing."""
    return {
        "format": SERIAL_FORMAT,
        "version": SERIAL_VERSION,
        "config": {
            "n_trees": model.config.n_trees,
            "min_node_size": model.config.min_node_size,
            "max_depth": model.config.max_depth,
            "mtry": model.config.mtry,
            "bootstrap": model.config.bootstrap,
            "seed": model.config.seed,
        },
        "n_features": model.n_features,
        "features": [
            {
                "name": model.layout.names[j],
                "kind": "categorical" if model.layout.kinds[j] else "numeric",
                "n_categories": int(model.layout.n_categories[j]),
            }
            for j in range(model.n_features)
        ],
        "trees": [{"nodes": tree.nodes_payload()} for tree in model.trees],
    }


def forest_to_json(model: RandomForest) -> str:
    return json.dumps(forest_payload(model), separators=(",", ":"), allow_nan=False)


def forest_digest(model: RandomForest) -> str:
    return hashlib.sha256(forest_to_json(model).encode("utf-8")).hexdigest()


def forest_from_payload(payload: dict) -> RandomForest:
    if payload.get("format") != SERIAL_FORMAT or payload.get("version") != SERIAL_VERSION:
        raise BadConfig("not a recognized forest document")
    cfg = payload["config"]
    config = ForestConfig(
        n_trees=cfg["n_trees"],
        min_node_size=cfg["min_node_size"],
        max_depth=cfg["max_depth"],
        mtry=cfg["mtry"],
        bootstrap=cfg["bootstrap"],
        seed=cfg["seed"],
    )
    names = tuple(f["name"] for f in payload["features"])
    kinds = np.asarray(
        [1 if f["kind"] == "categorical" else 0 for f in payload["features"]], np.int8
    )
    ncat = np.asarray([f["n_categories"] for f in payload["features"]], np.int64)
    trees = [DecisionTree.from_nodes_payload(t["nodes"]) for t in payload["trees"]]
    return RandomForest(trees, config, FeatureLayout(names, kinds, ncat))


def forest_from_json(text: str) -> RandomForest:
    return forest_from_payload(json.loads(text))


def with_seed(config: ForestConfig, seed: int) -> ForestConfig:
    return replace(config, seed=seed)
