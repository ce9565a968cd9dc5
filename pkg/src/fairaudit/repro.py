"""Reproducibility analysis across forest variants.

Trains a named grid of hyperparameter variants on identical rows, thresholds
them with one rule, and compares the predicted-positive row-index sets with
Jaccard similarity, overall and within each protected group.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import BadConfig, LengthMismatch
from .forest import ForestConfig, ThresholdRule, classify, train_forest
from .tabular import TabularDataset

OVERRIDE_FIELDS = ("n_trees", "min_node_size", "mtry", "seed")


@dataclass(frozen=True)
class Variant:
    name: str
    overrides: tuple  # of (field, value) pairs

    def resolve(self, base: ForestConfig) -> ForestConfig:
        return replace(base, **dict(self.overrides))


@dataclass(frozen=True)
class VariantGrid:
    base: ForestConfig
    variants: tuple[Variant, ...]

    def __post_init__(self):
        if len(self.variants) < 2:
            raise BadConfig(f"need at least 2 variants, got {len(self.variants)}")
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise BadConfig(f"variant names must be unique, got {names}")
        for v in self.variants:
            for field, _ in v.overrides:
                if field not in OVERRIDE_FIELDS:
                    raise BadConfig(
                        f"variant {v.name!r} overrides {field!r}; "
                        f"allowed: {OVERRIDE_FIELDS}"
                    )
        self.configs()  # surface invalid override values now

    def configs(self) -> dict[str, ForestConfig]:
        return {v.name: v.resolve(self.base) for v in self.variants}


def default_grid(base: ForestConfig | None = None) -> VariantGrid:
    """The four-forest grid: 750/1, 250/1, 500/5, 500/15 (n_trees/min_node_size)."""
    base = base if base is not None else ForestConfig()
    return VariantGrid(
        base=base,
        variants=(
            Variant("RF1", (("n_trees", 750), ("min_node_size", 1))),
            Variant("RF2", (("n_trees", 250), ("min_node_size", 1))),
            Variant("RF3", (("n_trees", 500), ("min_node_size", 5))),
            Variant("RF4", (("n_trees", 500), ("min_node_size", 15))),
        ),
    )


@dataclass(frozen=True)
class VariantPredictions:
    names: tuple[str, ...]
    predictions: tuple[np.ndarray, ...]  # hard 0/1 labels, one array per variant

    def positive_sets(self) -> list[np.ndarray]:
        return [np.flatnonzero(p == 1) for p in self.predictions]


def run_variants(
    train_ds: TabularDataset,
    eval_ds: TabularDataset,
    grid: VariantGrid,
    rule: ThresholdRule,
) -> VariantPredictions:
    """Train every variant on the same rows and classify eval rows with the
    same rule. Variants inherit the base seed unless they override it, so
    differences reflect hyperparameters rather than sampling.
    """
    names = []
    predictions = []
    for variant in grid.variants:
        config = variant.resolve(grid.base)
        model = train_forest(train_ds, config)
        scores = model.predict_scores(eval_ds)
        names.append(variant.name)
        predictions.append(classify(scores, rule))
    return VariantPredictions(tuple(names), tuple(predictions))


def jaccard(a, b) -> float:
    a = np.unique(np.asarray(a, dtype=np.int64))
    b = np.unique(np.asarray(b, dtype=np.int64))
    if len(a) == 0 and len(b) == 0:
        return 1.0
    inter = len(np.intersect1d(a, b, assume_unique=True))
    return inter / (len(a) + len(b) - inter)


@dataclass(frozen=True)
class SimilarityMatrix:
    group: str  # "(all)" for the unrestricted matrix
    names: tuple[str, ...]
    values: np.ndarray

    def entry(self, a: str, b: str) -> float:
        return float(self.values[self.names.index(a), self.names.index(b)])


ALL_ROWS = "(all)"


def _matrix(group, names, sets) -> SimilarityMatrix:
    k = len(sets)
    values = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            values[i, j] = values[j, i] = jaccard(sets[i], sets[j])
    values.setflags(write=False)
    return SimilarityMatrix(group=group, names=names, values=values)


def per_group_similarity(
    results: VariantPredictions, groups, group_names=None
) -> list[SimilarityMatrix]:
    """One Jaccard matrix per group value plus an all-rows matrix (last)."""
    if len(results.names) < 2:
        raise BadConfig("similarity needs at least 2 variants")
    groups = np.asarray(groups)
    for p in results.predictions:
        if len(p) != len(groups):
            raise LengthMismatch(
                f"predictions cover {len(p)} rows but groups cover {len(groups)}"
            )
    positive = results.positive_sets()
    matrices = []
    for g in np.unique(groups):
        rows = np.flatnonzero(groups == g)
        sets = [np.intersect1d(s, rows, assume_unique=True) for s in positive]
        label = group_names[g] if group_names is not None else str(g)
        matrices.append(_matrix(label, results.names, sets))
    matrices.append(_matrix(ALL_ROWS, results.names, positive))
    return matrices


def matrix_payload(matrices: list[SimilarityMatrix]) -> dict:
    return {
        m.group: {
            "variants": list(m.names),
            "jaccard": [[float(v) for v in row] for row in m.values],
        }
        for m in matrices
    }
