"""Global surrogate decision trees: fit a shallow CART tree to a black-box
forest's outputs, optionally restricted to one protected group, and report
how faithfully the tree mimics the black box on held-out rows.

The surrogate never sees the true label; its targets are black-box scores
(regression tree, fidelity R^2) or thresholded hard labels (agreement rate).
The conditioning column is excluded from the surrogate's features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _treekernel, svg
from .errors import BadConfig, EmptyAfterFilter, UnknownGroup
from .forest import DecisionTree, RandomForest, ThresholdRule, classify
from .rng import derive_seed
from .tabular import FeatureLayout, Schema, TabularDataset, feature_layout, feature_matrix, split_random

TARGETS = ("score", "hard")
FIT_FRACTION = 0.8


@dataclass(frozen=True)
class SurrogateConfig:
    max_depth: int = 3
    target: str = "score"
    rule: ThresholdRule | None = None
    row_filter: tuple[str, str] | None = None
    exclude_columns: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise BadConfig(f"max_depth must be >= 1, got {self.max_depth}")
        if self.target not in TARGETS:
            raise BadConfig(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.target == "hard" and self.rule is None:
            raise BadConfig("target 'hard' needs a threshold rule")
        if self.row_filter is not None and len(self.row_filter) != 2:
            raise BadConfig("row_filter must be (column, category)")


@dataclass(frozen=True, eq=False)
class SurrogateResult:
    tree: DecisionTree
    layout: FeatureLayout
    config: SurrogateConfig
    filtered_rows: np.ndarray  # indices into the input dataset
    fit_rows: np.ndarray
    fidelity_rows: np.ndarray
    fidelity_r2: float | None
    r2_undefined: bool
    agreement: float | None
    train_fidelity_r2: float | None
    train_agreement: float | None
    # cached held-out arrays so per-group fidelity is a pure recount
    eval_target: np.ndarray
    eval_pred: np.ndarray
    eval_hard_target: np.ndarray
    eval_hard_pred: np.ndarray

    @property
    def n_rows_used(self) -> int:
        return len(self.filtered_rows)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.asarray(X, np.float64))
        leaves = self.tree.apply(X, self.layout.kinds)
        return self.tree.leaf_values()[leaves]


def _r2(target, pred) -> tuple[float | None, bool]:
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        return None, True
    ss_res = float(np.sum((target - pred) ** 2))
    return 1.0 - ss_res / ss_tot, False


def _hard(scores, rule: ThresholdRule | None) -> np.ndarray:
    if rule is None:
        rule = ThresholdRule("fixed", 0.5)
    return classify(scores, rule)


def fit_surrogate(
    blackbox: RandomForest, rows: TabularDataset, config: SurrogateConfig
) -> SurrogateResult:
    """Fit the surrogate on 80% of the (filtered) rows and measure fidelity
    on the remaining 20%; the reported numbers are always the held-out ones.
    """
    exclude = set(config.exclude_columns)
    if config.row_filter is not None:
        filter_col, category = config.row_filter
        col = rows.schema.column(filter_col)
        if col.categories is None or category not in col.categories:
            raise UnknownGroup(
                f"{category!r} is not a category of column {filter_col!r}"
            )
        code = col.categories.index(category)
        filtered = np.flatnonzero(rows.column(filter_col) == code).astype(np.int64)
        exclude.add(filter_col)
    else:
        filtered = np.arange(rows.n_rows, dtype=np.int64)
    if len(filtered) == 0:
        raise EmptyAfterFilter(f"no rows to explain (filter {config.row_filter})")

    view = rows.select(filtered)
    layout = feature_layout(view, exclude=tuple(sorted(exclude)))
    if not layout.names:
        raise BadConfig("every feature column was excluded")
    X = feature_matrix(view, layout)
    scores = blackbox.predict_scores(view)
    if config.target == "score":
        target = scores.astype(np.float64)
    else:
        target = _hard(scores, config.rule).astype(np.float64)

    plan = split_random(view, FIT_FRACTION, seed=config.seed)
    fit_idx, eval_idx = plan.train_indices, plan.eval_indices
    arrays = _treekernel.build_tree(
        X,
        target,
        fit_idx,
        layout.kinds,
        len(layout.names),
        1,
        1,
        config.max_depth,
        np.uint64(derive_seed(config.seed, 0x5C)),
    )
    tree = DecisionTree(*arrays)
    pred = tree.leaf_values()[tree.apply(X, layout.kinds)]

    def fidelity(idx):
        t, p = target[idx], pred[idx]
        r2, undefined = (_r2(t, p) if config.target == "score" else (None, False))
        hard_t = _hard(t, config.rule) if config.target == "score" else t.astype(np.int64)
        hard_p = _hard(p, config.rule) if config.target == "score" else (p >= 0.5).astype(np.int64)
        agreement = float(np.mean(hard_t == hard_p))
        return r2, undefined, agreement, t, p, hard_t, hard_p

    r2, undefined, agreement, et, ep, eht, ehp = fidelity(eval_idx)
    train_r2, _, train_agreement, *_ = fidelity(fit_idx)
    return SurrogateResult(
        tree=tree,
        layout=layout,
        config=config,
        filtered_rows=filtered,
        fit_rows=filtered[fit_idx],
        fidelity_rows=filtered[eval_idx],
        fidelity_r2=r2,
        r2_undefined=undefined,
        agreement=agreement,
        train_fidelity_r2=train_r2,
        train_agreement=train_agreement,
        eval_target=et,
        eval_pred=ep,
        eval_hard_target=eht,
        eval_hard_pred=ehp,
    )


@dataclass(frozen=True)
class GroupFidelity:
    group: str
    n: int
    fidelity_r2: float | None
    r2_undefined: bool
    agreement: float | None
    low_support: bool


def fidelity_by_group(
    result: SurrogateResult,
    rows: TabularDataset,
    group_column: str,
    min_support: int = 20,
) -> tuple[GroupFidelity, ...]:
    """Recount fidelity per group over the held-out fidelity rows.

    Hard labels are the ones already assigned on the full fidelity split
    (a top-q cut is not re-applied inside each group). Groups with no rows
    get undefined entries; every group below min_support is flagged.
    """
    col = rows.schema.column(group_column)
    if col.categories is None:
        raise BadConfig(f"column {group_column!r} is not categorical")
    codes = rows.column(group_column)[result.fidelity_rows]
    table = []
    for code, category in enumerate(col.categories):
        idx = np.flatnonzero(codes == code)
        n = len(idx)
        if n == 0:
            table.append(GroupFidelity(category, 0, None, True, None, True))
            continue
        if result.config.target == "score":
            r2, undefined = _r2(result.eval_target[idx], result.eval_pred[idx])
        else:
            r2, undefined = None, False
        agreement = float(
            np.mean(result.eval_hard_target[idx] == result.eval_hard_pred[idx])
        )
        table.append(
            GroupFidelity(category, n, r2, undefined, agreement, n < min_support)
        )
    return tuple(table)


def _split_label(tree: DecisionTree, i: int, layout: FeatureLayout, schema: Schema) -> str:
    name = layout.names[tree.feature[i]]
    if not np.isnan(tree.threshold[i]):
        return f"{name} <= {tree.threshold[i]:.4g}"
    mask = int(tree.catmask[i])
    try:
        categories = schema.column(name).categories or ()
    except Exception:
        categories = ()
    labels = [
        str(categories[c]) if c < len(categories) else str(c)
        for c in range(64)
        if (mask >> c) & 1
    ]
    return f"{name} in {{{', '.join(labels)}}}"


def _leaf_label(tree: DecisionTree, i: int) -> str:
    count = tree.vcount[i]
    mean = tree.vsum[i] / count
    return f"n={int(count)} mean={mean:.3f}"


def tree_outline(tree: DecisionTree, layout: FeatureLayout, schema: Schema) -> dict:
    """Nested {label, left, right} dict; left is the condition-true branch."""

    def node(i: int) -> dict:
        if tree.feature[i] < 0:
            return {"label": _leaf_label(tree, i)}
        return {
            "label": _split_label(tree, i, layout, schema),
            "left": node(int(tree.left[i])),
            "right": node(int(tree.right[i])),
        }

    return node(0)


def render_tree(tree: DecisionTree, layout: FeatureLayout, schema: Schema, style: str = "text"):
    """Deterministic rendering: style 'text' returns an indented outline
    (str), style 'svg' returns SVG bytes. Left branch means condition true.
    """
    root = tree_outline(tree, layout, schema)
    if style == "text":
        lines = []

        def walk(node, indent, tag):
            lines.append("  " * indent + tag + node["label"])
            if "left" in node:
                walk(node["left"], indent + 1, "T: ")
                walk(node["right"], indent + 1, "F: ")

        walk(root, 0, "")
        return "\n".join(lines)
    if style == "svg":
        return svg.emit_svg({"kind": "tree", "root": root})
    raise BadConfig(f"unknown style {style!r}; expected 'text' or 'svg'")
