"""Group fairness metrics, calibration-based sufficiency, split conformal.

Rates with empty denominators are explicit None flags, never NaN or a silent
default: tiny protected groups are exactly where a made-up number misleads.
All difference metrics follow the comparison-minus-reference sign convention
with a caller-chosen reference group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadColumn,
    LengthMismatch,
    SplitOverlap,
    TooFewCalibration,
    Undefined,
    UnknownGroup,
)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsRow:
    """All confusion-derived metrics for one group; None marks an undefined
    rate (zero denominator)."""

    group: str
    n: int
    base_rate: float
    pred_positive_rate: float
    tpr: float | None
    fnr: float | None
    fpr: float | None
    precision: float | None
    accuracy: float
    balanced_accuracy: float | None
    confusion: ConfusionCounts


@dataclass(frozen=True)
class GroupMetrics:
    rows: tuple[MetricsRow, ...]
    warnings: tuple[str, ...]

    def by_group(self) -> dict:
        return {row.group: row for row in self.rows}

    @property
    def groups(self) -> tuple:
        return tuple(row.group for row in self.rows)


@dataclass(frozen=True)
class GroupDifference:
    """Comparison-minus-reference differences for one non-reference group."""

    group: str
    parity_difference: float
    base_rate_difference: float
    fnr_difference: float | None
    fpr_difference: float | None
    equalized_odds_gap: float | None


@dataclass(frozen=True)
class FairnessReport:
    reference_group: str
    differences: tuple[GroupDifference, ...]
    per_group: GroupMetrics

    def _worst(self, metric: str):
        """Scalar summary: with one comparison group its value, otherwise the
        largest-magnitude value across groups (sign preserved)."""
        values = [getattr(d, metric) for d in self.differences if getattr(d, metric) is not None]
        if not values:
            return None
        return max(values, key=abs)

    @property
    def parity_difference(self):
        return self._worst("parity_difference")

    @property
    def base_rate_difference(self):
        return self._worst("base_rate_difference")

    @property
    def fnr_difference(self):
        return self._worst("fnr_difference")

    @property
    def fpr_difference(self):
        return self._worst("fpr_difference")

    @property
    def equalized_odds_gap(self):
        values = [d.equalized_odds_gap for d in self.differences if d.equalized_odds_gap is not None]
        return max(values) if values else None


def _as_binary(arr, what: str) -> np.ndarray:
    out = np.asarray(arr)
    if out.size and not np.isin(out, (0, 1)).all():
        raise BadColumn(f"{what} must contain only 0/1 values")
    return out.astype(np.int8)


def confusion(y, yhat) -> ConfusionCounts:
    y = _as_binary(y, "labels")
    yhat = _as_binary(yhat, "predictions")
    if len(y) != len(yhat):
        raise LengthMismatch(f"{len(y)} labels vs {len(yhat)} predictions")
    if len(y) == 0:
        raise LengthMismatch("need at least one row")
    return ConfusionCounts(
        tp=int(((y == 1) & (yhat == 1)).sum()),
        fp=int(((y == 0) & (yhat == 1)).sum()),
        tn=int(((y == 0) & (yhat == 0)).sum()),
        fn=int(((y == 1) & (yhat == 0)).sum()),
    )


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def balanced_accuracy(c: ConfusionCounts) -> float:
    """(TPR + TNR) / 2; constant classifiers land at exactly 0.5."""
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        raise Undefined("balanced accuracy needs both classes in the ground truth")
    return 0.5 * (c.tp / (c.tp + c.fn) + c.tn / (c.tn + c.fp))


def _metrics_row(group, y, yhat) -> MetricsRow:
    c = confusion(y, yhat)
    tpr = _ratio(c.tp, c.tp + c.fn)
    tnr = _ratio(c.tn, c.tn + c.fp)
    return MetricsRow(
        group=group,
        n=c.n,
        base_rate=(c.tp + c.fn) / c.n,
        pred_positive_rate=(c.tp + c.fp) / c.n,
        tpr=tpr,
        fnr=None if tpr is None else 1.0 - tpr,
        fpr=_ratio(c.fp, c.fp + c.tn),
        precision=_ratio(c.tp, c.tp + c.fp),
        accuracy=(c.tp + c.tn) / c.n,
        balanced_accuracy=None if tpr is None or tnr is None else 0.5 * (tpr + tnr),
        confusion=c,
    )


def group_metrics(y, yhat, groups, expected_groups=None) -> GroupMetrics:
    """Per-group metric rows, ordered by group label.

    expected_groups (e.g. the schema's category list) adds a warning record
    for every declared group absent from the evaluated rows.
    """
    y = np.asarray(y)
    yhat = np.asarray(yhat)
    groups = np.asarray(groups)
    if not (len(y) == len(yhat) == len(groups)):
        raise LengthMismatch(
            f"lengths differ: {len(y)} labels, {len(yhat)} predictions, {len(groups)} groups"
        )
    present = [g.item() if hasattr(g, "item") else g for g in np.unique(groups)]
    rows = tuple(
        _metrics_row(g, y[groups == g], yhat[groups == g]) for g in present
    )
    warnings = ()
    if expected_groups is not None:
        warnings = tuple(
            f"group {g!r} absent from evaluated rows"
            for g in expected_groups
            if g not in present
        )
    return GroupMetrics(rows=rows, warnings=warnings)


def _diff(a: float | None, b: float | None) -> float | None:
    if a is None or b is None:
        return None
    return a - b


def fairness_report(y, yhat, groups, reference_group, expected_groups=None) -> FairnessReport:
    """Difference rows (comparison minus reference) per non-reference group."""
    metrics = group_metrics(y, yhat, groups, expected_groups)
    table = metrics.by_group()
    if reference_group not in table:
        raise UnknownGroup(f"reference group {reference_group!r} not in evaluated rows")
    ref = table[reference_group]
    differences = []
    for row in metrics.rows:
        if row.group == reference_group:
            continue
        d_fnr = _diff(row.fnr, ref.fnr)
        d_fpr = _diff(row.fpr, ref.fpr)
        gap = None
        if d_fnr is not None and d_fpr is not None:
            gap = max(abs(d_fnr), abs(d_fpr))
        differences.append(
            GroupDifference(
                group=row.group,
                parity_difference=row.pred_positive_rate - ref.pred_positive_rate,
                base_rate_difference=row.base_rate - ref.base_rate,
                fnr_difference=d_fnr,
                fpr_difference=d_fpr,
                equalized_odds_gap=gap,
            )
        )
    return FairnessReport(
        reference_group=reference_group,
        differences=tuple(differences),
        per_group=metrics,
    )


# -- sufficiency via binned calibration -------------------------------------


@dataclass(frozen=True)
class BinRow:
    """One score bin: per-group positive rates where support suffices."""

    bin: int
    low: float
    high: float
    counts: dict
    rates: dict
    gap: float | None
    qualifies: bool


@dataclass(frozen=True)
class SufficiencyResult:
    gap: float | None
    rows: tuple[BinRow, ...]
    excluded_bins: tuple[int, ...]


def sufficiency_gap(
    y, scores, groups, reference_group, bins: int = 10, min_support: int = 20
) -> SufficiencyResult:
    """Max over supported bins of |P(Y=1 | bin, group) − P(Y=1 | bin, ref)|.

    A bin qualifies only when every present group has at least min_support
    rows in it; other bins are reported but excluded from the gap.
    """
    if bins < 2:
        raise BadColumn(f"need at least 2 bins, got {bins}")
    y = _as_binary(y, "labels")
    scores = np.asarray(scores, np.float64)
    groups = np.asarray(groups)
    if not (len(y) == len(scores) == len(groups)):
        raise LengthMismatch("labels, scores and groups must have equal lengths")
    labels = [g.item() if hasattr(g, "item") else g for g in np.unique(groups)]
    if reference_group not in labels:
        raise UnknownGroup(f"reference group {reference_group!r} not in evaluated rows")
    bin_of = np.minimum((scores * bins).astype(np.int64), bins - 1)
    rows = []
    excluded = []
    gap = None
    multi_group = len(labels) >= 2
    for b in range(bins):
        in_bin = bin_of == b
        counts = {}
        rates = {}
        for g in labels:
            sel = in_bin & (groups == g)
            counts[g] = int(sel.sum())
            rates[g] = float(y[sel].mean()) if counts[g] else None
        qualifies = multi_group and all(c >= min_support for c in counts.values())
        bin_gap = None
        if qualifies:
            ref_rate = rates[reference_group]
            bin_gap = max(abs(rates[g] - ref_rate) for g in labels if g != reference_group)
            gap = bin_gap if gap is None else max(gap, bin_gap)
        else:
            excluded.append(b)
        rows.append(
            BinRow(
                bin=b,
                low=b / bins,
                high=(b + 1) / bins,
                counts=counts,
                rates=rates,
                gap=bin_gap,
                qualifies=qualifies,
            )
        )
    return SufficiencyResult(gap=gap, rows=tuple(rows), excluded_bins=tuple(excluded))


# -- split conformal prediction ----------------------------------------------


@dataclass(frozen=True)
class ConformalCalibrator:
    """Split-conformal threshold: the ⌈(n+1)(1−α)⌉-th smallest conformity
    score on the calibration rows, with conformity = 1 − p(true class)."""

    alpha: float
    threshold: float
    n_cal: int
    cal_indices: frozenset | None = None


def _conformity(y, scores) -> np.ndarray:
    return np.where(np.asarray(y) == 1, 1.0 - scores, scores)


def conformal_calibrate(y_cal, scores_cal, alpha, cal_indices=None) -> ConformalCalibrator:
    y_cal = _as_binary(y_cal, "labels")
    scores_cal = np.asarray(scores_cal, np.float64)
    if len(y_cal) != len(scores_cal):
        raise LengthMismatch("calibration labels and scores differ in length")
    if not 0.0 < alpha < 1.0:
        raise BadColumn(f"alpha must be in (0,1), got {alpha}")
    n = len(y_cal)
    needed = math.ceil(1.0 / alpha) - 1
    if n < needed:
        raise TooFewCalibration(f"alpha={alpha} needs at least {needed} calibration rows, got {n}")
    rank = math.ceil((n + 1) * (1.0 - alpha))  # rank <= n whenever n >= 1/alpha - 1
    threshold = float(np.sort(_conformity(y_cal, scores_cal))[rank - 1])
    return ConformalCalibrator(
        alpha=alpha,
        threshold=threshold,
        n_cal=n,
        cal_indices=frozenset(int(i) for i in cal_indices) if cal_indices is not None else None,
    )


def conformal_sets(calibrator: ConformalCalibrator, scores, eval_indices=None) -> np.ndarray:
    """Boolean (n, 2) membership matrix: column c is 'class c in the set'."""
    if (
        eval_indices is not None
        and calibrator.cal_indices is not None
        and calibrator.cal_indices.intersection(int(i) for i in eval_indices)
    ):
        raise SplitOverlap("evaluation rows overlap the calibration rows")
    scores = np.asarray(scores, np.float64)
    sets = np.empty((len(scores), 2), dtype=bool)
    sets[:, 0] = scores <= calibrator.threshold
    sets[:, 1] = (1.0 - scores) <= calibrator.threshold
    return sets


def marginal_coverage(y, sets) -> float:
    y = _as_binary(y, "labels")
    if len(y) != len(sets):
        raise LengthMismatch("labels and sets differ in length")
    return float(sets[np.arange(len(y)), y.astype(np.int64)].mean())


def group_coverage(y, sets, groups) -> dict:
    y = np.asarray(y)
    groups = np.asarray(groups)
    if not (len(y) == len(sets) == len(groups)):
        raise LengthMismatch("labels, sets and groups must have equal lengths")
    out = {}
    for g in np.unique(groups):
        key = g.item() if hasattr(g, "item") else g
        sel = groups == g
        out[key] = marginal_coverage(y[sel], sets[sel])
    return out
