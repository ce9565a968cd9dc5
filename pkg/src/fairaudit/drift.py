"""Rolling temporal evaluation: train on a window of periods, evaluate on
the next one, and track balanced accuracy alongside group fairness metrics
so that fairness drift is visible even when the overall metric stays flat.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadConfig, EmptyPeriod, TooFewPeriods, Undefined, UnknownGroup
from .fairmetrics import (
    GroupMetrics,
    balanced_accuracy,
    confusion,
    fairness_report,
    group_metrics,
)
from .forest import ForestConfig, ThresholdRule, classify, train_forest, with_seed
from .rng import derive_seed
from .tabular import TabularDataset, slice_by_time


@dataclass(frozen=True)
class DriftProtocolConfig:
    model: ForestConfig
    rule: ThresholdRule
    protected: str
    reference: str
    train_window: int = 1
    eval_offset: int = 1

    def __post_init__(self):
        if self.train_window < 1:
            raise BadConfig(f"train_window must be >= 1, got {self.train_window}")
        if self.eval_offset < 1:
            raise BadConfig(f"eval_offset must be >= 1, got {self.eval_offset}")


@dataclass(frozen=True)
class DriftRecord:
    train_periods: tuple[int, ...]
    eval_period: int
    n_train: int
    n_eval: int
    balanced_accuracy: float | None
    delta_balanced_accuracy: float | None
    parity_difference: float | None
    fnr_difference: float | None
    base_rate_difference: float | None
    per_group: GroupMetrics


@dataclass(frozen=True)
class DriftSeries:
    protected: str
    reference: str
    records: tuple[DriftRecord, ...]

    def metric_series(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]


def run_rolling_protocol(
    ds: TabularDataset, config: DriftProtocolConfig, periods=None
) -> DriftSeries:
    """Train a fresh forest per (window, eval) pair and report the series.

    Periods default to the distinct values of the time column in ascending
    order; passing them explicitly lets callers demand periods that must be
    present (EmptyPeriod if one has no rows). Thresholding is re-applied on
    each eval period's scores, so a top-q rule is per-period by design.
    """
    col = ds.schema.column(config.protected)
    if config.reference not in (col.categories or ()):
        raise UnknownGroup(
            f"reference {config.reference!r} is not a category of {config.protected!r}"
        )
    categories = np.asarray(col.categories)

    by_period = dict(slice_by_time(ds))
    if periods is None:
        period_list = sorted(by_period)
    else:
        period_list = [int(p) for p in periods]
        if sorted(set(period_list)) != period_list:
            raise BadConfig("periods must be strictly ascending and unique")
        for p in period_list:
            if p not in by_period:
                raise EmptyPeriod(f"period {p} has no rows")
    span = config.train_window + config.eval_offset
    if len(period_list) < span:
        raise TooFewPeriods(
            f"need at least {span} periods for window {config.train_window} "
            f"and offset {config.eval_offset}, got {len(period_list)}"
        )

    records = []
    previous_ba = None
    for i in range(len(period_list) - span + 1):
        window = tuple(period_list[i : i + config.train_window])
        eval_period = period_list[i + span - 1]
        train_idx = np.concatenate([by_period[p] for p in window])
        eval_idx = by_period[eval_period]
        assert np.intersect1d(train_idx, eval_idx).size == 0

        model_config = with_seed(config.model, derive_seed(config.model.seed, eval_period))
        model = train_forest(ds.select(train_idx), model_config)
        eval_ds = ds.select(eval_idx)
        scores = model.predict_scores(eval_ds)
        yhat = classify(scores, config.rule)
        y = np.asarray(eval_ds.labels())
        groups = categories[eval_ds.group_codes(config.protected)]

        try:
            ba = balanced_accuracy(confusion(y, yhat))
        except Undefined:
            ba = None
        delta = None
        if ba is not None and previous_ba is not None:
            delta = ba - previous_ba
        previous_ba = ba

        report = fairness_report(y, yhat, groups, reference_group=config.reference)
        per_group = group_metrics(y, yhat, groups, expected_groups=col.categories)
        records.append(
            DriftRecord(
                train_periods=window,
                eval_period=eval_period,
                n_train=len(train_idx),
                n_eval=len(eval_idx),
                balanced_accuracy=ba,
                delta_balanced_accuracy=delta,
                parity_difference=report.parity_difference,
                fnr_difference=report.fnr_difference,
                base_rate_difference=report.base_rate_difference,
                per_group=per_group,
            )
        )
    return DriftSeries(
        protected=config.protected, reference=config.reference, records=tuple(records)
    )


@dataclass(frozen=True)
class AlertThresholds:
    """Thresholds for detect_alerts; None disables a rule."""

    max_delta_balanced_accuracy: float | None = None
    max_parity_difference: float | None = None
    max_fnr_difference: float | None = None
    min_group_balanced_accuracy: float | None = None


@dataclass(frozen=True)
class Alert:
    eval_period: int
    kind: str
    value: float
    threshold: float
    group: str | None = None


def detect_alerts(series: DriftSeries, thresholds: AlertThresholds) -> list[Alert]:
    """One alert per (record, violated threshold); group rules alert per group."""
    if not series.records:
        raise BadConfig("series has no records")
    t = thresholds
    alerts = []
    for record in series.records:
        checks = (
            ("delta_balanced_accuracy", record.delta_balanced_accuracy,
             t.max_delta_balanced_accuracy),
            ("parity_difference", record.parity_difference, t.max_parity_difference),
            ("fnr_difference", record.fnr_difference, t.max_fnr_difference),
        )
        for kind, value, limit in checks:
            if limit is not None and value is not None and abs(value) > limit:
                alerts.append(Alert(record.eval_period, kind, value, limit))
        if t.min_group_balanced_accuracy is not None:
            for row in record.per_group.rows:
                ba = row.balanced_accuracy
                if ba is not None and ba < t.min_group_balanced_accuracy:
                    alerts.append(
                        Alert(
                            record.eval_period,
                            "group_balanced_accuracy",
                            ba,
                            t.min_group_balanced_accuracy,
                            group=str(row.group),
                        )
                    )
    return alerts


def series_payload(series: DriftSeries) -> dict:
    """JSON-ready view of the series (None kept; report layer renames it)."""
    records = []
    for r in series.records:
        rows = {
            str(row.group): {
                "n": row.n,
                "base_rate": row.base_rate,
                "pred_positive_rate": row.pred_positive_rate,
                "fnr": row.fnr,
                "fpr": row.fpr,
                "balanced_accuracy": row.balanced_accuracy,
            }
            for row in r.per_group.rows
        }
        records.append(
            {
                "train_periods": list(r.train_periods),
                "eval_period": r.eval_period,
                "n_train": r.n_train,
                "n_eval": r.n_eval,
                "balanced_accuracy": r.balanced_accuracy,
                "delta_balanced_accuracy": r.delta_balanced_accuracy,
                "parity_difference": r.parity_difference,
                "fnr_difference": r.fnr_difference,
                "base_rate_difference": r.base_rate_difference,
                "per_group": rows,
            }
        )
    return {
        "protected": series.protected,
        "reference": series.reference,
        "records": records,
    }
