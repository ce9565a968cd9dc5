from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import spearmanr

from fairaudit.drift import (
    Alert,
    AlertThresholds,
    DriftProtocolConfig,
    DriftRecord,
    DriftSeries,
    detect_alerts,
    run_rolling_protocol,
    series_payload,
)
from fairaudit.errors import (
    BadConfig,
    EmptyPeriod,
    TooFewPeriods,
    UnknownGroup,
)
from fairaudit.fairmetrics import ConfusionCounts, GroupMetrics, MetricsRow
from fairaudit.forest import ForestConfig, ThresholdRule
from fairaudit.synthlab import SynthConfig, generate


def small_config(seed=0, periods=3, n=300):
    return SynthConfig(
        group_coefs=((1.0, -0.5), (1.0, -0.5)),
        n_per_period=n,
        periods=periods,
        noise_sigma=0.5,
        seed=seed,
    )


def protocol(seed=0, **kwargs):
    defaults = dict(
        model=ForestConfig(n_trees=20, seed=seed),
        rule=ThresholdRule("fixed", 0.5),
        protected="group",
        reference="A",
    )
    defaults.update(kwargs)
    return DriftProtocolConfig(**defaults)


def test_seven_periods_give_six_records():
    ds, _ = generate(small_config(periods=7))
    series = run_rolling_protocol(ds, protocol())
    assert len(series.records) == 6
    assert [r.eval_period for r in series.records] == [1, 2, 3, 4, 5, 6]
    assert [r.train_periods for r in series.records] == [(t,) for t in range(6)]
    assert series.records[0].delta_balanced_accuracy is None
    for r in series.records[1:]:
        assert r.delta_balanced_accuracy is not None


def test_two_periods_single_record_no_delta():
    ds, _ = generate(small_config(periods=2))
    series = run_rolling_protocol(ds, protocol())
    assert len(series.records) == 1
    assert series.records[0].delta_balanced_accuracy is None


def test_too_few_periods():
    ds, _ = generate(small_config(periods=1))
    with pytest.raises(TooFewPeriods):
        run_rolling_protocol(ds, protocol())
    ds3, _ = generate(small_config(periods=3))
    with pytest.raises(TooFewPeriods):
        run_rolling_protocol(ds3, protocol(train_window=3))


def test_explicit_periods_and_empty_period():
    ds, _ = generate(small_config(periods=3))
    series = run_rolling_protocol(ds, protocol(), periods=[0, 1])
    assert len(series.records) == 1
    with pytest.raises(EmptyPeriod):
        run_rolling_protocol(ds, protocol(), periods=[0, 1, 5])
    with pytest.raises(BadConfig):
        run_rolling_protocol(ds, protocol(), periods=[1, 0])


def test_config_validation_and_unknown_reference():
    with pytest.raises(BadConfig):
        protocol(train_window=0)
    with pytest.raises(BadConfig):
        protocol(eval_offset=0)
    ds, _ = generate(small_config())
    with pytest.raises(UnknownGroup):
        run_rolling_protocol(ds, protocol(reference="Z"))


def test_train_window_two():
    ds, _ = generate(small_config(periods=5))
    series = run_rolling_protocol(ds, protocol(train_window=2))
    assert [r.train_periods for r in series.records] == [(0, 1), (1, 2), (2, 3)]
    assert [r.eval_period for r in series.records] == [2, 3, 4]
    assert series.records[0].n_train == 600


def test_eval_offset_two():
    ds, _ = generate(small_config(periods=4))
    series = run_rolling_protocol(ds, protocol(eval_offset=2))
    assert [(r.train_periods, r.eval_period) for r in series.records] == [
        ((0,), 2),
        ((1,), 3),
    ]


def test_series_reproducible_bitwise():
    ds, _ = generate(small_config(periods=4, n=400))
    a = run_rolling_protocol(ds, protocol(seed=5))
    b = run_rolling_protocol(ds, protocol(seed=5))
    assert a == b
    c = run_rolling_protocol(ds, protocol(seed=6))
    assert a != c


def test_per_group_rows_and_payload():
    ds, _ = generate(small_config(periods=2, n=500))
    series = run_rolling_protocol(ds, protocol())
    record = series.records[0]
    assert sorted(row.group for row in record.per_group.rows) == ["A", "B"]
    payload = series_payload(series)
    assert payload["protected"] == "group"
    assert payload["reference"] == "A"
    assert len(payload["records"]) == 1
    assert set(payload["records"][0]["per_group"]) == {"A", "B"}


def drifting_config(seed, periods=8, n=5000):
    # Group B's labels get progressively noisier while its feature shift
    # keeps base rates apart; the model's overall BA barely moves.
    ramp = tuple(max(0.0, (t - 1) / (periods - 2)) for t in range(periods))
    return SynthConfig(
        group_coefs=((1.0, -0.7, 0.4), (1.0, -0.7, 0.4)),
        n_per_period=n,
        periods=periods,
        feature_means=((0.0, 0.0, 0.0), (-0.8, 0.0, 0.0)),
        noise_sigma=0.6,
        label_proxy_flip=(0.0, 0.3),
        drift_schedule={"label_proxy_flip": ramp},
        seed=seed,
    )


def test_injected_drift_fnr_rises_while_ba_flat():
    ds, _ = generate(drifting_config(401))
    series = run_rolling_protocol(
        ds,
        protocol(
            model=ForestConfig(n_trees=80, seed=401), rule=ThresholdRule("top_q", 0.5)
        ),
    )
    fnr = series.metric_series("fnr_difference")
    deltas = [
        abs(d) for d in series.metric_series("delta_balanced_accuracy") if d is not None
    ]
    assert max(deltas) <= 0.05
    rho = spearmanr(range(len(fnr)), fnr).statistic
    assert rho >= 0.8
    par = series.metric_series("parity_difference")
    base = series.metric_series("base_rate_difference")
    amplified = [abs(p) >= abs(b) for p, b in zip(par, base)]
    assert np.mean(amplified) >= 0.8


def test_stationary_series_stays_flat():
    rhos = []
    for seed in range(10):
        config = SynthConfig(
            group_coefs=((1.0, -0.7, 0.4), (1.0, -0.7, 0.4)),
            n_per_period=5000,
            periods=8,
            noise_sigma=0.6,
            seed=500 + seed,
        )
        ds, _ = generate(config)
        series = run_rolling_protocol(
            ds, protocol(model=ForestConfig(n_trees=50, seed=seed))
        )
        deltas = [
            abs(d)
            for d in series.metric_series("delta_balanced_accuracy")
            if d is not None
        ]
        assert max(deltas) <= 0.05
        fnr = series.metric_series("fnr_difference")
        rhos.append(abs(spearmanr(range(len(fnr)), fnr).statistic))
    assert np.mean(rhos) < 0.5


def make_record(eval_period, ba, delta, fnr, parity=0.0, base=0.0, group_bas=()):
    rows = tuple(
        MetricsRow(
            group=g,
            n=100,
            base_rate=0.5,
            pred_positive_rate=0.5,
            tpr=None,
            fnr=None,
            fpr=None,
            precision=None,
            accuracy=None,
            balanced_accuracy=gba,
            confusion=ConfusionCounts(25, 25, 25, 25),
        )
        for g, gba in group_bas
    )
    return DriftRecord(
        train_periods=(eval_period - 1,),
        eval_period=eval_period,
        n_train=100,
        n_eval=100,
        balanced_accuracy=ba,
        delta_balanced_accuracy=delta,
        parity_difference=parity,
        fnr_difference=fnr,
        base_rate_difference=base,
        per_group=GroupMetrics(rows=rows, warnings=()),
    )


def test_alerts_disabled_thresholds():
    series = DriftSeries(
        "group",
        "A",
        (make_record(1, 0.8, None, 0.3, parity=0.5),),
    )
    assert detect_alerts(series, AlertThresholds()) == []
    inf = AlertThresholds(
        max_delta_balanced_accuracy=float("inf"),
        max_parity_difference=float("inf"),
        max_fnr_difference=float("inf"),
        min_group_balanced_accuracy=float("-inf"),
    )
    assert detect_alerts(series, inf) == []
    with pytest.raises(BadConfig):
        detect_alerts(DriftSeries("group", "A", ()), AlertThresholds())


def test_alerts_fire_on_later_records_only():
    fnrs = [0.02, 0.05, 0.12, 0.25]
    records = tuple(
        make_record(t + 1, 0.8, 0.0 if t else None, fnrs[t]) for t in range(4)
    )
    series = DriftSeries("group", "A", records)
    alerts = detect_alerts(series, AlertThresholds(max_fnr_difference=0.1))
    assert [a.eval_period for a in alerts] == [3, 4]
    assert all(a.kind == "fnr_difference" for a in alerts)
    assert alerts[1] == Alert(4, "fnr_difference", 0.25, 0.1)


def test_group_level_alert_invisible_to_overall():
    records = (
        make_record(1, 0.75, None, 0.0, group_bas=(("A", 0.8), ("B", 0.7))),
        make_record(2, 0.75, 0.0, 0.0, group_bas=(("A", 0.8), ("B", 0.55))),
    )
    series = DriftSeries("group", "A", records)
    alerts = detect_alerts(
        series,
        AlertThresholds(
            max_delta_balanced_accuracy=0.05, min_group_balanced_accuracy=0.6
        ),
    )
    assert len(alerts) == 1
    assert alerts[0] == Alert(2, "group_balanced_accuracy", 0.55, 0.6, group="B")


def test_one_alert_per_violated_threshold():
    record = make_record(1, 0.8, None, 0.3, parity=0.4)
    series = DriftSeries("group", "A", (record,))
    alerts = detect_alerts(
        series,
        AlertThresholds(max_parity_difference=0.2, max_fnr_difference=0.2),
    )
    assert {a.kind for a in alerts} == {"parity_difference", "fnr_difference"}
    assert len(alerts) == 2
