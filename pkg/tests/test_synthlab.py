from __future__ import annotations

import numpy as np
import pytest

from fairaudit.errors import BadConfig, TooFewReplications
from fairaudit.fairmetrics import fairness_report, group_metrics
from fairaudit.forest import ForestConfig, train_forest
from fairaudit.synthlab import (
    BiasVarianceReport,
    ConstantLearner,
    ForestLearner,
    SynthConfig,
    bias_variance_decompose,
    generate,
)
from fairaudit.tabular import feature_matrix, feature_layout, split_random


def clean_config(**kwargs):
    defaults = dict(
        group_coefs=((1.0, -0.5), (1.0, -0.5)),
        n_per_period=1000,
        noise_sigma=0.5,
        seed=11,
    )
    defaults.update(kwargs)
    return SynthConfig(**defaults)


def test_config_validation():
    with pytest.raises(BadConfig):
        clean_config(group_proportions=(0.6, 0.6))
    with pytest.raises(BadConfig):
        clean_config(group_coefs=((1.0,), (1.0, 2.0)))
    with pytest.raises(BadConfig):
        clean_config(noise_sigma=-0.1)
    with pytest.raises(BadConfig):
        clean_config(label_proxy_flip=(0.0, 1.5))
    with pytest.raises(BadConfig):
        clean_config(annotator_allocation="round_robin")
    with pytest.raises(BadConfig):
        clean_config(annotator_allocation="group_biased")
    with pytest.raises(BadConfig):
        clean_config(drift_schedule={"label_proxy_flip": (1.0,), "periods_typo": (1.0,)})
    with pytest.raises(BadConfig):
        clean_config(periods=2, drift_schedule={"label_proxy_flip": (1.0,)})


def test_generate_is_pure_and_deterministic():
    config = clean_config(n_per_period=500, periods=3)
    ds1, truth1 = generate(config)
    ds2, truth2 = generate(config)
    assert ds1.equals(ds2)
    assert np.array_equal(truth1.y_true, truth2.y_true)
    assert ds1.n_rows == 1500
    assert np.array_equal(np.unique(ds1.column("period")), [0, 1, 2])
    rids = ds1.column("rid")
    assert len(set(rids.tolist())) == len(rids)


def test_knobs_off_observed_equals_true():
    ds, truth = generate(clean_config(n_per_period=4000))
    assert np.array_equal(np.asarray(ds.labels()), truth.y_true)


def test_sigma_zero_is_deterministic_step():
    config = clean_config(noise_sigma=0.0, n_per_period=2000)
    ds, truth = generate(config)
    X = np.column_stack([ds.column("x0"), ds.column("x1")])
    z = truth.latent(X, ds.column("group"))
    assert np.array_equal(truth.y_true, (z > 0).astype(truth.y_true.dtype))
    assert set(np.unique(truth.f(X, ds.column("group")))) <= {0.0, 1.0}


def test_true_labels_match_closed_form_f():
    # Bin rows by predicted f and compare the empirical positive rate in
    # each bin; a calibration mismatch would show up as a systematic gap.
    config = clean_config(n_per_period=40000, noise_sigma=1.0, seed=5)
    ds, truth = generate(config)
    X = np.column_stack([ds.column("x0"), ds.column("x1")])
    f = truth.f(X, ds.column("group"))
    bins = np.minimum((f * 10).astype(int), 9)
    for b in range(10):
        mask = bins == b
        if mask.sum() < 500:
            continue
        gap = abs(truth.y_true[mask].mean() - f[mask].mean())
        assert gap < 3.5 * np.sqrt(0.25 / mask.sum()) + 0.005


def test_group_proportions_and_feature_means():
    config = clean_config(
        n_per_period=20000,
        group_proportions=(0.7, 0.3),
        feature_means=((0.0, 0.0), (1.5, 0.0)),
        seed=3,
    )
    ds, _ = generate(config)
    g = ds.column("group")
    share = (g == 1).mean()
    assert abs(share - 0.3) < 0.02
    x0 = ds.column("x0")
    assert abs(x0[g == 0].mean() - 0.0) < 0.05
    assert abs(x0[g == 1].mean() - 1.5) < 0.05


def test_representation_undersample_shrinks_group():
    config = clean_config(
        n_per_period=20000, representation_undersample=(0.0, 0.5), seed=7
    )
    ds, truth = generate(config)
    g = ds.column("group")
    assert len(truth.y_true) == ds.n_rows
    # 10000 kept from A, ~5000 from B
    share = (g == 1).mean()
    assert abs(share - 1 / 3) < 0.02
    # kept rows still satisfy knobs-off label equality
    assert np.array_equal(np.asarray(ds.labels()), truth.y_true)


def test_proxy_flip_rate_and_drift_schedule():
    config = clean_config(
        n_per_period=20000,
        periods=3,
        label_proxy_flip=(0.0, 0.1),
        drift_schedule={"label_proxy_flip": (0.0, 1.0, 2.0)},
        seed=9,
    )
    ds, truth = generate(config)
    y_obs = np.asarray(ds.labels())
    period = ds.column("period")
    g = ds.column("group")
    for t, expected in ((0, 0.0), (1, 0.1), (2, 0.2)):
        rows = (period == t) & (g == 1)
        rate = (y_obs[rows] != truth.y_true[rows]).mean()
        assert abs(rate - expected) < 0.015
        rows_a = (period == t) & (g == 0)
        assert (y_obs[rows_a] != truth.y_true[rows_a]).sum() == 0


def test_drift_multiplier_beyond_one_rejected():
    config = clean_config(
        n_per_period=100,
        periods=2,
        label_proxy_flip=(0.0, 0.6),
        drift_schedule={"label_proxy_flip": (1.0, 2.0)},
    )
    with pytest.raises(BadConfig):
        generate(config)


def test_proxy_flips_raise_group_fnr():
    # Flipping 20% of one group's labels contaminates its observed
    # positives with easy negatives, so that group's measured FNR rises.
    hits = 0
    for seed in range(20):
        config = clean_config(
            n_per_period=10000, label_proxy_flip=(0.0, 0.2), seed=100 + seed
        )
        ds, _ = generate(config)
        plan = split_random(ds, 0.4, seed=seed)
        train, eval_ds = plan.train_view(ds), plan.eval_view(ds)
        model = train_forest(
            train, ForestConfig(n_trees=60, seed=seed), extra_features=("group",)
        )
        scores = model.predict_scores(eval_ds)
        report = fairness_report(
            np.asarray(eval_ds.labels()),
            (scores >= 0.5).astype(np.int64),
            eval_ds.column("group"),
            reference_group=0,
        )
        if report.fnr_difference is not None and report.fnr_difference > 0:
            hits += 1
    assert hits >= 19


def test_group_biased_annotators_create_spurious_base_rate_gap():
    # Identical label mechanism for both groups; only the annotator mix
    # differs. The marginal base-rate gap is large, yet conditioning on
    # the annotator id makes it vanish.
    for seed in range(10):
        config = clean_config(
            n_per_period=10000,
            annotator_offsets=(-0.3, 0.3),
            annotator_allocation="group_biased",
            annotator_group_weights=((0.8, 0.2), (0.2, 0.8)),
            seed=200 + seed,
        )
        ds, _ = generate(config)
        y = np.asarray(ds.labels())
        g = ds.column("group")
        marginal = y[g == 1].mean() - y[g == 0].mean()
        assert marginal >= 0.1
        annot = ds.column("annotator")
        for a in (0, 1):
            rows = annot == a
            gap = y[rows & (g == 1)].mean() - y[rows & (g == 0)].mean()
            assert abs(gap) < 0.05


def test_random_allocation_covers_pool():
    config = clean_config(n_per_period=3000, annotator_offsets=(0.0, 0.0, 0.0), seed=2)
    ds, _ = generate(config)
    counts = np.bincount(ds.column("annotator"), minlength=3)
    assert (counts > 800).all()


def test_annotator_offsets_shift_base_rate_directionally():
    up = clean_config(n_per_period=20000, annotator_offsets=(0.4,), seed=4)
    down = clean_config(n_per_period=20000, annotator_offsets=(-0.4,), seed=4)
    zero = clean_config(n_per_period=20000, annotator_offsets=(0.0,), seed=4)
    rate = lambda c: np.asarray(generate(c)[0].labels()).mean()
    assert rate(up) > rate(zero) + 0.1
    assert rate(down) < rate(zero) - 0.1


def flat_config(**kwargs):
    # f is identically 0.5: zero coefficients, zero bias, sigma 1.
    defaults = dict(
        group_coefs=((0.0, 0.0), (0.0, 0.0)),
        n_per_period=200,
        noise_sigma=1.0,
        seed=21,
    )
    defaults.update(kwargs)
    return SynthConfig(**defaults)


def test_decompose_rejects_bad_inputs():
    grid = np.zeros((2, 2))
    groups = np.array([0, 1])
    with pytest.raises(TooFewReplications):
        bias_variance_decompose(ConstantLearner(0.5), flat_config(), grid, groups, 10, 100)
    with pytest.raises(BadConfig):
        bias_variance_decompose(
            ConstantLearner(0.5),
            flat_config(label_proxy_flip=(0.0, 0.1)),
            grid,
            groups,
            30,
            100,
        )
    with pytest.raises(BadConfig):
        bias_variance_decompose(
            ConstantLearner(0.5), flat_config(), np.zeros((2, 3)), groups, 30, 100
        )


def test_constant_learner_on_flat_truth():
    grid = np.array([[0.0, 0.0], [1.0, -1.0], [2.0, 0.5]])
    groups = np.array([0, 1, 0])
    report = bias_variance_decompose(
        ConstantLearner(0.5), flat_config(), grid, groups, replications=30, n_train=50
    )
    for pt in report.points:
        assert pt.f_true == 0.5
        assert pt.noise == 0.25
        assert pt.variance == 0.0
        assert pt.se_variance == 0.0
        assert abs(pt.bias_squared) < 1e-12
        assert abs(pt.residual) <= 3.0 * pt.combined_se


def test_constant_mean_learner_tracks_training_noise():
    grid = np.array([[0.0, 0.0]])
    groups = np.array([0])
    report = bias_variance_decompose(
        ConstantLearner(), flat_config(), grid, groups, replications=200, n_train=100
    )
    pt = report.points[0]
    # Var of a mean of 100 Bernoulli(0.5) draws is 0.0025.
    assert abs(pt.variance - 0.0025) < 0.001
    assert abs(pt.bias_squared) < 0.001
    assert abs(pt.residual) <= 3.0 * pt.combined_se


def lab_grid(rng, config, k):
    xs = rng.normal(size=(k, config.n_features))
    gs = rng.integers(0, config.n_groups, size=k)
    return xs, gs


def test_forest_decomposition_identity_and_tradeoff():
    config = SynthConfig(
        group_coefs=((1.2, -0.8), (0.4, 1.0)),
        n_per_period=200,
        noise_sigma=0.7,
        seed=31,
    )
    xs, gs = lab_grid(np.random.default_rng(17), config, 20)
    deep = bias_variance_decompose(
        ForestLearner(ForestConfig(n_trees=50, min_node_size=1)),
        config,
        xs,
        gs,
        replications=40,
        n_train=300,
    )
    shallow = bias_variance_decompose(
        ForestLearner(ForestConfig(n_trees=50, min_node_size=50)),
        config,
        xs,
        gs,
        replications=40,
        n_train=300,
    )
    assert isinstance(deep, BiasVarianceReport)
    assert deep.identity_holds().mean() >= 0.95
    assert shallow.identity_holds().mean() >= 0.95
    var_deep = np.mean([pt.variance for pt in deep.points])
    var_shallow = np.mean([pt.variance for pt in shallow.points])
    bias_deep = np.mean([pt.bias_squared for pt in deep.points])
    bias_shallow = np.mean([pt.bias_squared for pt in shallow.points])
    assert var_deep > var_shallow
    assert bias_shallow > bias_deep
    # noise is learner-independent
    for a, b in zip(deep.points, shallow.points):
        assert a.noise == b.noise
