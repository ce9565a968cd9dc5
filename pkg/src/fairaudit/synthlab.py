"""Synthetic tabular DGP with controllable bias mechanisms, and a Monte-Carlo
lab that decomposes expected squared prediction error into noise, squared
bias and variance at chosen evaluation points.

The clean mechanism is a latent-logistic model: for a row in group g with
features x, latent = coefs_g . x + historical_bias_g and the true label is
1[latent + sigma * L > 0] with L standard logistic, i.e. P(Y=1 | x, g) =
sigmoid(latent / sigma), degenerating to the deterministic step 1[latent > 0]
at sigma = 0. Measurement knobs then distort what is observed: per-group
label flips, annotator propensity flips, per-group row dropping. A drift
schedule rescales any knob per period.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BadConfig, TooFewReplications
from .forest import ForestConfig, train_forest
from .rng import derive_seed, generator
from .tabular import Column, Schema, TabularDataset

KNOBS = (
    "historical_bias",
    "label_proxy_flip",
    "representation_undersample",
    "annotator_offsets",
)


def _check_probs(name, values):
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise BadConfig(f"{name} entries must be in [0,1], got {v}")


@dataclass(frozen=True)
class SynthConfig:
    group_coefs: tuple
    n_per_period: int
    periods: int = 1
    group_names: tuple = ("A", "B")
    group_proportions: tuple = (0.5, 0.5)
    feature_means: tuple | None = None
    noise_sigma: float = 1.0
    historical_bias: tuple | None = None
    label_proxy_flip: tuple | None = None
    representation_undersample: tuple | None = None
    annotator_offsets: tuple = (0.0,)
    annotator_allocation: str = "random"
    annotator_group_weights: tuple | None = None
    drift_schedule: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        g = len(self.group_names)
        if len(self.group_proportions) != g:
            raise BadConfig("group_proportions length must match group_names")
        if abs(sum(self.group_proportions) - 1.0) > 1e-9:
            raise BadConfig(f"group_proportions must sum to 1, got {sum(self.group_proportions)}")
        _check_probs("group_proportions", self.group_proportions)
        if len(self.group_coefs) != g:
            raise BadConfig("group_coefs needs one coefficient vector per group")
        p = len(self.group_coefs[0])
        if any(len(c) != p for c in self.group_coefs):
            raise BadConfig("all coefficient vectors must share one length")
        if self.feature_means is not None:
            if len(self.feature_means) != g or any(len(m) != p for m in self.feature_means):
                raise BadConfig("feature_means must be one length-p vector per group")
        if self.noise_sigma < 0:
            raise BadConfig(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        for name in ("historical_bias", "label_proxy_flip", "representation_undersample"):
            values = getattr(self, name)
            if values is not None and len(values) != g:
                raise BadConfig(f"{name} needs one entry per group")
        if self.label_proxy_flip is not None:
            _check_probs("label_proxy_flip", self.label_proxy_flip)
        if self.representation_undersample is not None:
            _check_probs("representation_undersample", self.representation_undersample)
        for o in self.annotator_offsets:
            if not -1.0 <= o <= 1.0:
                raise BadConfig(f"annotator offsets must be in [-1,1], got {o}")
        if self.annotator_allocation not in ("random", "group_biased"):
            raise BadConfig(f"unknown allocation policy {self.annotator_allocation!r}")
        if self.annotator_allocation == "group_biased":
            w = self.annotator_group_weights
            if w is None or len(w) != g or any(len(row) != len(self.annotator_offsets) for row in w):
                raise BadConfig("group_biased allocation needs per-group weights over annotators")
            for row in w:
                if any(x < 0 for x in row) or sum(row) <= 0:
                    raise BadConfig("annotator weights must be non-negative with a positive sum")
        if self.n_per_period < 1 or self.periods < 1:
            raise BadConfig("n_per_period and periods must be >= 1")
        for knob, series in self.drift_schedule.items():
            if knob not in KNOBS:
                raise BadConfig(f"unknown drift knob {knob!r}; valid: {KNOBS}")
            if len(series) != self.periods:
                raise BadConfig(f"drift schedule for {knob} needs {self.periods} multipliers")
            if any(m < 0 for m in series):
                raise BadConfig("drift multipliers must be >= 0")

    @property
    def n_features(self) -> int:
        return len(self.group_coefs[0])

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    def knob_multiplier(self, knob: str, period: int) -> float:
        series = self.drift_schedule.get(knob)
        return 1.0 if series is None else float(series[period])

    def measurement_knobs_off(self) -> bool:
        return (
            (self.label_proxy_flip is None or all(v == 0 for v in self.label_proxy_flip))
            and (self.representation_undersample is None
                 or all(v == 0 for v in self.representation_undersample))
            and all(o == 0 for o in self.annotator_offsets)
        )


@dataclass(frozen=True)
class GroundTruth:
    """Closed-form conditional mean of the clean (pre-measurement) label.

    Both arrays are aligned with the returned dataset's rows, after any
    undersampling. f and latent use the base (multiplier 1) knob values.
    """

    coefs: np.ndarray
    bias: np.ndarray
    sigma: float
    y_true: np.ndarray

    def latent(self, X, group_idx) -> np.ndarray:
        X = np.asarray(X, np.float64)
        group_idx = np.asarray(group_idx, np.int64)
        return np.einsum("ij,ij->i", X, self.coefs[group_idx]) + self.bias[group_idx]

    def f(self, X, group_idx) -> np.ndarray:
        z = self.latent(X, group_idx)
        if self.sigma == 0.0:
            return (z > 0).astype(np.float64)
        return 1.0 / (1.0 + np.exp(-z / self.sigma))


def config_from_json(raw: dict) -> SynthConfig:
    """Build a SynthConfig from parsed JSON, coercing lists to tuples."""
    if not isinstance(raw, dict):
        raise BadConfig("synth config must be a JSON object")
    fields = {f.name for f in dataclasses.fields(SynthConfig)}
    unknown = set(raw) - fields
    if unknown:
        raise BadConfig(f"unknown synth config fields: {sorted(unknown)}")

    def tup(v):
        return tuple(tup(x) for x in v) if isinstance(v, (list, tuple)) else v

    kwargs = {}
    for key, value in raw.items():
        if key == "drift_schedule":
            if not isinstance(value, dict):
                raise BadConfig("drift_schedule must be an object of knob: multipliers")
            kwargs[key] = {k: tup(v) for k, v in value.items()}
        else:
            kwargs[key] = tup(value)
    return SynthConfig(**kwargs)


def synth_schema(config: SynthConfig) -> Schema:
    cols = [Column(f"x{j}", "numeric_feature") for j in range(config.n_features)]
    cols.append(Column("group", "protected", tuple(config.group_names)))
    cols.append(
        Column("annotator", "protected", tuple(f"a{i}" for i in range(len(config.annotator_offsets))))
    )
    cols.append(Column("y", "label", ("0", "1")))
    cols.append(Column("period", "time"))
    cols.append(Column("rid", "id"))
    return Schema(tuple(cols))


def generate(config: SynthConfig) -> tuple[TabularDataset, GroundTruth]:
    """Draw the configured dataset; a pure function of the config.

    Per row: group, features, latent with historical bias, true label from
    the logistic-noise latent, proxy flip, annotator assignment and flip,
    undersampling last. The annotator id is kept as a protected column so
    audits can condition on it without it ever being a model feature.
    """
    p = config.n_features
    coefs = np.asarray(config.group_coefs, np.float64)
    means = (
        np.asarray(config.feature_means, np.float64)
        if config.feature_means is not None
        else np.zeros((config.n_groups, p))
    )
    base_bias = np.asarray(config.historical_bias or (0.0,) * config.n_groups, np.float64)
    base_flip = np.asarray(config.label_proxy_flip or (0.0,) * config.n_groups, np.float64)
    base_drop = np.asarray(
        config.representation_undersample or (0.0,) * config.n_groups, np.float64
    )
    base_offsets = np.asarray(config.annotator_offsets, np.float64)
    n_annot = len(base_offsets)

    parts = {name: [] for name in ("X", "group", "annotator", "y", "period", "rid", "y_true")}
    for t in range(config.periods):
        n = config.n_per_period
        bias = base_bias * config.knob_multiplier("historical_bias", t)
        flip = base_flip * config.knob_multiplier("label_proxy_flip", t)
        drop = base_drop * config.knob_multiplier("representation_undersample", t)
        offsets = base_offsets * config.knob_multiplier("annotator_offsets", t)
        if (flip > 1).any() or (drop > 1).any() or (np.abs(offsets) > 1).any():
            raise BadConfig(f"drift multiplier pushes a probability knob beyond 1 in period {t}")

        g = _draw_groups(generator(config.seed, t, 0), config.group_proportions, n)
        X = generator(config.seed, t, 1).normal(size=(n, p)) + means[g]
        latent = np.einsum("ij,ij->i", X, coefs[g]) + bias[g]
        if config.noise_sigma == 0.0:
            y_true = (latent > 0).astype(np.int32)
        else:
            u = generator(config.seed, t, 2).random(n)
            y_true = (latent + config.noise_sigma * np.log(u / (1.0 - u)) > 0).astype(np.int32)

        y_obs = y_true.copy()
        do_flip = generator(config.seed, t, 3).random(n) < flip[g]
        y_obs[do_flip] = 1 - y_obs[do_flip]

        if config.annotator_allocation == "random":
            annot = generator(config.seed, t, 4).integers(0, n_annot, size=n)
        else:
            w = np.asarray(config.annotator_group_weights, np.float64)
            w = w / w.sum(axis=1, keepdims=True)
            u = generator(config.seed, t, 4).random(n)
            cum = np.cumsum(w, axis=1)
            annot = (u[:, None] > cum[g]).sum(axis=1)
        o = offsets[annot]
        u = generator(config.seed, t, 5).random(n)
        to_pos = (o > 0) & (y_obs == 0) & (u < o)
        to_neg = (o < 0) & (y_obs == 1) & (u < -o)
        y_obs[to_pos] = 1
        y_obs[to_neg] = 0

        keep = generator(config.seed, t, 6).random(n) >= drop[g]

        parts["X"].append(X[keep])
        parts["group"].append(g[keep].astype(np.int32))
        parts["annotator"].append(annot[keep].astype(np.int32))
        parts["y"].append(y_obs[keep])
        parts["period"].append(np.full(int(keep.sum()), t, np.int64))
        parts["rid"].append(
            np.asarray([f"p{t}r{i}" for i in np.flatnonzero(keep)], dtype=object)
        )
        parts["y_true"].append(y_true[keep])

    X = np.concatenate(parts["X"])
    columns = {f"x{j}": X[:, j].copy() for j in range(p)}
    columns["group"] = np.concatenate(parts["group"])
    columns["annotator"] = np.concatenate(parts["annotator"])
    columns["y"] = np.concatenate(parts["y"]).astype(np.int32)
    columns["period"] = np.concatenate(parts["period"])
    columns["rid"] = np.concatenate(parts["rid"])
    ds = TabularDataset(synth_schema(config), columns)
    truth = GroundTruth(
        coefs=coefs, bias=base_bias, sigma=config.noise_sigma,
        y_true=np.concatenate(parts["y_true"]),
    )
    return ds, truth


def _draw_groups(rng, proportions, n) -> np.ndarray:
    cum = np.cumsum(np.asarray(proportions, np.float64))
    return np.minimum((rng.random(n)[:, None] > cum).sum(axis=1), len(cum) - 1)


# -- bias-variance decomposition lab ----------------------------------------


class ConstantLearner:
    """Predicts a fixed value, or the training-label mean when value=None."""

    def __init__(self, value: float | None = None):
        self.value = value

    def fit(self, X, y, seed: int):
        value = float(np.mean(y)) if self.value is None else float(self.value)

        def predict(Xq):
            return np.full(len(Xq), value)

        return predict


class ForestLearner:
    """Forest on the lab's feature matrix [x0..x_{p-1}, group code]."""

    def __init__(self, config: ForestConfig, n_groups: int = 2):
        self.config = config
        self.n_groups = n_groups

    def _schema(self, p: int) -> Schema:
        cols = [Column(f"x{j}", "numeric_feature") for j in range(p)]
        cols.append(
            Column("group", "categorical_feature", tuple(f"g{i}" for i in range(self.n_groups)))
        )
        cols.append(Column("y", "label", ("0", "1")))
        return Schema(tuple(cols))

    def fit(self, X, y, seed: int):
        X = np.asarray(X, np.float64)
        p = X.shape[1] - 1
        columns = {f"x{j}": X[:, j].copy() for j in range(p)}
        columns["group"] = X[:, p].astype(np.int32)
        columns["y"] = np.asarray(y, np.int32)
        ds = TabularDataset(self._schema(p), columns)
        model = train_forest(ds, replace(self.config, seed=seed))
        return model.predict_scores


@dataclass(frozen=True)
class PointDecomposition:
    x0: tuple
    group: int
    f_true: float
    noise: float
    bias_squared: float
    variance: float
    espe: float
    residual: float
    se_bias_squared: float
    se_variance: float
    se_espe: float

    @property
    def combined_se(self) -> float:
        return math.sqrt(self.se_bias_squared**2 + self.se_variance**2 + self.se_espe**2)


@dataclass(frozen=True)
class BiasVarianceReport:
    points: tuple[PointDecomposition, ...]
    replications: int
    n_train: int
    n_noise_draws: int

    def identity_holds(self, k: float = 3.0) -> np.ndarray:
        return np.asarray([abs(pt.residual) <= k * pt.combined_se for pt in self.points])


def bias_variance_decompose(
    learner,
    config: SynthConfig,
    x0,
    x0_groups,
    replications: int,
    n_train: int,
    n_noise_draws: int = 100,
) -> BiasVarianceReport:
    """Train `replications` models on independent clean draws; decompose the
    expected squared error at each (x0, group) point.

    noise is the analytic Bernoulli variance f(1-f); squared bias subtracts
    the variance-of-the-mean correction var/M so its MC estimate is unbiased;
    ESPE averages squared errors against fresh label draws per replication.
    """
    if replications < 30:
        raise TooFewReplications(f"need at least 30 replications, got {replications}")
    if not config.measurement_knobs_off():
        raise BadConfig("decomposition requires all measurement knobs off")
    if config.periods != 1:
        raise BadConfig("decomposition uses a single-period DGP")
    x0 = np.asarray(x0, np.float64)
    x0_groups = np.asarray(x0_groups, np.int64)
    if x0.ndim != 2 or x0.shape[1] != config.n_features:
        raise BadConfig(f"x0 must be (k, {config.n_features})")
    if len(x0_groups) != len(x0):
        raise BadConfig("x0_groups must match x0 rows")

    k = len(x0)
    M = replications
    grid = np.column_stack([x0, x0_groups.astype(np.float64)])

    train_config = replace(config, n_per_period=n_train, periods=1)
    preds = np.empty((M, k))
    truth = None
    for m in range(M):
        rep_config = replace(train_config, seed=derive_seed(config.seed, 7001, m))
        ds, truth = generate(rep_config)
        X = np.column_stack(
            [np.column_stack([ds.column(f"x{j}") for j in range(config.n_features)]),
             ds.column("group").astype(np.float64)]
        )
        predict = learner.fit(X, np.asarray(ds.labels()), derive_seed(config.seed, 7002, m))
        preds[m] = predict(grid)

    f_true = truth.f(x0, x0_groups)
    noise = f_true * (1.0 - f_true)

    points = []
    for j in range(k):
        pj = preds[:, j]
        mean = float(pj.mean())
        if pj.max() == pj.min():
            var = 0.0
            se_var = 0.0
        else:
            var = float(pj.var(ddof=1))
            se_var = var * math.sqrt(2.0 / (M - 1))
        bias_sq = (mean - f_true[j]) ** 2 - var / M
        se_mean = math.sqrt(var / M)
        se_bias_sq = math.sqrt((2.0 * abs(mean - f_true[j]) * se_mean) ** 2 + (se_var / M) ** 2)

        rng = generator(config.seed, 7003, j)
        draws = (rng.random((M, n_noise_draws)) < f_true[j]).astype(np.float64)
        sq_err = (draws - pj[:, None]) ** 2
        per_rep = sq_err.mean(axis=1)
        espe = float(per_rep.mean())
        se_espe = float(per_rep.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0

        residual = espe - (noise[j] + bias_sq + var)
        points.append(
            PointDecomposition(
                x0=tuple(float(v) for v in x0[j]),
                group=int(x0_groups[j]),
                f_true=float(f_true[j]),
                noise=float(noise[j]),
                bias_squared=float(bias_sq),
                variance=var,
                espe=espe,
                residual=float(residual),
                se_bias_squared=float(se_bias_sq),
                se_variance=float(se_var),
                se_espe=se_espe,
            )
        )
    return BiasVarianceReport(
        points=tuple(points), replications=M, n_train=n_train, n_noise_draws=n_noise_draws
    )
