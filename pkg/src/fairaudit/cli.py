"""Command-line front end.

Subcommands run one pipeline each (audit, drift, repro, explain,
heterogeneity, synth, bvlab), write a versioned JSON report plus SVG plots
into --out, print a short summary, and exit with:

  0  success
  1  usage error (bad flags, malformed config, unknown columns or groups)
  2  data validation failure (bad cells, empty or degenerate inputs)
  3  fairness gate violation or drift alert
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .drift import (
    AlertThresholds,
    DriftProtocolConfig,
    detect_alerts,
    run_rolling_protocol,
    series_payload,
)
from .errors import (
    AuditError,
    BadAttribute,
    BadBand,
    BadCell,
    BadColumn,
    BadConfig,
    EmptySpec,
    TooFewReplications,
    UnknownColumn,
    UnknownGroup,
)
from .fairmetrics import (
    Undefined,
    balanced_accuracy,
    confusion,
    conformal_calibrate,
    conformal_sets,
    fairness_report,
    group_coverage,
    group_metrics,
    marginal_coverage,
    sufficiency_gap,
)
from .forest import ForestConfig, classify, parse_threshold, train_forest
from .repro import (
    ALL_ROWS,
    Variant,
    VariantGrid,
    default_grid,
    matrix_payload,
    per_group_similarity,
    run_variants,
)
from .report import (
    build_report,
    evaluate_gates,
    file_digest,
    load_gates,
    sanitize,
    text_digest,
    write_report,
)
from .rng import generator
from .subgroups import (
    HeterogeneityConfig,
    enumerate_intersections,
    error_indicator,
    find_heterogeneity,
    subgroup_grid,
)
from .surrogate import SurrogateConfig, fidelity_by_group, fit_surrogate, render_tree, tree_outline
from .svg import emit_svg
from .synthlab import ConstantLearner, ForestLearner, bias_variance_decompose, config_from_json, generate
from .tabular import Column, Schema, TabularDataset, load_csv, load_manifest, split_random, validate, write_csv, write_manifest

USAGE_ERRORS = (
    BadConfig,
    UnknownColumn,
    UnknownGroup,
    BadColumn,
    BadAttribute,
    BadBand,
    EmptySpec,
    TooFewReplications,
)


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _add_common(p, with_data=True, with_threshold=False):
    if with_data:
        p.add_argument("--data", required=True, help="CSV data file")
        p.add_argument("--schema", required=True, help="schema manifest JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="subcommand config JSON file")
    if with_threshold:
        p.add_argument(
            "--threshold", required=True, help="fixed:T or top_q:Q classification rule"
        )


def build_parser() -> _Parser:
    parser = _Parser(prog="fairaudit", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit", help="group fairness audit with optional gates")
    _add_common(p, with_threshold=True)
    p.add_argument("--protected", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--split", type=float, default=0.75, help="train fraction")
    p.add_argument("--subgroups", default=None, help="comma-separated attribute list")
    p.add_argument("--gates", default=None, help="gate thresholds JSON file")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("drift", help="rolling temporal evaluation")
    _add_common(p, with_threshold=True)
    p.add_argument("--protected", required=True)
    p.add_argument("--reference", required=True)
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("repro", help="variant-grid prediction similarity")
    _add_common(p, with_threshold=True)
    p.add_argument("--protected", required=True)
    p.add_argument("--split", type=float, default=0.75)
    p.set_defaults(func=cmd_repro)

    p = sub.add_parser("explain", help="surrogate trees for a forest")
    _add_common(p)
    p.add_argument("--protected", default=None)
    p.add_argument("--threshold", default=None)
    p.add_argument("--split", type=float, default=0.75)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("heterogeneity", help="split-then-confirm subgroup search")
    _add_common(p, with_threshold=True)
    p.add_argument("--split", type=float, default=0.75)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--split-fraction", type=float, required=True, dest="split_fraction")
    p.add_argument("--max-depth", type=int, required=True, dest="max_depth")
    p.add_argument("--min-leaf", type=int, required=True, dest="min_leaf")
    p.set_defaults(func=cmd_heterogeneity)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p, with_data=False)
    p.add_argument(
        "--annotator",
        choices=("protected", "feature", "drop"),
        default="protected",
        help="role of the annotator-id column in the emitted manifest",
    )
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bvlab", help="bias-variance decomposition experiment")
    _add_common(p, with_data=False)
    p.set_defaults(func=cmd_bvlab)
    return parser


# -- shared plumbing ---------------------------------------------------------


def _read_json(path, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise BadConfig(f"{what} {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise BadConfig(f"{what} {path} must hold a JSON object")
    return raw


def _load_config(args) -> dict:
    return _read_json(args.config, "config file") if args.config else {}


def _load_dataset(args) -> TabularDataset:
    schema = load_manifest(args.schema)
    ds = load_csv(args.data, schema)
    issues = validate(ds)
    if issues:
        lines = [f"{i.code} column={i.column!r} row={i.row}" for i in issues[:20]]
        more = f" (+{len(issues) - 20} more)" if len(issues) > 20 else ""
        raise BadCell("validation failed:\n  " + "\n  ".join(lines) + more)
    return ds


def _digests(args) -> dict:
    digests = {}
    for attr in ("data", "schema", "config", "gates"):
        path = getattr(args, attr, None)
        if path:
            digests[attr] = file_digest(path)
    return digests


def _protected_names(ds: TabularDataset, column: str, reference: str | None = None):
    col = ds.schema.column(column)
    if col.categories is None:
        raise BadColumn(f"column {column!r} is not categorical")
    if reference is not None and reference not in col.categories:
        raise UnknownGroup(f"{reference!r} is not a category of {column!r}")
    return np.asarray(col.categories)


def _forest_config(config: dict, seed: int) -> ForestConfig:
    raw = config.get("forest", {})
    allowed = {"n_trees", "min_node_size", "max_depth", "mtry", "bootstrap"}
    unknown = set(raw) - allowed
    if unknown:
        raise BadConfig(f"unknown forest config fields: {sorted(unknown)}")
    return ForestConfig(seed=seed, **raw)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_svg(out: Path, name: str, spec: dict) -> None:
    (out / name).write_bytes(emit_svg(spec))


def _finish(args, sections, warnings, summary_lines, svgs=()) -> None:
    out = _out_dir(args)
    for name, spec in svgs:
        _write_svg(out, name, spec)
    report = build_report(args.seed, _digests(args), sections, warnings)
    write_report(out / "report.json", report)
    for line in summary_lines:
        print(line)
    print(f"report: {out / 'report.json'}")


def _fmt(v, digits=4) -> str:
    return "undefined" if v is None else f"{v:+.{digits}f}"


def _row_payload(row) -> dict:
    return {
        "n": row.n,
        "base_rate": row.base_rate,
        "pred_positive_rate": row.pred_positive_rate,
        "tpr": row.tpr,
        "fnr": row.fnr,
        "fpr": row.fpr,
        "precision": row.precision,
        "accuracy": row.accuracy,
        "balanced_accuracy": row.balanced_accuracy,
    }


# -- audit -------------------------------------------------------------------


GROUP_METRIC_COLUMNS = (
    "base_rate",
    "pred_positive_rate",
    "fnr",
    "fpr",
    "balanced_accuracy",
)


def cmd_audit(args) -> int:
    config = _load_config(args)
    rule = parse_threshold(args.threshold)
    ds = _load_dataset(args)
    names = _protected_names(ds, args.protected, args.reference)
    gates = load_gates(args.gates) if args.gates else None

    plan = split_random(ds, args.split, seed=args.seed)
    train, eval_ds = plan.train_view(ds), plan.eval_view(ds)
    model = train_forest(train, _forest_config(config, args.seed))
    scores = model.predict_scores(eval_ds)
    yhat = classify(scores, rule)
    y = np.asarray(eval_ds.labels())
    groups = names[eval_ds.group_codes(args.protected)]

    warnings: list[str] = []
    fair = fairness_report(y, yhat, groups, reference_group=args.reference)
    per_group = group_metrics(y, yhat, groups, expected_groups=tuple(names))
    warnings.extend(per_group.warnings)
    c = confusion(y, yhat)
    try:
        overall_ba = balanced_accuracy(c)
    except Undefined:
        overall_ba = None
        warnings.append("overall balanced accuracy undefined on the eval split")

    sections = {
        "fairness": {
            "protected": args.protected,
            "reference": args.reference,
            "threshold": args.threshold,
            "n_eval": int(eval_ds.n_rows),
            "overall": {
                "accuracy": (c.tp + c.tn) / c.n if c.n else None,
                "balanced_accuracy": overall_ba,
            },
            "differences": {
                "parity_difference": fair.parity_difference,
                "base_rate_difference": fair.base_rate_difference,
                "fnr_difference": fair.fnr_difference,
                "fpr_difference": fair.fpr_difference,
                "equalized_odds_gap": fair.equalized_odds_gap,
            },
            "per_group": {
                str(row.group): _row_payload(row) for row in per_group.rows
            },
        }
    }

    suff = sufficiency_gap(y, scores, groups, reference_group=args.reference)
    sections["sufficiency"] = {
        "gap": suff.gap,
        "excluded_bins": list(map(int, suff.excluded_bins)),
    }

    alpha = float(config.get("alpha", 0.1))
    order = generator(args.seed, 7).permutation(eval_ds.n_rows)
    cal, test = order[: len(order) // 2], order[len(order) // 2 :]
    try:
        calibrator = conformal_calibrate(
            y[cal], scores[cal], alpha, cal_indices=frozenset(map(int, cal))
        )
        sets = conformal_sets(calibrator, scores[test], eval_indices=frozenset(map(int, test)))
        sections["conformal"] = {
            "alpha": alpha,
            "n_calibration": int(len(cal)),
            "coverage": marginal_coverage(y[test], sets),
            "coverage_by_group": {
                str(g): v for g, v in sorted(group_coverage(y[test], sets, groups[test]).items())
            },
            "mean_set_size": float(sets.sum(axis=1).mean()),
        }
    except AuditError as e:
        warnings.append(f"conformal section skipped: {e}")

    if args.subgroups:
        attributes = tuple(s.strip() for s in args.subgroups.split(","))
        keys = enumerate_intersections(ds.schema, attributes)
        metric = config.get("subgroup_metric", "balanced_accuracy")
        min_support = int(config.get("subgroup_min_support", 50))
        grid = subgroup_grid(y, yhat, eval_ds, keys, metric, min_support=min_support)
        sections["subgroups"] = {
            "metric": metric,
            "min_support": min_support,
            "cells": [
                {
                    "key": cell.key.describe(),
                    "n": cell.n,
                    "value": cell.value,
                    "low_support": cell.low_support,
                }
                for cell in grid.cells
            ],
        }
        low = sum(cell.low_support for cell in grid.cells)
        if low:
            warnings.append(f"{low} subgroup cells below support {min_support}")

    heat_rows = [str(row.group) for row in per_group.rows]
    svgs = [
        (
            "metrics_by_group.svg",
            {
                "kind": "heatmap",
                "title": f"per-group metrics ({args.protected})",
                "row_labels": heat_rows,
                "col_labels": list(GROUP_METRIC_COLUMNS),
                "values": [
                    [getattr(row, m) for m in GROUP_METRIC_COLUMNS]
                    for row in per_group.rows
                ],
            },
        )
    ]

    summary = [
        f"audit: {eval_ds.n_rows} eval rows, protected={args.protected}, "
        f"reference={args.reference}",
        f"  balanced accuracy {_fmt(overall_ba)}  parity {_fmt(fair.parity_difference)}  "
        f"FNR diff {_fmt(fair.fnr_difference)}",
    ]
    violations = evaluate_gates(gates, sanitize(sections)) if gates else []
    if gates:
        sections["gates"] = {
            "violations": violations,
            "passed": not violations,
        }
        summary.append(
            "  gates: PASS" if not violations else f"  gates: FAIL ({len(violations)})"
        )
        for v in violations:
            summary.append(f"    {v}")
    _finish(args, sections, warnings, summary, svgs)
    return 3 if violations else 0


# -- drift -------------------------------------------------------------------


def cmd_drift(args) -> int:
    config = _load_config(args)
    rule = parse_threshold(args.threshold)
    ds = _load_dataset(args)
    _protected_names(ds, args.protected, args.reference)

    protocol = DriftProtocolConfig(
        model=_forest_config(config, args.seed),
        rule=rule,
        protected=args.protected,
        reference=args.reference,
        train_window=int(config.get("train_window", 1)),
        eval_offset=int(config.get("eval_offset", 1)),
    )
    series = run_rolling_protocol(ds, protocol)
    alert_config = config.get("alerts")
    alerts = []
    if alert_config is not None:
        allowed = {
            "max_delta_balanced_accuracy",
            "max_parity_difference",
            "max_fnr_difference",
            "min_group_balanced_accuracy",
        }
        unknown = set(alert_config) - allowed
        if unknown:
            raise BadConfig(f"unknown alert fields: {sorted(unknown)}")
        alerts = detect_alerts(series, AlertThresholds(**alert_config))

    sections = {
        "drift": series_payload(series),
        "alerts": [
            {
                "eval_period": a.eval_period,
                "kind": a.kind,
                "value": a.value,
                "threshold": a.threshold,
                "group": a.group,
            }
            for a in alerts
        ],
    }
    periods = [r.eval_period for r in series.records]
    svgs = [
        (
            "drift_series.svg",
            {
                "kind": "line_chart",
                "title": "rolling evaluation",
                "x_label": "eval period",
                "y_label": "value",
                "series": [
                    {"name": name, "x": periods, "y": series.metric_series(field)}
                    for name, field in (
                        ("balanced accuracy", "balanced_accuracy"),
                        ("parity difference", "parity_difference"),
                        ("FNR difference", "fnr_difference"),
                        ("base-rate difference", "base_rate_difference"),
                    )
                ],
            },
        )
    ]
    last = series.records[-1]
    summary = [
        f"drift: {len(series.records)} records over periods "
        f"{periods[0]}..{periods[-1]}",
        f"  last: BA {_fmt(last.balanced_accuracy)}  parity {_fmt(last.parity_difference)}  "
        f"FNR diff {_fmt(last.fnr_difference)}",
        f"  alerts: {len(alerts)}",
    ]
    for a in alerts[:8]:
        where = f" group={a.group}" if a.group else ""
        summary.append(f"    period {a.eval_period}: {a.kind}{where} {a.value:+.4f}")
    _finish(args, sections, [], summary, svgs)
    return 3 if alerts else 0


# -- repro -------------------------------------------------------------------


def _grid_from_config(config: dict, seed: int) -> VariantGrid:
    raw = config.get("grid")
    base = _forest_config(config, seed)
    if raw is None:
        return default_grid(base)
    variants = []
    for item in raw:
        if "name" not in item:
            raise BadConfig("every grid variant needs a name")
        overrides = tuple((k, v) for k, v in sorted(item.items()) if k != "name")
        variants.append(Variant(item["name"], overrides))
    return VariantGrid(base, tuple(variants))


def _safe_name(label: str) -> str:
    return "all" if label == ALL_ROWS else "".join(
        c if c.isalnum() or c in "-_" else "_" for c in label
    )


def cmd_repro(args) -> int:
    config = _load_config(args)
    rule = parse_threshold(args.threshold)
    ds = _load_dataset(args)
    names = _protected_names(ds, args.protected)

    plan = split_random(ds, args.split, seed=args.seed)
    train, eval_ds = plan.train_view(ds), plan.eval_view(ds)
    grid = _grid_from_config(config, args.seed)
    results = run_variants(train, eval_ds, grid, rule)
    matrices = per_group_similarity(
        results,
        eval_ds.group_codes(args.protected),
        group_names=tuple(str(n) for n in names),
    )

    sections = {
        "repro": {
            "threshold": args.threshold,
            "variants": {
                name: {
                    "n_trees": cfg.n_trees,
                    "min_node_size": cfg.min_node_size,
                    "mtry": cfg.mtry,
                    "seed": cfg.seed,
                }
                for name, cfg in grid.configs().items()
            },
            "matrices": matrix_payload(matrices),
        }
    }
    svgs = [
        (
            f"similarity_{_safe_name(m.group)}.svg",
            {
                "kind": "heatmap",
                "title": f"Jaccard similarity: {m.group}",
                "row_labels": list(m.names),
                "col_labels": list(m.names),
                "values": [[float(v) for v in row] for row in m.values],
            },
        )
        for m in matrices
    ]
    lowest = min(
        (float(m.values[i, j]), m.group, m.names[i], m.names[j])
        for m in matrices
        for i in range(len(m.names))
        for j in range(len(m.names))
        if i < j
    )
    summary = [
        f"repro: {len(grid.variants)} variants on {eval_ds.n_rows} eval rows",
        f"  lowest agreement {lowest[0]:.4f} in matrix {lowest[1]!r} "
        f"({lowest[2]} vs {lowest[3]})",
    ]
    _finish(args, sections, [], summary, svgs)
    return 0


# -- explain -----------------------------------------------------------------


def cmd_explain(args) -> int:
    config = _load_config(args)
    ds = _load_dataset(args)
    rule = parse_threshold(args.threshold) if args.threshold else None
    target = config.get("target", "score")
    max_depth = int(config.get("max_depth", 3))
    min_support = int(config.get("min_support", 20))

    plan = split_random(ds, args.split, seed=args.seed)
    train, eval_ds = plan.train_view(ds), plan.eval_view(ds)
    model = train_forest(train, _forest_config(config, args.seed))

    jobs = [("overall", None)]
    if args.protected:
        names = _protected_names(ds, args.protected)
        jobs.extend((str(cat), (args.protected, str(cat))) for cat in names)

    out = _out_dir(args)
    sections: dict = {"surrogates": {}}
    warnings: list[str] = []
    summary = [f"explain: target={target} max_depth={max_depth}"]
    svgs = []
    for label, row_filter in jobs:
        surrogate_config = SurrogateConfig(
            max_depth=max_depth,
            target=target,
            rule=rule,
            row_filter=row_filter,
            seed=args.seed,
        )
        result = fit_surrogate(model, eval_ds, surrogate_config)
        outline = render_tree(result.tree, result.layout, ds.schema)
        entry = {
            "rows_used": result.n_rows_used,
            "fidelity_r2": result.fidelity_r2,
            "r2_undefined": result.r2_undefined,
            "agreement": result.agreement,
            "root": tree_outline(result.tree, result.layout, ds.schema),
            "outline": outline,
        }
        if label == "overall" and args.protected:
            entry["fidelity_by_group"] = {
                g.group: {
                    "n": g.n,
                    "fidelity_r2": g.fidelity_r2,
                    "agreement": g.agreement,
                    "low_support": g.low_support,
                }
                for g in fidelity_by_group(result, eval_ds, args.protected, min_support)
            }
        sections["surrogates"][label] = entry
        (out / f"tree_{_safe_name(label)}.txt").write_text(outline + "\n", encoding="utf-8")
        svgs.append(
            (
                f"tree_{_safe_name(label)}.svg",
                {"kind": "tree", "title": f"surrogate: {label}", "root": entry["root"]},
            )
        )
        fid = result.fidelity_r2 if target == "score" else result.agreement
        summary.append(f"  {label}: fidelity {_fmt(fid)} on {result.n_rows_used} rows")
    _finish(args, sections, warnings, summary, svgs)
    return 0


# -- heterogeneity -------------------------------------------------------------


def cmd_heterogeneity(args) -> int:
    config = _load_config(args)
    rule = parse_threshold(args.threshold)
    ds = _load_dataset(args)
    plan = split_random(ds, args.split, seed=args.seed)
    train, eval_ds = plan.train_view(ds), plan.eval_view(ds)
    model = train_forest(train, _forest_config(config, args.seed))
    yhat = classify(model.predict_scores(eval_ds), rule)
    statistic = error_indicator(np.asarray(eval_ds.labels()), yhat)

    het_config = HeterogeneityConfig(
        delta=args.delta,
        alpha=args.alpha,
        split_fraction=args.split_fraction,
        max_depth=args.max_depth,
        min_leaf=args.min_leaf,
        seed=args.seed,
    )
    findings = find_heterogeneity(eval_ds, statistic, het_config)
    confirmed = [f for f in findings if f.confirmed]
    sections = {
        "heterogeneity": {
            "delta": args.delta,
            "alpha": args.alpha,
            "split_fraction": args.split_fraction,
            "max_depth": args.max_depth,
            "min_leaf": args.min_leaf,
            "n_candidates": len(findings),
            "findings": [
                {
                    "predicate": f.predicate.describe(),
                    "n_discovery": f.n_discovery,
                    "n_confirmation": f.n_confirmation,
                    "discovery_deviation": f.discovery_deviation,
                    "confirmation_deviation": f.confirmation_deviation,
                    "p_value": f.p_value,
                    "adjusted_p": f.adjusted_p,
                    "confirmed": f.confirmed,
                }
                for f in findings
            ],
        }
    }
    svgs = []
    if findings:
        svgs.append(
            (
                "heterogeneity.svg",
                {
                    "kind": "line_chart",
                    "title": "candidate deviations",
                    "x_label": "candidate",
                    "y_label": "confirmation deviation",
                    "series": [
                        {
                            "name": "confirmation",
                            "x": list(range(len(findings))),
                            "y": [f.confirmation_deviation for f in findings],
                        },
                        {
                            "name": "discovery",
                            "x": list(range(len(findings))),
                            "y": [f.discovery_deviation for f in findings],
                        },
                    ],
                },
            )
        )
    summary = [
        f"heterogeneity: {len(findings)} candidates, {len(confirmed)} confirmed "
        f"(delta {args.delta}, alpha {args.alpha})"
    ]
    for f in confirmed[:8]:
        summary.append(
            f"  {f.predicate.describe()}  deviation {_fmt(f.confirmation_deviation)} "
            f"adj p {f.adjusted_p:.4g}"
        )
    _finish(args, sections, [], summary, svgs)
    return 0


# -- synth ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    raw = _load_config(args)
    if not raw:
        raise BadConfig("synth needs --config with the generator settings")
    config = config_from_json(raw)
    if "seed" not in raw:
        config = replace(config, seed=args.seed)
    ds, truth = generate(config)

    if args.annotator != "protected":
        columns = {c.name: ds.column(c.name) for c in ds.schema.columns}
        cols = []
        for c in ds.schema.columns:
            if c.name != "annotator":
                cols.append(c)
            elif args.annotator == "feature":
                cols.append(Column("annotator", "categorical_feature", c.categories))
            else:
                del columns["annotator"]
        ds = TabularDataset(Schema(tuple(cols)), columns)

    out = _out_dir(args)
    data_path = out / "synth.csv"
    manifest_path = out / "synth.manifest.json"
    write_csv(ds, data_path)
    write_manifest(ds.schema, manifest_path)

    y = np.asarray(ds.labels())
    g = ds.column("group")
    sections = {
        "synth": {
            "n_rows": int(ds.n_rows),
            "periods": config.periods,
            "base_rate": float(y.mean()),
            "true_base_rate": float(truth.y_true.mean()),
            "group_shares": {
                name: float((g == i).mean())
                for i, name in enumerate(config.group_names)
            },
            "data": data_path.name,
            "manifest": manifest_path.name,
            "data_digest": file_digest(data_path),
            "manifest_digest": file_digest(manifest_path),
            "config": sanitize(raw),
        }
    }
    summary = [
        f"synth: wrote {ds.n_rows} rows to {data_path}",
        f"  base rate {y.mean():.4f} (true {truth.y_true.mean():.4f})",
    ]
    _finish(args, sections, [], summary)
    return 0


# -- bvlab -----------------------------------------------------------------------


def _learner_from_config(raw: dict, n_groups: int):
    kind = raw.get("kind", "forest")
    if kind == "constant":
        return ConstantLearner(raw.get("value"))
    if kind == "forest":
        params = {k: v for k, v in raw.items() if k != "kind"}
        allowed = {"n_trees", "min_node_size", "max_depth", "mtry", "bootstrap", "seed"}
        unknown = set(params) - allowed
        if unknown:
            raise BadConfig(f"unknown learner config fields: {sorted(unknown)}")
        return ForestLearner(ForestConfig(**params), n_groups=n_groups)
    raise BadConfig(f"unknown learner kind {kind!r}")


def cmd_bvlab(args) -> int:
    raw = _load_config(args)
    if "synth" not in raw or "x0" not in raw:
        raise BadConfig("bvlab config needs 'synth' and 'x0'")
    config = config_from_json(raw["synth"])
    if "seed" not in raw["synth"]:
        config = replace(config, seed=args.seed)
    x0 = np.asarray(raw["x0"], dtype=np.float64)
    x0_groups = np.asarray(raw.get("x0_groups", [0] * len(x0)), dtype=np.int64)
    learner = _learner_from_config(raw.get("learner", {}), config.n_groups)
    report = bias_variance_decompose(
        learner,
        config,
        x0,
        x0_groups,
        replications=int(raw.get("replications", 30)),
        n_train=int(raw.get("n_train", 200)),
        n_noise_draws=int(raw.get("n_noise_draws", 100)),
    )
    ok = report.identity_holds()
    sections = {
        "bias_variance": {
            "replications": report.replications,
            "n_train": report.n_train,
            "n_noise_draws": report.n_noise_draws,
            "identity_fraction": float(ok.mean()),
            "points": [
                {
                    "x0": list(pt.x0),
                    "group": pt.group,
                    "f_true": pt.f_true,
                    "noise": pt.noise,
                    "bias_squared": pt.bias_squared,
                    "variance": pt.variance,
                    "espe": pt.espe,
                    "residual": pt.residual,
                    "combined_se": pt.combined_se,
                    "identity_ok": bool(k),
                }
                for pt, k in zip(report.points, ok)
            ],
        }
    }
    idx = list(range(len(report.points)))
    svgs = [
        (
            "decomposition.svg",
            {
                "kind": "line_chart",
                "title": "error decomposition by grid point",
                "x_label": "grid point",
                "y_label": "value",
                "series": [
                    {"name": name, "x": idx, "y": [getattr(pt, field) for pt in report.points]}
                    for name, field in (
                        ("espe", "espe"),
                        ("noise", "noise"),
                        ("bias^2", "bias_squared"),
                        ("variance", "variance"),
                    )
                ],
            },
        )
    ]
    summary = [
        f"bvlab: {report.replications} replications x {report.n_train} rows, "
        f"{len(report.points)} grid points",
        f"  identity holds at {ok.sum()}/{len(ok)} points",
        f"  mean bias^2 {np.mean([p.bias_squared for p in report.points]):+.5f}  "
        f"mean variance {np.mean([p.variance for p in report.points]):+.5f}",
    ]
    _finish(args, sections, [], summary, svgs)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _Usage as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except USAGE_ERRORS as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except AuditError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
