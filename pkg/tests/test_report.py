import hashlib
import json

import numpy as np
import pytest

from fairaudit.errors import BadConfig
from fairaudit.report import (
    GateConfig,
    build_report,
    evaluate_gates,
    file_digest,
    load_gates,
    load_report,
    report_digest,
    report_json,
    sanitize,
    text_digest,
    write_report,
)


def test_sanitize_coerces_numpy_and_none():
    payload = {
        "a": np.float64(0.25),
        "b": np.int32(7),
        "c": np.bool_(True),
        "d": None,
        "e": [np.float64(1.5), None],
        "f": {"nested": np.array([1, 2, 3])},
        "g": "text",
    }
    out = sanitize(payload)
    assert out == {
        "a": 0.25,
        "b": 7,
        "c": True,
        "d": "undefined",
        "e": [1.5, "undefined"],
        "f": {"nested": [1, 2, 3]},
        "g": "text",
    }
    assert type(out["a"]) is float
    assert type(out["b"]) is int
    assert type(out["c"]) is bool


def test_sanitize_rejects_non_finite():
    with pytest.raises(BadConfig):
        sanitize({"x": float("nan")})
    with pytest.raises(BadConfig):
        sanitize([np.float64("inf")])


def test_build_report_shape():
    report = build_report(9, {"data": "abc"}, {"s": {"v": None}}, ["w1"])
    assert report["schema_version"] == "1"
    assert report["seed"] == 9
    assert report["sections"] == {"s": {"v": "undefined"}}
    assert report["warnings"] == ["w1"]
    assert "T" in report["created_at"]  # ISO timestamp


def test_report_digest_ignores_timestamp():
    a = build_report(1, {}, {"k": 2}, [])
    b = dict(a, created_at="2001-01-01T00:00:00+00:00")
    assert a["created_at"] != b["created_at"]
    assert report_digest(a) == report_digest(b)
    c = build_report(1, {}, {"k": 3}, [])
    assert report_digest(a) != report_digest(c)


def test_report_json_is_stable_and_sorted():
    report = build_report(0, {}, {"z": 1, "a": 2}, [])
    text = report_json(report)
    assert text == report_json(report)
    assert text.index('"a"') < text.index('"z"')
    assert text.endswith("\n")


def test_write_and_load_round_trip(tmp_path):
    report = build_report(4, {"config": "deadbeef"}, {"x": [1, 2]}, [])
    path = tmp_path / "report.json"
    write_report(path, report)
    assert load_report(path) == report


def test_load_report_rejects_other_schema(tmp_path):
    path = tmp_path / "report.json"
    path.write_text(json.dumps({"schema_version": "99"}))
    with pytest.raises(BadConfig):
        load_report(path)


def test_digests_match_hashlib(tmp_path):
    blob = b"0123456789" * 1000
    path = tmp_path / "blob.bin"
    path.write_bytes(blob)
    assert file_digest(path) == hashlib.sha256(blob).hexdigest()
    assert text_digest("abc") == hashlib.sha256(b"abc").hexdigest()


def test_gate_config_validation():
    GateConfig(max_parity_difference=0.0, min_group_balanced_accuracy=1.0)
    with pytest.raises(BadConfig):
        GateConfig(max_parity_difference=1.5)
    with pytest.raises(BadConfig):
        GateConfig(min_group_conformal_coverage=-0.1)


def test_load_gates_rejects_unknown_fields(tmp_path):
    path = tmp_path / "gates.json"
    path.write_text(json.dumps({"max_parity_difference": 0.1, "max_tpr": 0.2}))
    with pytest.raises(BadConfig):
        load_gates(path)
    path.write_text(json.dumps({"max_parity_difference": 0.1}))
    assert load_gates(path).max_parity_difference == 0.1


def _sections(parity, fnr, bas, coverage):
    return {
        "fairness": {
            "differences": {"parity_difference": parity, "fnr_difference": fnr},
            "per_group": {g: {"balanced_accuracy": v} for g, v in bas.items()},
        },
        "conformal": {"coverage_by_group": coverage},
    }


def test_evaluate_gates_passes_under_thresholds():
    gates = GateConfig(
        max_parity_difference=0.2,
        max_fnr_difference=0.2,
        min_group_balanced_accuracy=0.6,
        min_group_conformal_coverage=0.85,
    )
    sections = _sections(-0.1, 0.05, {"A": 0.7, "B": 0.65}, {"A": 0.9, "B": 0.88})
    assert evaluate_gates(gates, sections) == []


def test_evaluate_gates_reports_each_violation():
    gates = GateConfig(
        max_parity_difference=0.05,
        max_fnr_difference=0.05,
        min_group_balanced_accuracy=0.8,
        min_group_conformal_coverage=0.95,
    )
    sections = _sections(-0.1, 0.06, {"A": 0.85, "B": 0.7}, {"A": 0.96, "B": 0.9})
    violations = evaluate_gates(gates, sections)
    assert len(violations) == 4
    assert any("parity" in v for v in violations)
    assert any("FNR" in v for v in violations)
    assert any("group B" in v and "balanced accuracy" in v for v in violations)
    assert any("group B" in v and "coverage" in v for v in violations)
    # magnitude check: negative parity beyond the bound still violates
    assert evaluate_gates(
        GateConfig(max_parity_difference=0.05), _sections(-0.2, None, {}, {})
    )


def test_evaluate_gates_skips_undefined_values():
    gates = GateConfig(max_fnr_difference=0.01, min_group_balanced_accuracy=0.9)
    sections = _sections(0.0, "undefined", {"A": "undefined"}, {})
    assert evaluate_gates(gates, sections) == []
