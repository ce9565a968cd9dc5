"""Versioned JSON audit reports and CI-style fairness gates.

Reports are deterministic: keys are sorted, every numeric value is finite or
the literal string "undefined", and the only volatile field (the creation
timestamp) is quarantined under a single key so tooling can diff or hash the
rest of the document byte for byte.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import BadConfig

SCHEMA_VERSION = "1"
TIMESTAMP_FIELD = "created_at"


def sanitize(value):
    """Normalize a payload for JSON: numpy scalars/arrays to python types,
    None to "undefined"; non-finite numbers are a bug and raise."""
    if value is None:
        return "undefined"
    if isinstance(value, str | bool | int):
        return value
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, float | np.floating):
        v = float(value)
        if not np.isfinite(v):
            raise BadConfig(f"non-finite numeric {v!r} in report payload")
        return v
    if isinstance(value, np.ndarray):
        return [sanitize(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [sanitize(v) for v in value]
    raise BadConfig(f"cannot serialize {type(value).__name__} in report payload")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def build_report(seed: int, digests: dict, sections: dict, warnings=()) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        TIMESTAMP_FIELD: _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "seed": int(seed),
        "input_digests": sanitize(digests),
        "sections": sanitize(sections),
        "warnings": [str(w) for w in warnings],
    }


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def report_digest(report: dict) -> str:
    """Hash of the report without its quarantined timestamp."""
    stripped = {k: v for k, v in report.items() if k != TIMESTAMP_FIELD}
    return text_digest(json.dumps(stripped, sort_keys=True, allow_nan=False))


def write_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report_json(report))


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        report = json.load(fh)
    if report.get("schema_version") != SCHEMA_VERSION:
        raise BadConfig(
            f"unsupported report schema {report.get('schema_version')!r}"
        )
    return report


@dataclass(frozen=True)
class GateConfig:
    """Fail-the-build thresholds; None disables a gate."""

    max_parity_difference: float | None = None
    max_fnr_difference: float | None = None
    min_group_balanced_accuracy: float | None = None
    min_group_conformal_coverage: float | None = None

    def __post_init__(self):
        for name in (
            "max_parity_difference",
            "max_fnr_difference",
            "min_group_balanced_accuracy",
            "min_group_conformal_coverage",
        ):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise BadConfig(f"{name} must be in [0,1], got {v}")


def load_gates(path) -> GateConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise BadConfig("gates file must hold a JSON object")
    allowed = {
        "max_parity_difference",
        "max_fnr_difference",
        "min_group_balanced_accuracy",
        "min_group_conformal_coverage",
    }
    unknown = set(raw) - allowed
    if unknown:
        raise BadConfig(f"unknown gate fields: {sorted(unknown)}")
    return GateConfig(**raw)


def _defined(value):
    return value is not None and value != "undefined"


def evaluate_gates(gates: GateConfig, sections: dict) -> list[str]:
    """Check the gate thresholds against an audit report's sections.

    Returns one human-readable violation per failed gate instance; an empty
    list means the gates pass.
    """
    violations = []
    fairness = sections.get("fairness", {})
    differences = fairness.get("differences", {})
    if gates.max_parity_difference is not None:
        v = differences.get("parity_difference")
        if _defined(v) and abs(v) > gates.max_parity_difference:
            violations.append(
                f"parity difference {v:+.4f} exceeds "
                f"{gates.max_parity_difference} in magnitude"
            )
    if gates.max_fnr_difference is not None:
        v = differences.get("fnr_difference")
        if _defined(v) and abs(v) > gates.max_fnr_difference:
            violations.append(
                f"FNR difference {v:+.4f} exceeds "
                f"{gates.max_fnr_difference} in magnitude"
            )
    if gates.min_group_balanced_accuracy is not None:
        for group, row in sorted(fairness.get("per_group", {}).items()):
            ba = row.get("balanced_accuracy")
            if _defined(ba) and ba < gates.min_group_balanced_accuracy:
                violations.append(
                    f"balanced accuracy {ba:.4f} for group {group} below "
                    f"{gates.min_group_balanced_accuracy}"
                )
    if gates.min_group_conformal_coverage is not None:
        conformal = sections.get("conformal", {})
        for group, cov in sorted(conformal.get("coverage_by_group", {}).items()):
            if _defined(cov) and cov < gates.min_group_conformal_coverage:
                violations.append(
                    f"conformal coverage {cov:.4f} for group {group} below "
                    f"{gates.min_group_conformal_coverage}"
                )
    return violations
