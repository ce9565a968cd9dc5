import json
import xml.etree.ElementTree as ET

import pytest

from fairaudit import cli
from fairaudit.report import file_digest, load_report
from fairaudit.synthlab import SynthConfig, generate
from fairaudit.tabular import write_csv, write_manifest


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """A small 3-period dataset with a mild proxy-flip bias on group B."""
    root = tmp_path_factory.mktemp("cli_data")
    config = SynthConfig(
        group_coefs=((1.0, -0.6), (1.0, -0.6)),
        n_per_period=300,
        periods=3,
        noise_sigma=0.8,
        feature_means=((0.0, 0.0), (-0.5, 0.0)),
        label_proxy_flip=(0.0, 0.1),
        seed=11,
    )
    ds, _ = generate(config)
    data = root / "rows.csv"
    schema = root / "rows.manifest.json"
    write_csv(ds, data)
    write_manifest(ds.schema, schema)
    forest = root / "forest.json"
    forest.write_text(json.dumps({"forest": {"n_trees": 30}}))
    return {"data": str(data), "schema": str(schema), "config": str(forest)}


def _audit_args(dataset, out, extra=()):
    return [
        "audit",
        "--data", dataset["data"],
        "--schema", dataset["schema"],
        "--config", dataset["config"],
        "--protected", "group",
        "--reference", "A",
        "--threshold", "top_q:0.4",
        "--seed", "3",
        "--out", str(out),
        *extra,
    ]


def _assert_svg(path):
    root = ET.parse(path).getroot()
    assert root.tag == "{http://www.w3.org/2000/svg}svg"


def test_usage_errors_exit_1(dataset, tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["audit", "--data", dataset["data"]]) == 1
    bad = _audit_args(dataset, tmp_path)
    bad[bad.index("top_q:0.4")] = "banana"
    assert cli.main(bad) == 1
    err = capsys.readouterr().err
    assert "usage error" in err


def test_unknown_column_and_group_exit_1(dataset, tmp_path):
    args = _audit_args(dataset, tmp_path)
    args[args.index("group")] = "nope"
    assert cli.main(args) == 1
    args = _audit_args(dataset, tmp_path)
    args[args.index("A")] = "Z"
    assert cli.main(args) == 1


def test_bad_cell_exits_2(dataset, tmp_path):
    lines = open(dataset["data"]).read().splitlines()
    lines[2] = "oops" + lines[2][lines[2].index(","):]
    corrupt = tmp_path / "corrupt.csv"
    corrupt.write_text("\n".join(lines) + "\n")
    args = _audit_args(dataset, tmp_path / "out")
    args[args.index(dataset["data"])] = str(corrupt)
    assert cli.main(args) == 2


def test_audit_report_and_plot(dataset, tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(_audit_args(dataset, out, ["--subgroups", "group"]))
    assert code == 0
    report = load_report(out / "report.json")
    sections = report["sections"]
    assert set(sections) >= {"fairness", "sufficiency", "conformal", "subgroups"}
    fairness = sections["fairness"]
    assert set(fairness["per_group"]) == {"A", "B"}
    for name in ("parity_difference", "fnr_difference", "base_rate_difference"):
        assert name in fairness["differences"]
    assert report["input_digests"]["data"] == file_digest(dataset["data"])
    assert report["input_digests"]["schema"] == file_digest(dataset["schema"])
    _assert_svg(out / "metrics_by_group.svg")
    stdout = capsys.readouterr().out
    assert "audit:" in stdout and "report:" in stdout


def test_gate_violation_exits_3_and_is_recorded(dataset, tmp_path, capsys):
    gates = tmp_path / "gates.json"
    gates.write_text(json.dumps({"max_parity_difference": 0.0001}))
    out = tmp_path / "out"
    code = cli.main(_audit_args(dataset, out, ["--gates", str(gates)]))
    assert code == 3
    report = load_report(out / "report.json")
    assert report["sections"]["gates"]["passed"] is False
    violations = report["sections"]["gates"]["violations"]
    assert violations and "parity" in violations[0]
    assert "FAIL" in capsys.readouterr().out


def test_passing_gates_exit_0(dataset, tmp_path):
    gates = tmp_path / "gates.json"
    gates.write_text(json.dumps({"max_parity_difference": 1.0}))
    out = tmp_path / "out"
    assert cli.main(_audit_args(dataset, out, ["--gates", str(gates)])) == 0
    assert load_report(out / "report.json")["sections"]["gates"]["passed"] is True


def test_audit_is_deterministic(dataset, tmp_path):
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for out in outs:
        assert cli.main(_audit_args(dataset, out)) == 0
    a = load_report(outs[0] / "report.json")
    b = load_report(outs[1] / "report.json")
    a.pop("created_at")
    b.pop("created_at")
    assert a == b
    svg = [(o / "metrics_by_group.svg").read_bytes() for o in outs]
    assert svg[0] == svg[1]


def _drift_args(dataset, out, config):
    return [
        "drift",
        "--data", dataset["data"],
        "--schema", dataset["schema"],
        "--config", str(config),
        "--protected", "group",
        "--reference", "A",
        "--threshold", "top_q:0.4",
        "--seed", "3",
        "--out", str(out),
    ]


def test_drift_series_and_plot(dataset, tmp_path):
    config = tmp_path / "drift.json"
    config.write_text(json.dumps({"forest": {"n_trees": 30}}))
    out = tmp_path / "out"
    assert cli.main(_drift_args(dataset, out, config)) == 0
    report = load_report(out / "report.json")
    records = report["sections"]["drift"]["records"]
    assert [r["eval_period"] for r in records] == [1, 2]
    assert report["sections"]["alerts"] == []
    _assert_svg(out / "drift_series.svg")


def test_drift_alert_exits_3(dataset, tmp_path):
    config = tmp_path / "drift.json"
    config.write_text(
        json.dumps({"forest": {"n_trees": 30}, "alerts": {"max_fnr_difference": 0.0001}})
    )
    out = tmp_path / "out"
    assert cli.main(_drift_args(dataset, out, config)) == 3
    report = load_report(out / "report.json")
    assert report["sections"]["alerts"]
    assert report["sections"]["alerts"][0]["kind"] == "fnr_difference"


def test_repro_matrices_and_plots(dataset, tmp_path):
    config = tmp_path / "repro.json"
    config.write_text(
        json.dumps(
            {
                "forest": {"n_trees": 30},
                "grid": [
                    {"name": "a", "n_trees": 20},
                    {"name": "b", "n_trees": 40},
                    {"name": "b2", "n_trees": 40},
                ],
            }
        )
    )
    out = tmp_path / "out"
    code = cli.main(
        [
            "repro",
            "--data", dataset["data"],
            "--schema", dataset["schema"],
            "--config", str(config),
            "--protected", "group",
            "--threshold", "top_q:0.4",
            "--seed", "3",
            "--out", str(out),
        ]
    )
    assert code == 0
    report = load_report(out / "report.json")
    matrices = report["sections"]["repro"]["matrices"]
    assert set(matrices) == {"A", "B", "(all)"}
    for payload in matrices.values():
        m = payload["jaccard"]
        names = payload["variants"]
        assert names == ["a", "b", "b2"]
        for i in range(3):
            assert m[i][i] == 1.0
            for j in range(3):
                assert m[i][j] == m[j][i]
        # identical configs (same seed, same settings) agree exactly
        assert m[1][2] == 1.0
    for name in ("similarity_A.svg", "similarity_B.svg", "similarity_all.svg"):
        _assert_svg(out / name)


def test_explain_writes_trees_and_fidelity(dataset, tmp_path):
    out = tmp_path / "out"
    code = cli.main(
        [
            "explain",
            "--data", dataset["data"],
            "--schema", dataset["schema"],
            "--config", dataset["config"],
            "--protected", "group",
            "--seed", "3",
            "--out", str(out),
        ]
    )
    assert code == 0
    report = load_report(out / "report.json")
    surrogates = report["sections"]["surrogates"]
    assert set(surrogates) == {"overall", "A", "B"}
    assert set(surrogates["overall"]["fidelity_by_group"]) == {"A", "B"}
    for label in ("overall", "A", "B"):
        assert (out / f"tree_{label}.txt").exists()
        _assert_svg(out / f"tree_{label}.svg")
    outline = (out / "tree_overall.txt").read_text()
    assert "<=" in outline and "mean=" in outline


def test_heterogeneity_requires_search_flags(dataset, tmp_path):
    code = cli.main(
        [
            "heterogeneity",
            "--data", dataset["data"],
            "--schema", dataset["schema"],
            "--threshold", "top_q:0.4",
            "--out", str(tmp_path / "out"),
            "--alpha", "0.05",
            "--split-fraction", "0.5",
            "--max-depth", "3",
            "--min-leaf", "30",
        ]
    )
    assert code == 1  # --delta missing


def test_heterogeneity_reports_candidates(dataset, tmp_path):
    out = tmp_path / "out"
    code = cli.main(
        [
            "heterogeneity",
            "--data", dataset["data"],
            "--schema", dataset["schema"],
            "--config", dataset["config"],
            "--threshold", "top_q:0.4",
            "--seed", "3",
            "--out", str(out),
            "--delta", "0.05",
            "--alpha", "0.1",
            "--split-fraction", "0.5",
            "--max-depth", "3",
            "--min-leaf", "30",
        ]
    )
    assert code == 0
    section = load_report(out / "report.json")["sections"]["heterogeneity"]
    assert section["n_candidates"] == len(section["findings"])
    for f in section["findings"]:
        assert f["n_discovery"] >= 30
        assert isinstance(f["confirmed"], bool)


def test_synth_then_audit_round_trip(tmp_path):
    config = tmp_path / "synth.json"
    config.write_text(
        json.dumps(
            {
                "group_coefs": [[1.0, -0.5], [1.0, -0.5]],
                "n_per_period": 400,
                "noise_sigma": 0.8,
                "seed": 7,
            }
        )
    )
    synth_out = tmp_path / "synth"
    assert cli.main(["synth", "--config", str(config), "--out", str(synth_out)]) == 0
    report = load_report(synth_out / "report.json")
    section = report["sections"]["synth"]
    assert section["n_rows"] == 400
    assert section["data_digest"] == file_digest(synth_out / "synth.csv")

    audit_out = tmp_path / "audit"
    code = cli.main(
        [
            "audit",
            "--data", str(synth_out / "synth.csv"),
            "--schema", str(synth_out / "synth.manifest.json"),
            "--protected", "group",
            "--reference", "A",
            "--threshold", "fixed:0.5",
            "--out", str(audit_out),
        ]
    )
    assert code == 0


def test_synth_annotator_role_flag(tmp_path):
    config = tmp_path / "synth.json"
    config.write_text(
        json.dumps(
            {
                "group_coefs": [[1.0], [1.0]],
                "n_per_period": 50,
                "annotator_offsets": [0.1, -0.1],
                "seed": 1,
            }
        )
    )
    for mode, role in (("protected", "protected"), ("feature", "categorical_feature")):
        out = tmp_path / mode
        assert cli.main(
            ["synth", "--config", str(config), "--out", str(out), "--annotator", mode]
        ) == 0
        manifest = json.load(open(out / "synth.manifest.json"))
        roles = {c["name"]: c["role"] for c in manifest["columns"]}
        assert roles["annotator"] == role
    out = tmp_path / "drop"
    assert cli.main(
        ["synth", "--config", str(config), "--out", str(out), "--annotator", "drop"]
    ) == 0
    manifest = json.load(open(out / "synth.manifest.json"))
    assert "annotator" not in {c["name"] for c in manifest["columns"]}
    header = open(out / "synth.csv").readline().strip().split(",")
    assert "annotator" not in header


def test_bvlab_decomposition(tmp_path):
    config = tmp_path / "bvlab.json"
    config.write_text(
        json.dumps(
            {
                "synth": {
                    "group_coefs": [[1.0, -0.5]],
                    "n_per_period": 300,
                    "group_names": ["only"],
                    "group_proportions": [1.0],
                    "noise_sigma": 0.8,
                    "seed": 5,
                },
                "learner": {"kind": "constant", "value": 0.5},
                "x0": [[0.0, 0.0], [1.0, -1.0]],
                "x0_groups": [0, 0],
                "replications": 40,
                "n_train": 200,
            }
        )
    )
    out = tmp_path / "out"
    assert cli.main(["bvlab", "--config", str(config), "--out", str(out)]) == 0
    section = load_report(out / "report.json")["sections"]["bias_variance"]
    assert len(section["points"]) == 2
    for pt in section["points"]:
        assert pt["variance"] == 0.0  # constant learner never varies
        assert 0.0 <= pt["noise"] <= 0.25
    _assert_svg(out / "decomposition.svg")


def test_bvlab_too_few_replications_exits_1(tmp_path):
    config = tmp_path / "bvlab.json"
    config.write_text(
        json.dumps(
            {
                "synth": {"group_coefs": [[1.0]], "n_per_period": 100,
                          "group_names": ["only"], "group_proportions": [1.0],
                          "seed": 5},
                "learner": {"kind": "constant", "value": 0.5},
                "x0": [[0.0]],
                "replications": 5,
                "n_train": 50,
            }
        )
    )
    assert cli.main(["bvlab", "--config", str(config), "--out", str(tmp_path / "o")]) == 1
