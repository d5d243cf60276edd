"""End-to-end command-line runs on a small synthetic series."""
import io
import json
import subprocess
import sys
from pathlib import Path

import pandas as pd
import pytest

from amiwatch import cli

SMALL = ["--synthetic-rows", "3000", "--train-end", "0.6", "--test-end", "0.8"]
PIPELINE = [
    ["ingest", *SMALL],
    ["stats"],
    ["train-gbdt", "--n-trees", "20", "--cv-folds", "2"],
    ["detect-md"],
    ["train-ae", "--max-epochs", "4"],
    ["detect-ae"],
    ["sweep-k"],
    ["cluster"],
    ["bootstrap", "--resamples", "50"],
    ["report"],
]


def run(out, *argv):
    return cli.main([argv[0], "--out", str(out), *argv[1:]])


def run_pipeline(out):
    for step in PIPELINE:
        assert run(out, *step) == 0, step


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    run_pipeline(out)
    return out


def test_pipeline_artifacts(pipeline):
    for name in ("features.csv", "records.csv", "injected.csv", "ingest.json", "stats.json",
                 "gbdt_model.json", "gbdt_metrics.json", "gbdt_importance.csv",
                 "gbdt_tree0.txt", "md_calibration.json", "md_verdicts.csv",
                 "ae_model.json", "ae_history.csv", "ae_verdicts.csv", "k_sweep.csv",
                 "dendrogram.json", "dendrogram.csv", "clusters.csv",
                 "cluster_scores.json", "bootstrap.json", "report.json"):
        assert (pipeline / name).is_file(), name
    ing = json.loads((pipeline / "ingest.json").read_text())
    assert sum(ing["splits"].values()) == len(pd.read_csv(pipeline / "features.csv"))
    rep = json.loads((pipeline / "report.json").read_text())
    assert set(rep["md"]) == {"test", "validation"} and "injection_recall" in rep


def test_figure_column_contracts(pipeline):
    for name, cols in cli.FIGURES.items():
        df = pd.read_csv(pipeline / "figures" / name)
        assert tuple(df.columns) == cols, name


def test_k_sweep_file_monotone(pipeline):
    sweep = pd.read_csv(pipeline / "k_sweep.csv")
    for _, g in sweep.groupby("split"):
        assert g["count"].is_monotonic_decreasing


def test_artifacts_byte_identical_across_runs(pipeline, tmp_path):
    run_pipeline(tmp_path)
    for path in sorted(pipeline.rglob("*")):
        if path.is_file():
            rel = path.relative_to(pipeline)
            assert (tmp_path / rel).read_bytes() == path.read_bytes(), rel


def _ndjson(records_csv):
    rec = pd.read_csv(records_csv)
    lines = []
    for r in rec.itertuples(index=False):
        lines.append(json.dumps({"ts": r.timestamp, "value": r.meter_value,
                                 "temperature": r.temperature, "holiday": int(r.holiday)}))
    return "\n".join(lines) + "\n"


def test_stream_reproduces_trailing_batch(pipeline, tmp_path):
    out = tmp_path / "s"
    out.mkdir()
    for name in ("features.csv", "records.csv", "gbdt_model.json"):
        (out / name).write_bytes((pipeline / name).read_bytes())
    assert run(out, "detect-md", "--split", "all", "--threshold-mode", "trailing",
               "--buffer", "100000") == 0
    (tmp_path / "in.ndjson").write_text(_ndjson(out / "records.csv"))
    assert run(out, "stream", "--input", str(tmp_path / "in.ndjson"),
               "--output", str(tmp_path / "out.ndjson")) == 0
    res = [json.loads(l) for l in (tmp_path / "out.ndjson").read_text().splitlines()]
    scored = pd.DataFrame([r for r in res if r["status"] == "ok"])
    batch = pd.read_csv(out / "md_verdicts.csv")
    assert len(scored) == len(batch)
    for col in ("flag_md", "flag_mav", "flag_combined"):
        assert scored[col].tolist() == batch[col].tolist()
    assert (scored["d_m"] - batch["d_m"]).abs().max() < 1e-6


def test_stream_reports_bad_lines(pipeline, monkeypatch, capsys):
    monkeypatch.setattr(sys, "stdin", io.StringIO('not json\n{"ts": "x"}\n'))
    assert run(pipeline, "stream") == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [l["line"] for l in lines] == [1, 2] and all("error" in l for l in lines)


def _error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


@pytest.mark.parametrize("argv,code", [
    (["bogus"], 2),
    (["detect-md", "--q", "high"], 2),
    (["detect-md", "--q", "2"], 3),
    (["stats", "--column", "nope"], 3),
    (["ingest"], 3),
    (["ingest", "--meter", "/nonexistent.csv"], 3),
])
def test_exit_codes(pipeline, argv, code, capsys):
    assert cli.main([argv[0], "--out", str(pipeline), *argv[1:]]) == code
    err = _error(capsys)
    assert err["exit_code"] == code and set(err) == {"error", "message", "exit_code"}


def test_missing_artifact(tmp_path, capsys):
    assert run(tmp_path, "train-gbdt") == 4
    assert "ingest" in _error(capsys)["message"]


def test_data_error(tmp_path, capsys):
    bad = tmp_path / "meter.csv"
    bad.write_text("timestamp,meter_id,value\n2020-01-01 00:00,1,5\n")
    assert run(tmp_path, "ingest", "--meter", str(bad)) == 5
    _error(capsys)


def test_config_file_and_flag_precedence(pipeline, tmp_path):
    out = tmp_path / "c"
    out.mkdir()
    for name in ("features.csv", "gbdt_model.json"):
        (out / name).write_bytes((pipeline / name).read_bytes())
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"md": {"q": 0.9, "w": 12}}))
    assert cli.main(["detect-md", "--out", str(out), "--config", str(cfg), "--q", "0.99"]) == 0
    doc = json.loads((out / "md_calibration.json").read_text())
    assert (doc["q"], doc["w"]) == (0.99, 12)
    cfg.write_text(json.dumps({"md": {"nope": 1}}))
    assert cli.main(["detect-md", "--out", str(out), "--config", str(cfg)]) == 3


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "amiwatch", "--help"], capture_output=True,
                         text=True, check=False)
    assert res.returncode == 0 and "Exit codes" in res.stdout
