import csv
import hashlib
import json

import pytest

from gkcm.cli import main


def _run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:  # argparse usage errors
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def null1_csv(tmp_path, capsys):
    path = tmp_path / "null1.csv"
    assert _run(["simulate", "--scenario", "null1", "--n", "60", "--seed", "1", "--out", str(path)], capsys)[0] == 0
    return path


def _data_args(path):
    return ["--data", str(path), "--x-cols", "x1", "--y-cols", "y1", "--z-cols", "z1,z2,z3,z4,z5,z6,z7"]


def test_simulate_shapes_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert _run(["simulate", "--scenario", "null1", "--n", "5", "--seed", "3", "--out", str(p)], capsys)[0] == 0
    rows = list(csv.reader(a.open()))
    assert rows[0] == ["x1", "y1"] + [f"z{j}" for j in range(1, 8)]
    assert len(rows) == 6 and all(len(r) == 9 for r in rows)
    assert a.read_bytes() == b.read_bytes()
    z = tmp_path / "z.csv"
    argv = ["simulate", "--scenario", "zhang", "--case", "I", "--hypothesis", "alt", "--d", "3",
            "--n", "100", "--seed", "0", "--out", str(z)]
    assert _run(argv, capsys)[0] == 0
    rows = list(csv.reader(z.open()))
    assert len(rows) == 101 and len(rows[0]) == 5


def test_simulate_usage_errors(tmp_path, capsys):
    out = str(tmp_path / "x.csv")
    assert _run(["simulate", "--scenario", "null9", "--n", "5", "--seed", "0", "--out", out], capsys)[0] == 2
    code, _, err = _run(["simulate", "--scenario", "zhang", "--n", "5", "--seed", "0", "--out", out], capsys)
    assert code == 2 and "zhang" in err


def test_test_command_outputs_json(null1_csv, capsys):
    code, out, _ = _run(["test", *_data_args(null1_csv), "--method", "gkcm-krr", "--seed", "7"], capsys)
    assert code == 0
    payload = json.loads(out)
    assert 0 <= payload["p_value"] <= 1 and payload["statistic"] >= 0
    code, again, _ = _run(["test", *_data_args(null1_csv), "--method", "gkcm-krr", "--seed", "7"], capsys)
    assert again == out


def test_test_command_config_and_overrides(null1_csv, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"regressor_x": {"method": "krr"}, "regressor_y": {"method": "krr"}}))
    code, out, _ = _run(["test", *_data_args(null1_csv), "--config", str(cfg), "--pvalue", "moment",
                         "--alpha", "0.1"], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["alpha"] == 0.1 and payload["metadata"]["pvalue_method"] == "moment"


def test_test_command_usage_errors(null1_csv, tmp_path, capsys):
    args = ["test", "--data", str(null1_csv), "--x-cols", "x1", "--z-cols", "z1"]
    code, out, err = _run(args, capsys)
    assert code == 2 and "--y-cols" in err and out == ""
    cfg = tmp_path / "c.json"
    cfg.write_text("{}")
    assert _run(["test", *_data_args(null1_csv), "--config", str(cfg), "--method", "gcm"], capsys)[0] == 2
    assert _run(["test", *_data_args(null1_csv)[:-1], "nope"], capsys)[0] == 2
    code, _, err = _run(["test", "--data", str(tmp_path / "missing.csv"), "--x-cols", "a", "--y-cols", "b",
                         "--z-cols", "c"], capsys)
    assert code == 1 and err


def test_tune_command(null1_csv, capsys):
    code, out, _ = _run(["tune", *_data_args(null1_csv), "--grid", "0.001,0.1"], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["lambda"] in (0.001, 0.1) and len(payload["loo_scores"]) == 2


def _campaign(tmp_path, **kw):
    cfg = {"scenarios": ["null1"], "sample_sizes": [20], "methods": ["stub-uniform"], "reps": 3, "seed": 5}
    cfg.update(kw)
    path = tmp_path / "campaign.json"
    path.write_text(json.dumps(cfg))
    return path


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_bench_single_row(tmp_path, capsys):
    cfg = _campaign(tmp_path)
    code, out, err = _run(["bench", "--config", str(cfg), "--out-dir", str(tmp_path / "o")], capsys)
    assert code == 0 and "done" in err
    rows = list(csv.DictReader((tmp_path / "o" / "results.csv").open()))
    assert len(rows) == 1 and rows[0]["N"] == "3" and rows[0]["mean_runtime_ms"] == ""
    assert out == (tmp_path / "o" / "results.csv").read_text()
    log = json.loads((tmp_path / "o" / "pvalues.json").read_text())
    assert len(log[0]["p_values"]) == 3


def test_bench_resume_is_idempotent(tmp_path, capsys):
    cfg = _campaign(tmp_path, methods=["stub-uniform", "gkcm-krr"], sample_sizes=[15, 25])
    out = tmp_path / "o"
    assert _run(["bench", "--config", str(cfg), "--out-dir", str(out)], capsys)[0] == 0
    before = {p.name: _digest(p) for p in out.rglob("*") if p.is_file()}
    code, _, err = _run(["bench", "--config", str(cfg), "--out-dir", str(out), "--resume"], capsys)
    assert code == 0 and err.count("reused") == 2 and "done" not in err
    assert {p.name: _digest(p) for p in out.rglob("*") if p.is_file()} == before


def test_bench_timing_fills_runtime(tmp_path, capsys):
    cfg = _campaign(tmp_path)
    assert _run(["bench", "--config", str(cfg), "--out-dir", str(tmp_path / "o"), "--timing"], capsys)[0] == 0
    row = next(csv.DictReader((tmp_path / "o" / "results.csv").open()))
    assert float(row["mean_runtime_ms"]) >= 0


def test_bench_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"scenarios": ["null1"],\n "reps": 3,,}')
    code, _, err = _run(["bench", "--config", str(bad), "--out-dir", str(tmp_path)], capsys)
    assert code == 2 and "line 2" in err
    cfg = _campaign(tmp_path, sample_sizes=[0])
    code, _, err = _run(["bench", "--config", str(cfg), "--out-dir", str(tmp_path)], capsys)
    assert code == 2 and "sample_sizes/0" in err
    cfg = _campaign(tmp_path, methods=["stub-one", "stub-one"])
    assert _run(["bench", "--config", str(cfg), "--out-dir", str(tmp_path)], capsys)[0] == 2
    assert _run(["bench", "--config", str(_campaign(tmp_path))], capsys)[0] == 2


def test_bench_jobs_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("GKCM_JOBS", "zero")
    assert _run(["bench", "--config", str(_campaign(tmp_path)), "--out-dir", str(tmp_path / "o")], capsys)[0] == 2
