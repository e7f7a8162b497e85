import json

import pytest

from ihid.cli import run_cli


def _run(capsys, *argv):
    code = run_cli([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def y_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("cli") / "y.csv"
    assert run_cli(["synth", "--world", "y", "--n", "120", "--seed", "0", "--out", str(p)]) == 0
    return p


def test_unknown_command_and_flag(capsys, tmp_path):
    assert _run(capsys, "frobnicate")[0] == 1
    code, _, err = _run(capsys, "synth", "--out", tmp_path / "a.csv", "--bogus")
    assert code == 1 and "--bogus" in err


def test_missing_required_flag_is_named(capsys, tmp_path, y_csv):
    code, _, err = _run(capsys, "train-high", "--input", y_csv, "--out", tmp_path / "q.pt")
    assert code == 1 and "--graph" in err


def test_missing_file_is_data_error(capsys, tmp_path):
    code, _, err = _run(capsys, "ingest", "--input", tmp_path / "nope.csv", "--out", tmp_path / "o.csv")
    assert code == 2 and "data error" in err


def test_bad_config_is_data_error(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"nope": {}}))
    code, _, _ = _run(capsys, "synth", "--config", cfg, "--out", tmp_path / "a.csv")
    assert code == 2


def test_seed_env_fallback(capsys, tmp_path, monkeypatch):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert _run(capsys, "synth", "--world", "y", "--n", "10", "--seed", "3", "--out", a)[0] == 0
    monkeypatch.setenv("IHID_SEED", "3")
    assert _run(capsys, "synth", "--world", "y", "--n", "10", "--out", b)[0] == 0
    monkeypatch.setenv("IHID_SEED", "4")
    assert _run(capsys, "synth", "--world", "y", "--n", "10", "--out", c)[0] == 0
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()
    monkeypatch.setenv("IHID_SEED", "x")
    assert _run(capsys, "synth", "--out", c)[0] == 1


def test_pipeline_happy_path(capsys, tmp_path, y_csv):
    g, q, d = tmp_path / "g.json", tmp_path / "q.pt", tmp_path / "d.pt"
    fg, rep, gj = tmp_path / "forged.csv", tmp_path / "r.jsonl", tmp_path / "out.geojson"
    code, out, _ = _run(capsys, "build-graph", "--input", y_csv, "--out", g)
    assert code == 0 and json.loads(out)["nodes"] >= 4
    assert _run(capsys, "train-high", "--input", y_csv, "--graph", g, "--epochs", "50", "--out", q)[0] == 0
    assert _run(capsys, "train-low", "--input", y_csv, "--graph", g, "--steps", "20", "--out", d)[0] == 0
    assert _run(capsys, "forge", "--input", y_csv, "--kind", "route_switch", "--n", "5", "--sigma", "0.01",
                "--out", fg)[0] == 0
    code, out, _ = _run(capsys, "detect", "--input", fg, "--graph", g, "--high", q, "--low", d, "--out", rep)
    summ = json.loads(out)
    assert code == 0 and summ["command"] == "detect" and summ["trajectories"] == 5
    recs = [json.loads(l) for l in rep.read_text().splitlines()]
    assert {r["label"] for r in recs} == {"route_switch"}
    assert all({"id", "is_anomaly", "legs", "timing"} <= set(r) for r in recs)
    assert _run(capsys, "export-geojson", "--input", fg, "--report", rep, "--graph", g, "--out", gj)[0] == 0
    assert json.loads(gj.read_text())["type"] == "FeatureCollection"


def test_small_detour_needs_graph(capsys, tmp_path, y_csv):
    code, _, err = _run(capsys, "forge", "--input", y_csv, "--kind", "small_detour", "--n", "2",
                        "--out", tmp_path / "f.csv")
    assert code == 1 and "--graph" in err


@pytest.mark.slow
def test_evaluate_is_byte_identical(capsys, tmp_path, y_quick_cfg):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(y_quick_cfg))
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert _run(capsys, "evaluate", "--config", cfg, "--seed", "5", "--out", out)[0] == 0
        outs.append(out)
    for f in ("result.json", "reports.jsonl"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    assert json.loads((outs[0] / "result.json").read_text())["seeds"]["runner"] == 5
