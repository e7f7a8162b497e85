import copy
import json

import numpy as np
import pytest
import torch

from ihid.detector import RawScores
from ihid.evalbench import experiment as ex
from ihid.evalbench.config import ConfigError, DEFAULTS, SECTIONS, load_config
from ihid.evalbench.metrics import ConfusionCounts


def test_config_sections_and_validation(tmp_path):
    cfg = load_config()
    assert tuple(sorted(cfg)) == tuple(sorted(SECTIONS))
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"runner": {"repeats": 2}}))
    c = load_config(p)
    assert c["runner"]["repeats"] == 2 and c["runner"]["n_normal"] == DEFAULTS["runner"]["n_normal"]
    p.write_text(json.dumps({"bogus": {}}))
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_committed_example_config_loads():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1]
    cfg = load_config(root / "configs" / "default.json")
    assert cfg["diffusion"]["profile"] == "synthetic"
    assert cfg["runner"]["repeats"] == 5


def _raw(tid, qs, es, seg=True):
    return RawScores(tid, None, list(range(len(qs) + 1)) if seg else None, qs, es)


def test_tuning_puts_gamma_in_the_gap():
    scores = {
        "normal": {f"n{i}": _raw(f"n{i}", [1.0, 2.0], [0.01, 0.02]) for i in range(30)},
        "route_switch": {f"r{i}": _raw(f"r{i}", [1.0, -3.0], [0.01, 0.01]) for i in range(5)},
        "small_detour": {f"s{i}": _raw(f"s{i}", [1.0, 2.0], [0.01, 0.5]) for i in range(5)},
    }
    th, f = ex.tune_thresholds(scores)
    assert -3.0 < th.gamma_q < 1.0 and abs(th.gamma_q - (-1.0)) < 1e-9
    assert 0.02 < th.beta_e <= 0.5 and f == 1.0


@pytest.mark.slow
def test_report_recount_and_determinism(tmp_path, y_quick_cfg, y_bundle):
    cfg = copy.deepcopy(y_quick_cfg)
    a = ex.run_experiment(cfg, y_bundle, reports_path=tmp_path / "a.jsonl")
    b = ex.run_experiment(copy.deepcopy(cfg), y_bundle, reports_path=tmp_path / "b.jsonl")
    a.pop("wall_time_s"), b.pop("wall_time_s")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert a["config"] == cfg and set(a["seeds"]) >= {"runner", "world_test", "world_val"}
    recs = [json.loads(l) for l in (tmp_path / "a.jsonl").read_text().splitlines()]
    for kind, res in a["per_type"].items():
        for rep, summ in enumerate(res["repeats"]):
            rows = [r for r in recs if r["set"] == kind and r["repeat"] == rep]
            assert len(rows) == cfg["runner"]["n_normal"] + cfg["runner"]["n_anomalous"]
            cc = ConfusionCounts.from_predictions([r["label"] != "normal" for r in rows],
                                                  [r["is_anomaly"] for r in rows])
            assert cc.summary() == summ


@pytest.mark.slow
def test_threshold_sweeps_limits(y_quick_cfg, y_bundle):
    cfg = copy.deepcopy(y_quick_cfg)
    g = ex.sweep(cfg, "gamma_q", [-1e9], y_bundle)["results"][0]
    for kind, h in g["stage_histogram"].items():
        assert h["high_level_reject"] == 0
    b = ex.sweep(cfg, "beta_e", [0.0], y_bundle)["results"][0]
    for kind, r in b["per_type"].items():
        assert r["recall"] == 1.0
        assert all(x["fp"] == x["fp"] + x["tn"] for x in r["repeats"])


def test_sweep_unknown_param():
    with pytest.raises(ValueError):
        ex.sweep(load_config(), "lr", [1.0], bundle=object())


@pytest.mark.slow
def test_rho_sweep_retrains(y_quick_cfg, y_bundle):
    cfg = copy.deepcopy(y_quick_cfg)
    cfg["diffusion"]["steps"] = 150
    cfg["runner"]["repeats"] = 1
    res = ex.sweep(cfg, "rho", [0.2, 0.4, 0.8], y_bundle)
    assert [r["value"] for r in res["results"]] == [0.2, 0.4, 0.8]
    sigs = [json.dumps(r["stage_histogram"], sort_keys=True) + json.dumps(r["thresholds"]) for r in res["results"]]
    assert len(set(sigs)) == 3


def test_cold_and_cached_bundles_match(tmp_path):
    cfg = load_config(overrides={"world": {"preset": "y", "n_train": 60},
                                 "iql": {"epochs": 30}, "diffusion": {"steps": 5}})
    cold = ex.build_bundle(copy.deepcopy(cfg), cache_dir=str(tmp_path))
    warm = ex.build_bundle(copy.deepcopy(cfg), cache_dir=str(tmp_path))
    bare = ex.build_bundle(copy.deepcopy(cfg))
    for b in (warm, bare):
        assert np.array_equal(cold.q.matrix(), b.q.matrix())
        assert b.dm.losses == cold.dm.losses and len(b.dm.losses) == 5
        for (k, v), w in zip(cold.dm.eps_model.state_dict().items(), b.dm.eps_model.state_dict().values()):
            assert torch.equal(v, w), k
