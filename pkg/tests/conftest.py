import copy

import numpy as np
import pytest

from ihid.evalbench import experiment as ex
from ihid.evalbench.config import load_config
from ihid.evalbench.world import PRESETS, synth_world
from ihid.graph import build_graph


@pytest.fixture(scope="session")
def y_world():
    spec = PRESETS["y"](n_trajectories=200)
    gt, trajs, route_of = synth_world(spec, prefix="y")
    graph = build_graph(trajs, bbox=gt.bbox)
    return spec, gt, trajs, route_of, graph


@pytest.fixture(scope="session")
def nine_node_world():
    spec = PRESETS["nine_node"](n_trajectories=200)
    gt, trajs, route_of = synth_world(spec, prefix="f")
    return spec, gt, trajs, route_of


@pytest.fixture(scope="session")
def default_cfg(tmp_path_factory):
    cfg = load_config()
    cfg["runner"]["cache_dir"] = str(tmp_path_factory.mktemp("models"))
    return cfg


@pytest.fixture(scope="session")
def default_bundle(default_cfg):
    """Models trained on the default synthetic world; shared by the slow tests."""
    return ex.build_bundle(copy.deepcopy(default_cfg))


@pytest.fixture(scope="session")
def y_quick_cfg(tmp_path_factory):
    cfg = load_config(overrides={
        "world": {"preset": "y", "n_train": 200, "seed": 0},
        "forge": {"sigma": 0.01},
        "diffusion": {"steps": 300},
        "runner": {"pool_normal": 200, "pool_anomalous": 50, "val_normal": 100,
                   "val_anomalous": 25, "n_normal": 160, "n_anomalous": 40, "repeats": 2,
                   "anomaly_types": ["big_detour"],
                   "cache_dir": str(tmp_path_factory.mktemp("ymodels"))},
    })
    return cfg


@pytest.fixture(scope="session")
def y_bundle(y_quick_cfg):
    return ex.build_bundle(copy.deepcopy(y_quick_cfg))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
