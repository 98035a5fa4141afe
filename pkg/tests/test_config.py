from dataclasses import asdict
from pathlib import Path

import pytest
import yaml

from config import DEFAULT_RUN_CONFIG, RunConfig, build_run_config, detector_params, load_run_config
from sim.detector import ClassThresholds, DetectorParams
from sim.errors import ConfigError
from sim.scenario import DEFAULT_SCENARIO


@pytest.fixture
def doc():
    with open(DEFAULT_RUN_CONFIG, "r", encoding="utf-8") as f:
        return yaml.safe_load(f)


def test_bundled_defaults():
    cfg = load_run_config()
    assert cfg.duration == 300.0
    assert cfg.seeds == list(range(10))
    assert cfg.dt == 0.01
    assert (cfg.lambda_v, cfg.lambda_p) == (0.7, 0.1)
    assert cfg.detector == DetectorParams()
    assert cfg.latency.name == "metro"
    assert cfg.reaction.name == "hd"
    assert cfg.alerts_enabled and cfg.closed_loop
    assert Path(cfg.scenario).resolve() == Path(DEFAULT_SCENARIO).resolve()
    assert cfg.sweep.t2c_grid == [float(v) for v in range(1, 11)]
    assert len(cfg.sweep.lambda_v_grid) == 16


def test_cam_decimation():
    assert RunConfig().cam_decimation == 10
    assert RunConfig(dt=0.1).cam_decimation == 1


def test_empty_document_gives_defaults():
    cfg = build_run_config({})
    assert cfg.duration == RunConfig().duration
    assert cfg.detector == DetectorParams()


@pytest.mark.parametrize("section, patch", [
    ("root", {"warp_speed": 9}),
    ("arrivals", {"lambda_x": 1.0}),
    ("detector", {"horizon": 3.0}),
    ("sweep", {"t2c": [1, 2]}),
])
def test_unknown_keys_are_rejected(doc, section, patch):
    target = doc if section == "root" else doc[section]
    target.update(patch)
    with pytest.raises(ConfigError):
        build_run_config(doc, DEFAULT_RUN_CONFIG.parent)


@pytest.mark.parametrize("key, value", [
    ("duration", 0),
    ("duration", "long"),
    ("dt", 0.5),
    ("seeds", []),
    ("seeds", [1, -2]),
    ("closed_loop", "yes"),
    ("trajectory_decimation", 0),
])
def test_bad_values_are_rejected(doc, key, value):
    doc[key] = value
    with pytest.raises(ConfigError):
        build_run_config(doc, DEFAULT_RUN_CONFIG.parent)


def test_bad_threshold_is_rejected(doc):
    doc["detector"]["pedestrian"]["t2c_t"] = -1
    with pytest.raises(ConfigError):
        build_run_config(doc, DEFAULT_RUN_CONFIG.parent)


def test_single_seed_integer(doc):
    doc["seeds"] = 7
    assert build_run_config(doc, DEFAULT_RUN_CONFIG.parent).seeds == [7]


def test_latency_mapping(doc):
    doc["latency"] = {"preset": "cloud", "jitter": 0.001}
    cfg = build_run_config(doc, DEFAULT_RUN_CONFIG.parent)
    assert cfg.latency.backhaul_latency == 0.020
    assert cfg.latency.jitter == 0.001


def test_relative_scenario_resolves_next_to_the_config(tmp_path, doc):
    with open(DEFAULT_SCENARIO, "r", encoding="utf-8") as f:
        (tmp_path / "town.yaml").write_text(f.read(), encoding="utf-8")
    doc["scenario"] = "town.yaml"
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    assert load_run_config(path).scenario == tmp_path / "town.yaml"


def test_missing_scenario(doc):
    doc["scenario"] = "nowhere.yaml"
    with pytest.raises(ConfigError):
        build_run_config(doc, DEFAULT_RUN_CONFIG.parent)


def test_missing_or_broken_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("duration: [1, 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(broken)


def test_overrides():
    cfg = RunConfig().with_overrides(seed=3, duration=5, profile="cloud", reaction="av", out="elsewhere",
                                     no_alerts=True, open_loop=True)
    assert cfg.seeds == [3]
    assert cfg.duration == 5.0
    assert cfg.latency.name == "cloud"
    assert cfg.reaction.human_reaction == 0.0
    assert cfg.output_dir == Path("elsewhere")
    assert not cfg.alerts_enabled
    assert not cfg.closed_loop
    assert RunConfig().with_overrides().closed_loop


def test_bad_overrides():
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(duration=0)
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(profile="edge")


def test_detector_params_round_trip_through_meta():
    params = DetectorParams(vehicle=ClassThresholds(7.0, 3.0), use_acceleration=True)
    assert detector_params(asdict(params)) == params
