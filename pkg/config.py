import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml
from dotenv import load_dotenv

from sim.detector import ClassThresholds, DetectorParams
from sim.errors import ConfigError
from sim.mobility import MAX_DT
from sim.netmodel import LatencyProfile, ReactionProfile, latency_profile, reaction_profile
from sim.scenario import DEFAULT_SCENARIO
from utils.validation import validator

load_dotenv()

DEFAULT_RUN_CONFIG = Path(__file__).resolve().parent / "scenarios" / "run.yaml"


class Config:
    """Ambient settings from the environment (and a .env file if present)"""

    def __init__(self):
        # Logging
        self.LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
        self.LOG_DIR = Path(os.getenv("LOG_DIR", "logs"))
        self.LOG_TO_FILE = os.getenv("LOG_TO_FILE", "false").lower() in ("1", "true", "yes")

        # Outputs
        self.OUTPUT_DIR = Path(os.getenv("OUTPUT_DIR", "runs"))

        # Process pool size for seed batches and sweep cells
        self.MAX_WORKERS = max(1, int(os.getenv("MAX_WORKERS", "1")))

    def get_config_summary(self):
        """Get basic config summary"""
        return {
            "log_level": self.LOG_LEVEL,
            "output_dir": str(self.OUTPUT_DIR),
            "max_workers": self.MAX_WORKERS,
        }


# Create config instance
config = Config()


@dataclass(frozen=True)
class SweepGrids:
    t2c_grid: List[float] = field(default_factory=lambda: [float(v) for v in range(1, 11)])
    s2c_grid: List[float] = field(default_factory=lambda: [float(v) for v in range(1, 9)])
    lambda_v_grid: List[float] = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(16)])
    lambda_p_set: List[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.15, 0.2])
    stability_duration: float = 300.0
    stability_dt: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    """Everything one `app.py` command needs besides the ambient settings"""
    scenario: Path = DEFAULT_SCENARIO
    duration: float = 300.0
    seeds: List[int] = field(default_factory=lambda: list(range(10)))
    dt: float = 0.01
    lambda_v: float = 0.7
    lambda_p: float = 0.1
    detector: DetectorParams = field(default_factory=DetectorParams)
    latency: LatencyProfile = field(default_factory=lambda: latency_profile("metro"))
    reaction: ReactionProfile = field(default_factory=lambda: reaction_profile("hd"))
    output_dir: Path = field(default_factory=lambda: config.OUTPUT_DIR)
    alerts_enabled: bool = True
    closed_loop: bool = True
    trajectory_decimation: Optional[int] = None
    sweep: SweepGrids = field(default_factory=SweepGrids)

    @property
    def cam_decimation(self) -> int:
        """World steps between two CAMs of one entity"""
        return max(1, int(round(1.0 / (self.detector.cam_frequency * self.dt))))

    def with_overrides(self, *, seed: Optional[int] = None, duration: Optional[float] = None,
                       profile: Optional[str] = None, reaction: Optional[str] = None,
                       out: Optional[str] = None, no_alerts: bool = False,
                       open_loop: bool = False) -> "RunConfig":
        """Copy with the command-line overrides applied and re-checked"""
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes["seeds"] = [seed]
        if duration is not None:
            _require(validator.validate_number("duration", duration, positive=True))
            changes["duration"] = float(duration)
        if profile is not None:
            changes["latency"] = latency_profile(profile)
        if reaction is not None:
            changes["reaction"] = reaction_profile(reaction)
        if out is not None:
            changes["output_dir"] = Path(out)
        if no_alerts:
            changes["alerts_enabled"] = False
        if open_loop:
            changes["closed_loop"] = False
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["scenario"] = str(self.scenario)
        data["output_dir"] = str(self.output_dir)
        return data


RUN_KEYS = {"scenario", "duration", "seeds", "dt", "arrivals", "detector", "latency", "reaction",
            "output_dir", "alerts_enabled", "closed_loop", "trajectory_decimation", "sweep"}
ARRIVAL_KEYS = {"lambda_v", "lambda_p"}
DETECTOR_KEYS = {"vehicle", "pedestrian", "max_cam_age", "cam_frequency", "alert_max_frequency",
                 "use_acceleration", "accel_step"}
THRESHOLD_KEYS = {"t2c_t", "s2c_t"}
SWEEP_KEYS = {"t2c_grid", "s2c_grid", "lambda_v_grid", "lambda_p_set", "stability_duration", "stability_dt"}


def _require(ok_message) -> None:
    ok, message = ok_message
    if not ok:
        raise ConfigError(message)


def _flag(name: str, value: Any) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{name}: expected true or false, got {value!r}")
    return value


def _integer(name: str, value: Any, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{name}: expected an integer >= {minimum}, got {value!r}")
    return value


def _thresholds(section: str, data: Mapping[str, Any], default: ClassThresholds) -> ClassThresholds:
    _require(validator.validate_keys(section, data, THRESHOLD_KEYS))
    values = {}
    for key in THRESHOLD_KEYS:
        value = data.get(key, getattr(default, key))
        _require(validator.validate_number(f"{section}.{key}", value, positive=True))
        values[key] = float(value)
    return ClassThresholds(**values)


def detector_params(data: Optional[Mapping[str, Any]]) -> DetectorParams:
    """DetectorParams from a `detector` mapping; missing keys keep their defaults"""
    data = data or {}
    _require(validator.validate_keys("detector", data, DETECTOR_KEYS))
    base = DetectorParams()
    values: Dict[str, Any] = {
        "vehicle": _thresholds("detector.vehicle", data.get("vehicle") or {}, base.vehicle),
        "pedestrian": _thresholds("detector.pedestrian", data.get("pedestrian") or {}, base.pedestrian),
    }
    for key in ("max_cam_age", "cam_frequency", "alert_max_frequency", "accel_step"):
        if key in data:
            _require(validator.validate_number(f"detector.{key}", data[key], positive=True))
            values[key] = float(data[key])
    if "use_acceleration" in data:
        values["use_acceleration"] = _flag("detector.use_acceleration", data["use_acceleration"])
    return DetectorParams(**values)


def _sweep_grids(data: Optional[Mapping[str, Any]]) -> SweepGrids:
    data = data or {}
    _require(validator.validate_keys("sweep", data, SWEEP_KEYS))
    values: Dict[str, Any] = {}
    for key in ("t2c_grid", "s2c_grid", "lambda_v_grid", "lambda_p_set"):
        if key in data:
            _require(validator.validate_grid(f"sweep.{key}", data[key]))
            values[key] = [float(v) for v in data[key]]
    if "stability_duration" in data:
        _require(validator.validate_number("sweep.stability_duration", data["stability_duration"], positive=True))
        values["stability_duration"] = float(data["stability_duration"])
    if "stability_dt" in data:
        _require(validator.validate_number("sweep.stability_dt", data["stability_dt"], positive=True, upper=MAX_DT))
        values["stability_dt"] = float(data["stability_dt"])
    return SweepGrids(**values)


def build_run_config(doc: Optional[Mapping[str, Any]], base_dir: Optional[Path] = None) -> RunConfig:
    """Check a parsed run document and turn it into a RunConfig.

    Relative scenario paths resolve against `base_dir` (the config file's
    directory). Any unknown or ill-typed key raises ConfigError.
    """
    doc = doc or {}
    _require(validator.validate_keys("run", doc, RUN_KEYS))
    values: Dict[str, Any] = {}

    if "scenario" in doc:
        scenario = Path(str(doc["scenario"]))
        if not scenario.is_absolute() and base_dir is not None:
            scenario = base_dir / scenario
        values["scenario"] = scenario
    scenario_path = values.get("scenario", DEFAULT_SCENARIO)
    if not Path(scenario_path).exists():
        raise ConfigError(f"scenario file {scenario_path} not found")

    if "duration" in doc:
        _require(validator.validate_number("duration", doc["duration"], positive=True))
        values["duration"] = float(doc["duration"])
    if "dt" in doc:
        _require(validator.validate_number("dt", doc["dt"], positive=True, upper=MAX_DT))
        values["dt"] = float(doc["dt"])
    if "seeds" in doc:
        seeds = doc["seeds"]
        seeds = [seeds] if isinstance(seeds, int) and not isinstance(seeds, bool) else seeds
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError(f"seeds: expected an integer or a non-empty list, got {doc['seeds']!r}")
        values["seeds"] = [_integer("seeds", s) for s in seeds]

    arrivals = doc.get("arrivals") or {}
    _require(validator.validate_keys("arrivals", arrivals, ARRIVAL_KEYS))
    for key in ARRIVAL_KEYS:
        if key in arrivals:
            _require(validator.validate_number(f"arrivals.{key}", arrivals[key], non_negative=True))
            values[key] = float(arrivals[key])

    values["detector"] = detector_params(doc.get("detector"))
    if "latency" in doc:
        values["latency"] = latency_profile(doc["latency"])
    if "reaction" in doc:
        values["reaction"] = reaction_profile(doc["reaction"])
    if "output_dir" in doc:
        values["output_dir"] = Path(str(doc["output_dir"]))
    for key in ("alerts_enabled", "closed_loop"):
        if key in doc:
            values[key] = _flag(key, doc[key])
    if doc.get("trajectory_decimation") is not None:
        values["trajectory_decimation"] = _integer("trajectory_decimation", doc["trajectory_decimation"], 1)
    values["sweep"] = _sweep_grids(doc.get("sweep"))
    return RunConfig(**values)


def load_run_config(path=None) -> RunConfig:
    """Read a YAML run config; `None` loads the bundled default"""
    path = Path(path) if path is not None else DEFAULT_RUN_CONFIG
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    return build_run_config(doc, base_dir=path.parent)
