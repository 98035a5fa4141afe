"""
Post-processing of run logs.

Every ground-truth collision is classified as detected in time, detected
too late or not detected by comparing the action budget left after the
first alert, T_A = T_FA - T_D - T_H, with the time needed to stop, T_B.
Every alert is classified as a timely or late true positive or as a false
positive. Replay re-runs detection over a recorded trajectory log so
threshold sweeps see identical mobility.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from sim.detector import Detector, DetectorParams, EntityClass, PairKind
from sim.errors import AnalysisError, MissingLogsError, MissingTrajectoryError
from sim.geometry import Disc, Rect, footprint_gap
from sim.netmodel import LatencyProfile, ReactionProfile, alert_record, cam_from_record, send_alert, transmission_delay
from sim.stats import mean_ci
from utils.logger import get_logger, timer

logger = get_logger("analysis")

TRAJECTORY_COLUMNS = ["time", "id", "cls", "x", "y", "speed", "heading", "accel"]
COLLISION_COLUMNS = ["time", "a", "b", "kind", "x", "y"]
ALERT_COLUMNS = ["issued_at", "a", "b", "kind", "t_star", "d_star", "source", "cam_time", "hmi_time", "action_time"]

UNCOVERABLE = "Uncoverable"
RELEVANT_DISTANCE = 5.0


class OutcomeClass(str, Enum):
    DETECTED_IN_TIME = "DetectedInTime"
    DETECTED_TOO_LATE = "DetectedTooLate"
    NOT_DETECTED = "NotDetected"


class AlertClass(str, Enum):
    TRUE_TIMELY = "TrueTimely"
    TRUE_LATE = "TrueLate"
    FALSE_POSITIVE = "FalsePositive"


@dataclass(frozen=True)
class ReactionBudget:
    t_fa: float
    t_d: float
    t_h: float
    t_a: float
    t_b: float


@dataclass(frozen=True)
class Footprints:
    """Entity dimensions used to turn centre tracks into shapes"""
    length: float = 5.0
    width: float = 1.8
    radius: float = 0.3


def _read_jsonl(path, columns: List[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise MissingLogsError(f"{path} not found")
    if path.stat().st_size == 0:
        return pd.DataFrame(columns=columns)
    frame = pd.read_json(path, lines=True, precise_float=True, dtype=False,
                         convert_dates=False, keep_default_dates=False)
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise AnalysisError(f"{path}: missing column(s) {', '.join(missing)}")
    return frame[columns]


def read_trajectories(path) -> pd.DataFrame:
    return _read_jsonl(path, TRAJECTORY_COLUMNS)


def read_collisions(path) -> pd.DataFrame:
    return _read_jsonl(path, COLLISION_COLUMNS)


def read_alerts(path) -> pd.DataFrame:
    return _read_jsonl(path, ALERT_COLUMNS)


def collisions_frame(records: Iterable[Mapping[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(list(records), columns=COLLISION_COLUMNS)


def alerts_frame(records: Iterable[Mapping[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(list(records), columns=ALERT_COLUMNS)


def trajectories_frame(records: Iterable[Mapping[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(list(records), columns=TRAJECTORY_COLUMNS)


class TrajectoryIndex:
    """Per-entity time-sorted tracks of a trajectory log"""

    def __init__(self, trajectories: pd.DataFrame):
        self.tracks: Dict[str, Dict[str, np.ndarray]] = {}
        self.classes: Dict[str, EntityClass] = {}
        for entity_id, group in trajectories.groupby("id", sort=False):
            group = group.sort_values("time", kind="mergesort")
            self.tracks[entity_id] = {col: group[col].to_numpy(dtype=float)
                                      for col in ("time", "x", "y", "speed", "heading")}
            self.classes[entity_id] = EntityClass(group["cls"].iloc[0])

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.tracks

    def entity_class(self, entity_id: str) -> EntityClass:
        if entity_id not in self.classes:
            raise MissingTrajectoryError(f"no trajectory for {entity_id}")
        return self.classes[entity_id]

    def speed_at(self, entity_id: str, t: float) -> float:
        """Speed of the latest record at or before t"""
        track = self.tracks.get(entity_id)
        if track is None:
            raise MissingTrajectoryError(f"no trajectory for {entity_id}")
        i = int(np.searchsorted(track["time"], t, side="right")) - 1
        if i < 0:
            raise MissingTrajectoryError(f"no record of {entity_id} at or before t={t}")
        return float(track["speed"][i])

    def stopping_time(self, entity_id: str, t: float, max_decel: float) -> float:
        """T_B of one entity; pedestrians stop at once"""
        if self.entity_class(entity_id) is EntityClass.PEDESTRIAN:
            return 0.0
        return self.speed_at(entity_id, t) / max_decel

    def _shape(self, entity_id: str, x: float, y: float, heading: float, dims: Footprints):
        if self.classes[entity_id] is EntityClass.PEDESTRIAN:
            return Disc(x, y, dims.radius)
        return Rect(x, y, heading, dims.length, dims.width)

    def min_gap(self, a: str, b: str, dims: Footprints) -> Optional[float]:
        """Smallest footprint distance over the pair's co-existence window, None if they never co-exist"""
        if a not in self.tracks or b not in self.tracks:
            return None
        ta, tb = self.tracks[a], self.tracks[b]
        start = max(ta["time"][0], tb["time"][0])
        end = min(ta["time"][-1], tb["time"][-1])
        mask = (ta["time"] >= start) & (ta["time"] <= end)
        if not mask.any():
            return None
        times = ta["time"][mask]
        xb = np.interp(times, tb["time"], tb["x"])
        yb = np.interp(times, tb["time"], tb["y"])
        hb_idx = np.clip(np.searchsorted(tb["time"], times, side="right") - 1, 0, len(tb["time"]) - 1)
        best = np.inf
        for xa, ya, ha, x2, y2, i in zip(ta["x"][mask], ta["y"][mask], ta["heading"][mask], xb, yb, hb_idx):
            gap = footprint_gap(self._shape(a, xa, ya, ha, dims), self._shape(b, x2, y2, tb["heading"][i], dims))
            best = min(best, gap)
            if best == 0.0:
                break
        return float(best)


def _pair_groups(alerts: pd.DataFrame) -> Dict[Tuple[str, str], pd.DataFrame]:
    if alerts.empty:
        return {}
    return {key: group for key, group in alerts.groupby(["a", "b"], sort=False)}


def classify_collision(col: Mapping[str, Any], pair_alerts: pd.DataFrame, reaction: ReactionProfile,
                       latency: LatencyProfile, index: TrajectoryIndex, params: DetectorParams,
                       max_decel: float, logged_delay: bool = True) -> Tuple[OutcomeClass, Optional[ReactionBudget]]:
    """Outcome of one collision from the first alert for its pair inside the horizon.

    T_D is the alert's logged `hmi_time - issued_at` when `logged_delay` is
    set and the log has it, else the profiles' transmission delay.
    Raises MissingTrajectoryError when the stopping time cannot be computed.
    """
    kind = PairKind(col["kind"])
    horizon = params.horizon_for(kind)
    time = float(col["time"])
    issued = pair_alerts["issued_at"] if pair_alerts is not None and not pair_alerts.empty else pd.Series(dtype=float)
    window = issued[(issued >= time - horizon) & (issued <= time)]
    if window.empty:
        return OutcomeClass.NOT_DETECTED, None

    first_label = window.idxmin()
    first = float(window[first_label])
    t_fa = time - first
    t_d = transmission_delay(latency, reaction)
    if logged_delay and "hmi_time" in pair_alerts.columns:
        logged = pair_alerts.at[first_label, "hmi_time"]
        if pd.notna(logged):
            t_d = float(logged) - first
    t_h = reaction.human_reaction
    t_a = t_fa - t_d - t_h
    hmi_time = first + t_d
    t_b = max(index.stopping_time(col["a"], hmi_time, max_decel),
              index.stopping_time(col["b"], hmi_time, max_decel))
    budget = ReactionBudget(t_fa=t_fa, t_d=t_d, t_h=t_h, t_a=t_a, t_b=t_b)
    outcome = OutcomeClass.DETECTED_TOO_LATE if t_a < t_b else OutcomeClass.DETECTED_IN_TIME
    return outcome, budget


def classify_collisions(collisions: pd.DataFrame, alerts: pd.DataFrame, reaction: ReactionProfile,
                        latency: LatencyProfile, index: TrajectoryIndex, params: DetectorParams,
                        max_decel: float, logged_delay: bool = True) -> pd.DataFrame:
    """Collision log with outcome and reaction budget columns; 'Uncoverable' when trajectories fall short"""
    groups = _pair_groups(alerts)
    rows = []
    for col in collisions.to_dict("records"):
        pair_alerts = groups.get((col["a"], col["b"]))
        try:
            outcome, budget = classify_collision(col, pair_alerts, reaction, latency, index, params, max_decel,
                                                 logged_delay)
            row = {**col, "outcome": outcome.value}
            row.update(asdict(budget) if budget else {})
        except MissingTrajectoryError as e:
            logger.warning("Collision cannot be classified", {"a": col["a"], "b": col["b"], "error": str(e)})
            row = {**col, "outcome": UNCOVERABLE}
        rows.append(row)
    columns = COLLISION_COLUMNS + ["outcome", "t_fa", "t_d", "t_h", "t_a", "t_b"]
    return pd.DataFrame(rows, columns=columns)


def classify_alerts(alerts: pd.DataFrame, classified_collisions: pd.DataFrame, params: DetectorParams,
                    horizon: Optional[float] = None) -> pd.DataFrame:
    """Alert log with an `alert_class` column.

    An alert is a true positive when its pair collides within `horizon`
    after issuance (default: the governing t2c_t of the pair kind).
    """
    by_pair: Dict[Tuple[str, str], List[Tuple[float, str]]] = {}
    for col in classified_collisions.to_dict("records"):
        by_pair.setdefault((col["a"], col["b"]), []).append((float(col["time"]), col["outcome"]))
    for hits in by_pair.values():
        hits.sort()

    classes = []
    for alert in alerts.to_dict("records"):
        window = horizon if horizon is not None else params.horizon_for(PairKind(alert["kind"]))
        issued = float(alert["issued_at"])
        match = next((outcome for t, outcome in by_pair.get((alert["a"], alert["b"]), [])
                      if issued <= t <= issued + window), None)
        if match is None:
            classes.append(AlertClass.FALSE_POSITIVE.value)
        elif match == OutcomeClass.DETECTED_IN_TIME.value:
            classes.append(AlertClass.TRUE_TIMELY.value)
        else:
            classes.append(AlertClass.TRUE_LATE.value)
    result = alerts.copy()
    result["alert_class"] = classes
    return result


def fp_min_distance_cdf(false_positives: pd.DataFrame, index: TrajectoryIndex,
                        dims: Footprints = Footprints()) -> pd.DataFrame:
    """Sorted (distance, fraction) samples of the minimum footprint distance per false-positive pair"""
    distances = []
    if not false_positives.empty:
        for a, b in false_positives[["a", "b"]].drop_duplicates().itertuples(index=False):
            gap = index.min_gap(a, b, dims)
            if gap is not None:
                distances.append(gap)
    distances.sort()
    n = len(distances)
    return pd.DataFrame({
        "distance": distances,
        "fraction": [(i + 1) / n for i in range(n)],
    }, columns=["distance", "fraction"])


def replay_alerts(trajectories: pd.DataFrame, params: DetectorParams, latency: LatencyProfile,
                  reaction: ReactionProfile, end_time: Optional[float] = None,
                  pair_kinds: Optional[FrozenSet[PairKind]] = None) -> pd.DataFrame:
    """Alert log of a fresh detector fed with the CAMs a trajectory log stands for.

    CAMs are delivered in (delivery time, log order), the order of a live
    run with deterministic latency. Deliveries after `end_time` are
    dropped as the live loop never dispatches them.
    """
    frame = trajectories
    if pair_kinds is not None and PairKind.VEH_PED not in pair_kinds:
        frame = frame[frame["cls"] == EntityClass.VEHICLE.value]
    records = frame.to_dict("records")
    deliveries = [float(r["time"]) + latency.uplink_delay for r in records]
    order = sorted(range(len(records)), key=lambda i: deliveries[i])

    detector = Detector(params, pair_kinds=pair_kinds)
    out = []
    for i in order:
        delivered_at = deliveries[i]
        if end_time is not None and delivered_at > end_time:
            continue
        for alert in detector.on_cam(cam_from_record(records[i]), delivered_at):
            out.append(alert_record(alert, send_alert(alert, latency, reaction)))
    return alerts_frame(out)


def _pct(part: int, total: int) -> Optional[float]:
    return 100.0 * part / total if total else None


@dataclass
class SweepInputs:
    trajectories: pd.DataFrame
    collisions: pd.DataFrame
    params: DetectorParams
    latency: LatencyProfile
    reaction: ReactionProfile
    max_decel: float
    end_time: Optional[float] = None


def _sweep_cell(args) -> dict:
    inputs, kind, t2c, s2c = args
    params = inputs.params.with_thresholds(kind, t2c, s2c)
    alerts = replay_alerts(inputs.trajectories, params, inputs.latency, inputs.reaction,
                           inputs.end_time, frozenset({kind}))
    index = TrajectoryIndex(inputs.trajectories)
    collisions = inputs.collisions[inputs.collisions["kind"] == kind.value]
    classified = classify_collisions(collisions, alerts, inputs.reaction, inputs.latency,
                                     index, params, inputs.max_decel)
    alert_classes = classify_alerts(alerts, classified, params)

    n_col = len(classified)
    missed = int((classified["outcome"] != OutcomeClass.DETECTED_IN_TIME.value).sum())
    n_alerts = len(alert_classes)
    fps = int((alert_classes["alert_class"] == AlertClass.FALSE_POSITIVE.value).sum()) if n_alerts else 0
    return {
        "kind": kind.value,
        "t2c_t": t2c,
        "s2c_t": s2c,
        "collisions": n_col,
        "not_detected": int((classified["outcome"] == OutcomeClass.NOT_DETECTED.value).sum()),
        "undetected_or_late_pct": _pct(missed, n_col),
        "alerts": n_alerts,
        "fp_pct": _pct(fps, n_alerts),
        "alerted_pairs": int(len(alerts[["a", "b"]].drop_duplicates())) if n_alerts else 0,
    }


SWEEP_METRICS = ("undetected_or_late_pct", "fp_pct", "alerted_pairs", "not_detected")


def threshold_sweep(inputs: SweepInputs, t2c_grid: Sequence[float], s2c_grid: Sequence[float],
                    kinds: Sequence[PairKind] = (PairKind.VEH_VEH, PairKind.VEH_PED),
                    workers: int = 1) -> Dict[PairKind, Dict[str, pd.DataFrame]]:
    """
    Replay detection for every (t2c_t, s2c_t) cell and classify the outcome.

    Each kind varies only the thresholds that govern it and replays only
    its own pairs, so a cell at the run's thresholds reproduces the run.
    Returns per kind one matrix per metric, rows t2c_t and columns s2c_t.
    """
    t2c_grid, s2c_grid = list(t2c_grid), list(s2c_grid)
    if not t2c_grid or not s2c_grid:
        raise ValueError("threshold sweep needs non-empty t2c and s2c grids")

    cells = [(inputs, kind, float(t2c), float(s2c)) for kind in kinds for t2c in t2c_grid for s2c in s2c_grid]
    timer.start("threshold_sweep")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(cell) for cell in cells]
    timer.end("threshold_sweep", {"cells": len(cells), "workers": workers})

    table = pd.DataFrame(rows)
    matrices: Dict[PairKind, Dict[str, pd.DataFrame]] = {}
    for kind in kinds:
        part = table[table["kind"] == kind.value]
        matrices[kind] = {
            metric: part.pivot(index="t2c_t", columns="s2c_t", values=metric)
                        .reindex(index=[float(v) for v in t2c_grid], columns=[float(v) for v in s2c_grid])
            for metric in SWEEP_METRICS
        }
    return matrices


@dataclass
class Summary:
    report: Dict[str, Any]
    collisions: pd.DataFrame
    alerts: pd.DataFrame
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)


def summarize(collisions: pd.DataFrame, alerts: pd.DataFrame, trajectories: pd.DataFrame,
              params: DetectorParams, latency: LatencyProfile, reaction: ReactionProfile,
              max_decel: float, dims: Footprints = Footprints(),
              meta: Optional[Dict[str, Any]] = None, logged_delay: bool = True) -> Summary:
    """Per-kind outcome and alert-class counts, FP distance summary and plot-ready tables.

    `logged_delay=False` judges every alert with the profiles' T_D instead of
    the logged hmi times, for re-evaluating a log under other profiles.
    """
    index = TrajectoryIndex(trajectories)
    classified = classify_collisions(collisions, alerts, reaction, latency, index, params, max_decel,
                                     logged_delay)
    alert_classes = classify_alerts(alerts, classified, params)

    outcome_names = [c.value for c in OutcomeClass] + [UNCOVERABLE]
    alert_names = [c.value for c in AlertClass]
    report: Dict[str, Any] = {
        "meta": {"latency": asdict(latency), "reaction": asdict(reaction), **(meta or {})},
        "totals": {"collisions": len(classified), "alerts": len(alert_classes)},
        "outcomes": {},
        "alerts": {},
        "fp_distance": {},
    }
    outcome_rows, alert_rows, cdf_rows = [], [], []
    for kind in PairKind:
        cols = classified[classified["kind"] == kind.value]
        counts = {name: int((cols["outcome"] == name).sum()) for name in outcome_names}
        total = len(cols)
        report["outcomes"][kind.value] = {
            "total": total,
            "counts": counts,
            "pct": {name: _pct(n, total) for name, n in counts.items()},
        }
        outcome_rows += [{"kind": kind.value, "class": name, "count": n, "pct": _pct(n, total)}
                         for name, n in counts.items()]

        kind_alerts = alert_classes[alert_classes["kind"] == kind.value]
        a_counts = {name: int((kind_alerts["alert_class"] == name).sum()) for name in alert_names}
        a_total = len(kind_alerts)
        report["alerts"][kind.value] = {
            "total": a_total,
            "counts": a_counts,
            "pct": {name: _pct(n, a_total) for name, n in a_counts.items()},
        }
        alert_rows += [{"kind": kind.value, "class": name, "count": n, "pct": _pct(n, a_total)}
                       for name, n in a_counts.items()]

        fps = kind_alerts[kind_alerts["alert_class"] == AlertClass.FALSE_POSITIVE.value]
        cdf = fp_min_distance_cdf(fps, index, dims)
        distances = cdf["distance"].to_numpy()
        report["fp_distance"][kind.value] = {
            "pairs": int(len(distances)),
            "p10": float(np.quantile(distances, 0.1)) if len(distances) else None,
            "p50": float(np.quantile(distances, 0.5)) if len(distances) else None,
            "p90": float(np.quantile(distances, 0.9)) if len(distances) else None,
            "mass_within_5m": float((distances <= RELEVANT_DISTANCE).mean()) if len(distances) else None,
        }
        cdf_rows += [{"kind": kind.value, "distance": d, "fraction": f}
                     for d, f in zip(cdf["distance"], cdf["fraction"])]

    tables = {
        "outcomes": pd.DataFrame(outcome_rows, columns=["kind", "class", "count", "pct"]),
        "alert_classes": pd.DataFrame(alert_rows, columns=["kind", "class", "count", "pct"]),
        "fp_cdf": pd.DataFrame(cdf_rows, columns=["kind", "distance", "fraction"]),
    }
    logger.info("Run summarized", report["totals"])
    return Summary(report=report, collisions=classified, alerts=alert_classes, tables=tables)


def flatten_report(report: Dict[str, Any]) -> Dict[str, float]:
    """Numeric metrics of a summary report keyed like 'outcomes.VehVeh.pct.NotDetected'"""
    flat: Dict[str, float] = {}
    flat["totals.collisions"] = report["totals"]["collisions"]
    flat["totals.alerts"] = report["totals"]["alerts"]
    for section in ("outcomes", "alerts"):
        for kind, block in report[section].items():
            for measure in ("counts", "pct"):
                for name, value in block[measure].items():
                    flat[f"{section}.{kind}.{measure}.{name}"] = value
    for kind, block in report["fp_distance"].items():
        flat[f"fp_distance.{kind}.mass_within_5m"] = block["mass_within_5m"]
        flat[f"fp_distance.{kind}.p50"] = block["p50"]
    return flat


def aggregate_reports(reports: Sequence[Dict[str, Any]], confidence: float = 0.95) -> pd.DataFrame:
    """Mean and Student-t confidence interval of every metric across seeds"""
    flats = [flatten_report(r) for r in reports]
    metrics = sorted({k for f in flats for k in f})
    rows = []
    for metric in metrics:
        values = [f.get(metric) for f in flats]
        mean, low, high = mean_ci(values, confidence)
        rows.append({"metric": metric, "mean": mean, "ci_low": low, "ci_high": high,
                     "n": sum(v is not None for v in values)})
    return pd.DataFrame(rows, columns=["metric", "mean", "ci_low", "ci_high", "n"])


def hmi_delta(alerts_a: pd.DataFrame, alerts_b: pd.DataFrame) -> pd.DataFrame:
    """Per-alert hmi time difference (b - a) for alerts matched on pair and triggering CAM time"""
    keys = ["a", "b", "source", "cam_time"]
    merged = alerts_a[keys + ["issued_at", "hmi_time"]].merge(
        alerts_b[keys + ["issued_at", "hmi_time"]], on=keys, suffixes=("_a", "_b"))
    merged["t_d_a"] = merged["hmi_time_a"] - merged["issued_at_a"]
    merged["t_d_b"] = merged["hmi_time_b"] - merged["issued_at_b"]
    merged["hmi_delta"] = merged["hmi_time_b"] - merged["hmi_time_a"]
    merged["t_d_delta"] = merged["t_d_b"] - merged["t_d_a"]
    return merged
