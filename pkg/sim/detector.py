"""
Server-side collision detection.

A CAM arriving at the server is checked for freshness, stored as the
latest message of its sender, and, when fresh, compared against every
candidate within range using the closest-approach test. Pairs on a
collision course are alerted, at most once per second per pair.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, Iterator, List, Mapping, Optional

from sim.errors import ConfigError, InvalidCamError
from sim.kinematics import (
    CpaKind,
    CpaResult,
    KinematicState,
    closest_approach,
    closest_approach_accel,
)
from sim.spatial import SpatialGrid
from utils.logger import get_logger
from utils.rate_limiter import AlertLimiter, pair_key
from utils.validation import validator

logger = get_logger("detector")

# Covers the largest vehicle range of action at 50 km/h with t2c_t = 10 s
DEFAULT_CELL_SIZE = 140.0


class EntityClass(str, Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"


class PairKind(str, Enum):
    VEH_VEH = "VehVeh"
    VEH_PED = "VehPed"


def pair_kind(a: EntityClass, b: EntityClass) -> Optional[PairKind]:
    """Kind of an entity pair; None for pedestrian-with-pedestrian"""
    if a is EntityClass.VEHICLE and b is EntityClass.VEHICLE:
        return PairKind.VEH_VEH
    if EntityClass.VEHICLE in (a, b):
        return PairKind.VEH_PED
    return None


@dataclass(frozen=True)
class Cam:
    sender_id: str
    entity_class: EntityClass
    generated_at: float
    state: KinematicState


@dataclass(frozen=True)
class ClassThresholds:
    t2c_t: float
    s2c_t: float


@dataclass(frozen=True)
class DetectorParams:
    vehicle: ClassThresholds = field(default_factory=lambda: ClassThresholds(t2c_t=10.0, s2c_t=5.0))
    pedestrian: ClassThresholds = field(default_factory=lambda: ClassThresholds(t2c_t=5.0, s2c_t=2.0))
    max_cam_age: float = 0.8
    cam_frequency: float = 10.0
    alert_max_frequency: float = 1.0
    use_acceleration: bool = False
    accel_step: float = 0.05

    def __post_init__(self):
        values = {
            "vehicle.t2c_t": self.vehicle.t2c_t,
            "vehicle.s2c_t": self.vehicle.s2c_t,
            "pedestrian.t2c_t": self.pedestrian.t2c_t,
            "pedestrian.s2c_t": self.pedestrian.s2c_t,
            "max_cam_age": self.max_cam_age,
            "cam_frequency": self.cam_frequency,
            "alert_max_frequency": self.alert_max_frequency,
            "accel_step": self.accel_step,
        }
        for name, value in values.items():
            ok, message = validator.validate_number(name, value, positive=True)
            if not ok:
                raise ConfigError(message)

    def for_class(self, entity_class: EntityClass) -> ClassThresholds:
        return self.pedestrian if entity_class is EntityClass.PEDESTRIAN else self.vehicle

    def governing(self, a: EntityClass, b: EntityClass) -> ClassThresholds:
        """Thresholds of the stricter class; pedestrian values govern mixed pairs"""
        if EntityClass.PEDESTRIAN in (a, b):
            return self.pedestrian
        return self.vehicle

    def horizon_for(self, kind: PairKind) -> float:
        return self.pedestrian.t2c_t if kind is PairKind.VEH_PED else self.vehicle.t2c_t

    def with_thresholds(self, kind: PairKind, t2c_t: float, s2c_t: float) -> "DetectorParams":
        """Copy with the thresholds governing `kind` replaced"""
        thresholds = ClassThresholds(t2c_t=t2c_t, s2c_t=s2c_t)
        if kind is PairKind.VEH_PED:
            return replace(self, pedestrian=thresholds)
        return replace(self, vehicle=thresholds)


class IngestResult(str, Enum):
    STORED = "stored"
    STALE = "stale"


@dataclass(frozen=True)
class Detection:
    cpa: CpaResult
    kind: PairKind

    @property
    def t_star(self) -> float:
        return self.cpa.t_star if self.cpa.kind is CpaKind.APPROACHING else 0.0

    @property
    def d_star(self) -> float:
        if self.cpa.kind is CpaKind.APPROACHING:
            return self.cpa.d_star
        return self.cpa.current_distance


@dataclass(frozen=True)
class Alert:
    pair: tuple
    issued_at: float
    predicted_t_star: float
    predicted_d_star: float
    kind: PairKind
    source_id: str
    cam_time: float

    @property
    def recipients(self) -> tuple:
        """Both entities of the pair are warned"""
        return self.pair

    def to_record(self) -> dict:
        return {
            "issued_at": self.issued_at,
            "a": self.pair[0],
            "b": self.pair[1],
            "kind": self.kind.value,
            "t_star": self.predicted_t_star,
            "d_star": self.predicted_d_star,
            "source": self.source_id,
            "cam_time": self.cam_time,
        }


class CamStore:
    """Latest CAM per sender with a grid index over positions"""

    def __init__(self, cell_size: float = DEFAULT_CELL_SIZE):
        self.entries: Dict[str, Cam] = {}
        self.index = SpatialGrid(cell_size)
        self.max_speed: Dict[EntityClass, float] = {}

    def get(self, sender_id: str) -> Optional[Cam]:
        return self.entries.get(sender_id)

    def put(self, cam: Cam) -> None:
        self.entries[cam.sender_id] = cam
        pos = cam.state.position
        self.index.insert(cam.sender_id, pos.x, pos.y)
        speed = cam.state.speed
        if speed > self.max_speed.get(cam.entity_class, 0.0):
            self.max_speed[cam.entity_class] = speed

    def remove(self, sender_id: str) -> None:
        self.entries.pop(sender_id, None)
        self.index.remove(sender_id)

    def fresh(self, now: float, max_age: float) -> Iterator[Cam]:
        for cam in self.entries.values():
            if now - cam.generated_at <= max_age:
                yield cam

    def prune(self, now: float, max_age: float) -> int:
        """Drop entries that can no longer be returned; returns how many"""
        stale = [sid for sid, cam in self.entries.items() if now - cam.generated_at > max_age]
        for sid in stale:
            self.remove(sid)
        return len(stale)

    def max_radius(self, params: DetectorParams) -> float:
        """Largest range of action any stored entity can have"""
        radius = 0.0
        for entity_class, speed in self.max_speed.items():
            radius = max(radius, action_radius(speed, params.for_class(entity_class)))
        return radius

    def __len__(self) -> int:
        return len(self.entries)


def ingest_cam(cam: Cam, now: float, store: CamStore, params: DetectorParams) -> IngestResult:
    ok, message = validator.validate_cam(cam, now)
    if not ok:
        raise InvalidCamError(message)

    if now - cam.generated_at > params.max_cam_age:
        return IngestResult.STALE

    current = store.get(cam.sender_id)
    if current is not None and current.generated_at > cam.generated_at:
        # out-of-order delivery: the stored message is newer
        return IngestResult.STALE

    store.put(cam)
    return IngestResult.STORED


def action_radius(speed: float, thresholds: ClassThresholds) -> float:
    """Range of action: max(speed * t2c_t, s2c_t)"""
    if speed < 0:
        raise ValueError(f"speed must be non-negative, got {speed}")
    return max(speed * thresholds.t2c_t, thresholds.s2c_t)


def candidate_set(cam: Cam, store: CamStore, now: float, params: DetectorParams) -> List[Cam]:
    """Fresh CAMs of other senders within range of action, sorted by sender id.

    A pair is in range when the distance is within either entity's
    radius. Pedestrian-with-pedestrian pairs are skipped.
    """
    sender = store.get(cam.sender_id) or cam
    sender_pos = sender.state.position
    sender_radius = action_radius(sender.state.speed, params.for_class(sender.entity_class))
    search_radius = max(sender_radius, store.max_radius(params))

    candidates = []
    for key in store.index.query(sender_pos.x, sender_pos.y, search_radius):
        if key == sender.sender_id:
            continue
        other = store.entries[key]
        if now - other.generated_at > params.max_cam_age:
            continue
        if pair_kind(sender.entity_class, other.entity_class) is None:
            continue
        distance = (other.state.position - sender_pos).norm()
        other_radius = action_radius(other.state.speed, params.for_class(other.entity_class))
        if distance <= max(sender_radius, other_radius):
            candidates.append(other)
    candidates.sort(key=lambda c: c.sender_id)
    return candidates


def on_collision_course(cpa: CpaResult, thresholds: ClassThresholds) -> bool:
    if cpa.kind is CpaKind.APPROACHING:
        return 0.0 <= cpa.t_star <= thresholds.t2c_t and cpa.d_star <= thresholds.s2c_t
    if cpa.kind is CpaKind.PARALLEL:
        return cpa.current_distance <= thresholds.s2c_t
    return False


def detect_collisions(cam: Cam, store: CamStore, now: float, params: DetectorParams,
                      pair_kinds: Optional[FrozenSet[PairKind]] = None) -> Dict[str, Detection]:
    """Entities on a collision course with the CAM sender, keyed by id.

    Stored states are advanced to `now` under constant velocity before
    the closest-approach test.
    """
    sender = store.get(cam.sender_id) or cam
    state_a = sender.state.advanced(now - sender.generated_at)

    found: Dict[str, Detection] = {}
    for other in candidate_set(sender, store, now, params):
        kind = pair_kind(sender.entity_class, other.entity_class)
        if pair_kinds is not None and kind not in pair_kinds:
            continue
        thresholds = params.governing(sender.entity_class, other.entity_class)
        state_b = other.state.advanced(now - other.generated_at)
        if params.use_acceleration:
            cpa = closest_approach_accel(state_a, state_b, thresholds.t2c_t, params.accel_step)
        else:
            cpa = closest_approach(state_a, state_b)
        if on_collision_course(cpa, thresholds):
            found[other.sender_id] = Detection(cpa=cpa, kind=kind)
    return found


def emit_alerts(source_id: str, colliders: Mapping[str, Detection], now: float,
                limiter: AlertLimiter, cam_time: Optional[float] = None) -> List[Alert]:
    """One alert per unordered pair not alerted within the last 1/alert_max_frequency s"""
    alerts = []
    for other_id in sorted(colliders):
        detection = colliders[other_id]
        key = pair_key(source_id, other_id)
        if not limiter.allow(key, now):
            continue
        alerts.append(Alert(
            pair=key,
            issued_at=now,
            predicted_t_star=detection.t_star,
            predicted_d_star=detection.d_star,
            kind=detection.kind,
            source_id=source_id,
            cam_time=now if cam_time is None else cam_time,
        ))
    return alerts


class Detector:
    """CAM store, alert limiter and parameters forming one detection server.

    Mutations are serialized by the caller; one instance per run.
    """

    PRUNE_INTERVAL = 1.0

    def __init__(self, params: DetectorParams, pair_kinds: Optional[FrozenSet[PairKind]] = None,
                 cell_size: float = DEFAULT_CELL_SIZE):
        self.params = params
        self.pair_kinds = pair_kinds
        self.store = CamStore(cell_size)
        self.limiter = AlertLimiter(params.alert_max_frequency)
        self._last_prune = 0.0
        self.stats = {"received": 0, "stored": 0, "stale": 0, "detections": 0, "alerts": 0}

    def on_cam(self, cam: Cam, now: float) -> List[Alert]:
        """Ingest, detect and emit for one CAM delivered at server time `now`"""
        self.stats["received"] += 1
        if ingest_cam(cam, now, self.store, self.params) is IngestResult.STALE:
            self.stats["stale"] += 1
            return []
        self.stats["stored"] += 1

        if now - self._last_prune >= self.PRUNE_INTERVAL:
            self.store.prune(now, self.params.max_cam_age)
            self._last_prune = now

        detections = detect_collisions(cam, self.store, now, self.params, self.pair_kinds)
        if not detections:
            return []
        self.stats["detections"] += len(detections)
        alerts = emit_alerts(cam.sender_id, detections, now, self.limiter, cam_time=cam.generated_at)
        self.stats["alerts"] += len(alerts)
        for alert in alerts:
            logger.debug("Alert issued", alert.to_record())
        return alerts

    def get_stats(self) -> dict:
        stats = dict(self.stats)
        stats["limiter"] = self.limiter.get_stats()
        return stats
