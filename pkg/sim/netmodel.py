"""
Message transport and timing between entities and the detection server.

CAMs travel entity -> eNB -> server (radio + backhaul), alerts travel
back the same way and reach the driver after the receiver's processing
time; the driver then needs T_H to act. `run_coupled` interleaves the
mobility steps with these deliveries in one deterministic event loop.
"""
import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from sim.detector import Alert, Cam, Detector, EntityClass
from sim.errors import ConfigError
from sim.kinematics import KinematicState, Vec2
from sim.mobility import CollisionRecord, World
from utils.logger import get_logger, timer
from utils.validation import validator

logger = get_logger("netmodel")


@dataclass(frozen=True)
class LatencyProfile:
    name: str
    backhaul_latency: float
    radio_latency: float = 0.010
    # uniform extra one-way delay in [0, jitter]; 0 disables it
    jitter: float = 0.0

    def __post_init__(self):
        for attr in ("backhaul_latency", "radio_latency", "jitter"):
            ok, message = validator.validate_number(f"latency.{attr}", getattr(self, attr), non_negative=True)
            if not ok:
                raise ConfigError(message)

    @property
    def uplink_delay(self) -> float:
        return self.radio_latency + self.backhaul_latency

    @property
    def downlink_delay(self) -> float:
        return self.backhaul_latency + self.radio_latency


@dataclass(frozen=True)
class ReactionProfile:
    name: str
    processing_time: float
    human_reaction: float

    def __post_init__(self):
        for attr in ("processing_time", "human_reaction"):
            ok, message = validator.validate_number(f"reaction.{attr}", getattr(self, attr), non_negative=True)
            if not ok:
                raise ConfigError(message)


LATENCY_PRESETS: Dict[str, LatencyProfile] = {
    "metro": LatencyProfile("metro", backhaul_latency=0.005),
    "cloud": LatencyProfile("cloud", backhaul_latency=0.020),
}

REACTION_PRESETS: Dict[str, ReactionProfile] = {
    "hd": ReactionProfile("hd", processing_time=0.4, human_reaction=1.0),
    "av": ReactionProfile("av", processing_time=0.4, human_reaction=0.0),
}


def _profile(kind: str, presets: Dict[str, Any], spec: Union[str, Mapping[str, Any]], cls, fields):
    if isinstance(spec, str):
        if spec not in presets:
            raise ConfigError(f"unknown {kind} profile {spec!r}; choose from {', '.join(sorted(presets))}")
        return presets[spec]
    ok, message = validator.validate_keys(kind, spec, {"preset", *fields})
    if not ok:
        raise ConfigError(message)
    preset = spec.get("preset")
    base = None
    if preset is not None:
        if preset not in presets:
            raise ConfigError(f"unknown {kind} preset {preset!r}")
        base = presets[preset]
    values = {f: spec.get(f, getattr(base, f, None)) for f in fields}
    missing = [f for f, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"{kind}: missing {', '.join(missing)}")
    name = preset or "custom"
    return cls(name=name, **values)


def latency_profile(spec: Union[str, Mapping[str, Any]]) -> LatencyProfile:
    """Preset name or mapping {preset, backhaul_latency, radio_latency, jitter}"""
    return _profile("latency", LATENCY_PRESETS, spec, LatencyProfile,
                    ("backhaul_latency", "radio_latency", "jitter"))


def reaction_profile(spec: Union[str, Mapping[str, Any]]) -> ReactionProfile:
    """Preset name or mapping {preset, processing_time, human_reaction}"""
    return _profile("reaction", REACTION_PRESETS, spec, ReactionProfile,
                    ("processing_time", "human_reaction"))


def transmission_delay(latency: LatencyProfile, reaction: ReactionProfile) -> float:
    """T_D: server to driver notification"""
    return latency.backhaul_latency + latency.radio_latency + reaction.processing_time


@dataclass(frozen=True)
class CamDelivery:
    cam: Cam


@dataclass(frozen=True)
class Reaction:
    agent_id: str


@dataclass(frozen=True)
class AlertTiming:
    hmi_time: float
    action_time: float


class EventQueue:
    """Pending deliveries ordered by (time, insertion sequence)"""

    def __init__(self):
        self._heap: List[Tuple[float, int, Any]] = []
        self._seq = itertools.count()

    def push(self, time: float, event: Any) -> None:
        if not math.isfinite(time):
            raise ValueError(f"event time must be finite, got {time}")
        heapq.heappush(self._heap, (time, next(self._seq), event))

    def pop(self) -> Tuple[float, Any]:
        time, _, event = heapq.heappop(self._heap)
        return time, event

    def peek_time(self) -> Optional[float]:
        return self._heap[0][0] if self._heap else None

    def pop_due(self, until: float):
        """Yield every event with time <= until, in order"""
        while self._heap and self._heap[0][0] <= until:
            yield self.pop()

    def __len__(self) -> int:
        return len(self._heap)


def _jitter(profile: LatencyProfile, rng: Optional[np.random.Generator]) -> float:
    if profile.jitter == 0 or rng is None:
        return 0.0
    return float(rng.uniform(0.0, profile.jitter))


def send_cam(cam: Cam, profile: LatencyProfile, queue: Optional[EventQueue] = None,
             rng: Optional[np.random.Generator] = None) -> float:
    """Schedule the server delivery of a CAM; returns the delivery time"""
    delivered_at = cam.generated_at + profile.uplink_delay + _jitter(profile, rng)
    if queue is not None:
        queue.push(delivered_at, CamDelivery(cam))
    return delivered_at


def send_alert(alert: Alert, latency: LatencyProfile, reaction: ReactionProfile,
               rng: Optional[np.random.Generator] = None) -> AlertTiming:
    """HMI and action times of an alert; identical for both recipients"""
    hmi_time = alert.issued_at + transmission_delay(latency, reaction) + _jitter(latency, rng)
    return AlertTiming(hmi_time=hmi_time, action_time=hmi_time + reaction.human_reaction)


def cam_from_record(record: Mapping[str, Any]) -> Cam:
    """CAM carrying the state of one trajectory record"""
    heading = float(record["heading"])
    return Cam(
        sender_id=str(record["id"]),
        entity_class=EntityClass(record["cls"]),
        generated_at=float(record["time"]),
        state=KinematicState(
            Vec2(float(record["x"]), float(record["y"])),
            Vec2.from_polar(float(record["speed"]), heading),
            Vec2.from_polar(float(record["accel"]), heading),
        ),
    )


def alert_record(alert: Alert, timing: AlertTiming) -> dict:
    record = alert.to_record()
    record["hmi_time"] = timing.hmi_time
    record["action_time"] = timing.action_time
    return record


@dataclass
class CoupledResult:
    trajectories: List[dict] = field(default_factory=list)
    collisions: List[CollisionRecord] = field(default_factory=list)
    alerts: List[dict] = field(default_factory=list)
    end_time: float = 0.0
    stats: Dict[str, Any] = field(default_factory=dict)


def run_coupled(world: World, detector: Optional[Detector], latency: LatencyProfile, reaction: ReactionProfile,
                duration: float, *, closed_loop: bool = True, cam_decimation: int = 10,
                trajectory_decimation: Optional[int] = None, jitter_seed: int = 0) -> CoupledResult:
    """
    One simulation run: mobility steps interleaved with CAM and alert deliveries.

    Per step the world advances, new contacts are logged, due arrivals
    enter, CAMs of the entities whose 10 Hz clock ticks are sent, and
    every event due by the step time is dispatched. A `None` detector
    runs without alerts. Reactions change mobility only in closed loop;
    `closed_loop=False` leaves the trajectories untouched for post-processing.
    """
    if not duration > 0:
        raise ConfigError(f"duration must be positive, got {duration}")
    if cam_decimation < 1:
        raise ConfigError(f"cam decimation must be >= 1, got {cam_decimation}")
    trajectory_decimation = trajectory_decimation or cam_decimation

    rng = np.random.default_rng(jitter_seed) if latency.jitter > 0 else None
    queue = EventQueue()
    result = CoupledResult()
    n_steps = int(round(duration / world.dt))
    reactions = 0

    timer.start("run_coupled")
    for k in range(n_steps + 1):
        if k > 0:
            world.step()
        result.collisions.extend(world.ground_truth_collisions())
        world.process_spawns()
        now = world.time

        records = world.due_records(trajectory_decimation)
        result.trajectories.extend(records)
        if detector is None:
            continue

        cam_records = records if cam_decimation == trajectory_decimation else world.due_records(cam_decimation)
        for record in cam_records:
            send_cam(cam_from_record(record), latency, queue, rng)

        for event_time, event in queue.pop_due(now):
            if isinstance(event, Reaction):
                if world.apply_reaction(event.agent_id, event_time):
                    reactions += 1
                    logger.debug("Reaction applied", {"id": event.agent_id, "t": event_time})
                continue
            for alert in detector.on_cam(event.cam, event_time):
                timing = send_alert(alert, latency, reaction, rng)
                result.alerts.append(alert_record(alert, timing))
                if closed_loop:
                    for recipient in alert.recipients:
                        queue.push(timing.action_time, Reaction(recipient))

    result.end_time = n_steps * world.dt
    result.stats = {
        "steps": n_steps,
        "spawned": world.spawned,
        "despawned": world.despawned,
        "active": world.active,
        "queued": world.queued(),
        "collisions": len(result.collisions),
        "alerts": len(result.alerts),
        "reactions": reactions,
        "undelivered_events": len(queue),
    }
    if detector is not None:
        result.stats["detector"] = detector.get_stats()
    timer.end("run_coupled", {"latency": latency.name, "reaction": reaction.name,
                              "closed_loop": closed_loop, "collisions": len(result.collisions),
                              "alerts": len(result.alerts)})
    return result
