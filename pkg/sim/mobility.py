"""
Microscopic mobility of vehicles and pedestrians.

Vehicles drive their lane with the Intelligent Driver Model, pedestrians
walk the pedestrian lane at constant speed. Inside intersections and
zebra crossings, routes meet at conflict points. Among vehicles the first
to arrive goes; a later one times its approach to reach the point just as
the other clears it. Pedestrians wait at the kerb for a gap and, once
impatient, cross anyway; vehicles give way to anyone already committed to
or inside the zone. Agents drawn as violators at arrival ignore all of
this, which is what produces collisions. Collisions are shape overlaps, logged once per
contact episode; the colliding agents keep moving through each other.
"""
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from sim.detector import EntityClass, PairKind, pair_kind
from sim.errors import ConfigError
from sim.geometry import Disc, Footprint, Rect, overlaps
from sim.kinematics import KinematicState, Vec2
from sim.scenario import ConflictPoint, Route, RouteZone, Scenario, VehicleSpec, default_scenario
from sim.spatial import SpatialGrid
from sim.stats import mean_ci
from utils.logger import get_logger, timer
from utils.rate_limiter import pair_key
from utils.validation import validator

logger = get_logger("mobility")

MAX_DT = 0.1
# below this an agent counts as standing
SPEED_FLOOR = 0.1
# a vehicle braking harder than this is not trusted to keep its predicted timing
UNSTEADY_DECEL = 0.5
COLLISION_CELL_SIZE = 10.0
ARRIVAL_CHUNK = 256


@dataclass(frozen=True)
class ArrivalConfig:
    lambda_v: float = 0.7
    lambda_p: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_v", "lambda_p"):
            ok, message = validator.validate_number(name, getattr(self, name), non_negative=True)
            if not ok:
                raise ConfigError(message)
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")


@dataclass(frozen=True)
class Arrival:
    time: float
    entity_class: EntityClass
    entry: str
    violator: bool


@dataclass(frozen=True)
class CollisionRecord:
    time: float
    pair: Tuple[str, str]
    kind: PairKind
    position: Vec2

    def to_record(self) -> dict:
        return {
            "time": self.time,
            "a": self.pair[0],
            "b": self.pair[1],
            "kind": self.kind.value,
            "x": self.position.x,
            "y": self.position.y,
        }


def _poisson_times(rng: np.random.Generator, rate: float, duration: float) -> np.ndarray:
    """Arrival instants in [0, duration] as cumulative standard exponentials over `rate`.

    Draws come in fixed-size chunks so a larger rate only compresses the
    same underlying sequence.
    """
    if rate == 0:
        return np.empty(0)
    draws = rng.standard_exponential(ARRIVAL_CHUNK)
    while draws.sum() / rate <= duration:
        draws = np.concatenate([draws, rng.standard_exponential(ARRIVAL_CHUNK)])
    times = np.cumsum(draws) / rate
    return times[times <= duration]


def generate_arrivals(cfg: ArrivalConfig, duration: float, scenario: Optional[Scenario] = None) -> List[Arrival]:
    """Poisson spawn schedule for vehicles and pedestrians, deterministic in cfg.seed"""
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    scenario = scenario or default_scenario()
    p_violate = scenario.behaviour.p_violate

    streams = np.random.SeedSequence(cfg.seed).spawn(6)
    arrivals: List[Arrival] = []
    plan = (
        (EntityClass.VEHICLE, cfg.lambda_v, scenario.vehicle_entries, streams[0:3]),
        (EntityClass.PEDESTRIAN, cfg.lambda_p, scenario.pedestrian_entries, streams[3:6]),
    )
    for entity_class, rate, entries, (time_seq, entry_seq, violate_seq) in plan:
        times = _poisson_times(np.random.default_rng(time_seq), rate, duration)
        n = len(times)
        if n == 0:
            continue
        choices = np.random.default_rng(entry_seq).integers(0, len(entries), size=n)
        violators = np.random.default_rng(violate_seq).random(n) < p_violate
        for t, c, v in zip(times, choices, violators):
            arrivals.append(Arrival(float(t), entity_class, entries[int(c)], bool(v)))

    arrivals.sort(key=lambda a: (a.time, a.entity_class.value, a.entry))
    return arrivals


@dataclass
class EntityAgent:
    agent_id: str
    entity_class: EntityClass
    route: Route
    yielding: bool
    max_speed: float
    max_decel: float
    spawn_step: int
    s: float = 0.0
    speed: float = 0.0
    accel: float = 0.0
    length: float = 0.0
    width: float = 0.0
    radius: float = 0.0
    braking: bool = False
    hold_until: Optional[float] = None
    committed: Set[str] = field(default_factory=set)
    waiting_since: Optional[float] = None

    @property
    def is_vehicle(self) -> bool:
        return self.entity_class is EntityClass.VEHICLE

    @property
    def half_width(self) -> float:
        return self.width / 2.0 if self.is_vehicle else self.radius

    @property
    def half_extent(self) -> float:
        """Distance from centre to front along the route"""
        return self.length / 2.0 if self.is_vehicle else self.radius

    @property
    def front(self) -> float:
        return self.s + self.half_extent

    @property
    def rear(self) -> float:
        return self.s - self.half_extent

    def pose(self) -> Tuple[float, float, float]:
        return self.route.pose(self.s)

    def footprint(self) -> Footprint:
        x, y, heading = self.pose()
        if self.is_vehicle:
            return Rect(x, y, heading, self.length, self.width)
        return Disc(x, y, self.radius)

    def state(self) -> KinematicState:
        x, y, heading = self.pose()
        return KinematicState(
            Vec2(x, y),
            Vec2.from_polar(self.speed, heading),
            Vec2.from_polar(self.accel, heading),
        )

    def trajectory_record(self, time: float) -> dict:
        x, y, heading = self.pose()
        return {
            "time": time,
            "id": self.agent_id,
            "cls": self.entity_class.value,
            "x": x,
            "y": y,
            "speed": self.speed,
            "heading": heading,
            "accel": self.accel,
        }


def idm_accel(speed: float, desired_speed: float, gap: Optional[float], approach_rate: float,
              spec: VehicleSpec) -> float:
    """Intelligent Driver Model acceleration clamped to [-max_decel, accel]"""
    if desired_speed > 0:
        free = 1.0 - (speed / desired_speed) ** spec.delta
    else:
        free = 0.0 if speed == 0 else -math.inf
    interaction = 0.0
    if gap is not None:
        s_star = spec.min_gap + max(
            0.0, speed * spec.headway + speed * approach_rate / (2.0 * math.sqrt(spec.accel * spec.comfort_decel))
        )
        interaction = (s_star / max(gap, 1e-3)) ** 2
    a = spec.accel * (free - interaction)
    return min(max(a, -spec.max_decel), spec.accel)


def travel_time(distance: float, speed: float, accel: float, top: float) -> float:
    """Time to cover `distance` from `speed`, accelerating at `accel` up to `top`; inf if it never gets there"""
    if distance <= 0:
        return 0.0
    if accel <= 0 or speed >= top:
        return distance / speed if speed > SPEED_FLOOR else math.inf
    t_top = (top - speed) / accel
    d_top = speed * t_top + 0.5 * accel * t_top ** 2
    if distance <= d_top:
        return (math.sqrt(speed * speed + 2.0 * accel * distance) - speed) / accel
    return t_top + (distance - d_top) / top


class World:
    """All agents of one scenario run plus the arrivals still to enter.

    Time is `step_count * dt`; one instance is single-threaded.
    """

    def __init__(self, scenario: Scenario, arrivals: Sequence[Arrival] = (), dt: float = 0.01):
        if not (0 < dt <= MAX_DT):
            raise ValueError(f"dt must be in (0, {MAX_DT}], got {dt}")
        self.scenario = scenario
        self.dt = dt
        self.step_count = 0

        self.agents: Dict[str, EntityAgent] = {}
        self.pending: Deque[Arrival] = deque(sorted(arrivals, key=lambda a: a.time))
        self.entry_queues: Dict[str, Deque[Arrival]] = {}

        self.spawned = 0
        self.despawned = 0
        self._counters = {EntityClass.VEHICLE: 0, EntityClass.PEDESTRIAN: 0}
        self._contacts: Set[Tuple[str, str]] = set()

    @property
    def time(self) -> float:
        return self.step_count * self.dt

    @property
    def active(self) -> int:
        return len(self.agents)

    def vehicle_count(self) -> int:
        return sum(1 for a in self.agents.values() if a.is_vehicle)

    def _next_id(self, entity_class: EntityClass) -> str:
        self._counters[entity_class] += 1
        prefix = "veh" if entity_class is EntityClass.VEHICLE else "ped"
        return f"{prefix}{self._counters[entity_class]}"

    def add_agent(self, entry: str, entity_class: EntityClass = EntityClass.VEHICLE, *, s: float = 0.0,
                  speed: Optional[float] = None, violator: bool = False, max_speed: Optional[float] = None,
                  agent_id: Optional[str] = None) -> EntityAgent:
        """Place an agent on the route of `entry` without the entry clearance check"""
        if entity_class is EntityClass.VEHICLE:
            route = self.scenario.vehicle_routes.get(entry)
            spec = self.scenario.vehicle
            top = spec.max_speed if max_speed is None else max_speed
            dims = {"length": spec.length, "width": spec.width}
            max_decel = spec.max_decel
        else:
            route = self.scenario.pedestrian_routes.get(entry)
            spec = self.scenario.pedestrian
            top = spec.walk_speed if max_speed is None else max_speed
            dims = {"radius": spec.radius}
            max_decel = math.inf
        if route is None:
            raise ConfigError(f"unknown {entity_class.value} entry point {entry!r}")

        agent = EntityAgent(
            agent_id=agent_id or self._next_id(entity_class),
            entity_class=entity_class,
            route=route,
            yielding=not violator,
            max_speed=top,
            max_decel=max_decel,
            spawn_step=self.step_count,
            s=s,
            speed=top if speed is None else min(speed, top),
            **dims,
        )
        self.agents[agent.agent_id] = agent
        self.spawned += 1
        logger.debug("Agent spawned", {"id": agent.agent_id, "entry": entry, "violator": violator, "t": self.time})
        return agent

    def _entry_speed(self, route: Route) -> Optional[float]:
        """Insertion speed at the start of `route`, None when the entry is blocked"""
        spec = self.scenario.vehicle
        leader = None
        for other in self.agents.values():
            if other.is_vehicle and other.route is route and (leader is None or other.s < leader.s):
                leader = other
        if leader is None:
            return spec.max_speed
        gap = leader.rear - spec.length / 2.0
        if gap < spec.min_gap:
            return None
        # stopping from the insertion speed must not use more than the free gap
        return min(spec.max_speed, math.sqrt(2.0 * spec.max_decel * (gap - spec.min_gap) + leader.speed ** 2))

    def process_spawns(self) -> List[EntityAgent]:
        """Enter every due arrival whose entry is clear; blocked ones wait in their entry queue"""
        now = self.time + 1e-9
        while self.pending and self.pending[0].time <= now:
            arrival = self.pending.popleft()
            self.entry_queues.setdefault(arrival.entry, deque()).append(arrival)

        spawned = []
        for entry in sorted(self.entry_queues):
            queue = self.entry_queues[entry]
            while queue:
                arrival = queue[0]
                if arrival.entity_class is EntityClass.VEHICLE:
                    speed = self._entry_speed(self.scenario.vehicle_routes[entry])
                    if speed is None:
                        break
                else:
                    speed = None
                queue.popleft()
                spawned.append(self.add_agent(entry, arrival.entity_class, speed=speed, violator=arrival.violator))
        return spawned

    def queued(self) -> int:
        return sum(len(q) for q in self.entry_queues.values())

    def apply_reaction(self, agent_id: str, now: float) -> bool:
        """Brake to a standstill (pedestrians stop at once) and hold; False if the agent is gone"""
        agent = self.agents.get(agent_id)
        if agent is None:
            return False
        hold = self.scenario.behaviour.reaction_hold
        if agent.is_vehicle and agent.speed > 0:
            agent.braking = True
        else:
            agent.speed = 0.0
            agent.accel = 0.0
            agent.braking = False
            agent.hold_until = max(agent.hold_until or now, now + hold)
        return True

    def _by_route(self) -> Dict[str, List[EntityAgent]]:
        by_route: Dict[str, List[EntityAgent]] = {}
        for agent in self.agents.values():
            by_route.setdefault(agent.route.name, []).append(agent)
        for members in by_route.values():
            members.sort(key=lambda a: (a.s, a.agent_id))
        return by_route

    @staticmethod
    def _leaders(by_route: Dict[str, List[EntityAgent]]) -> Dict[str, Optional[EntityAgent]]:
        leaders: Dict[str, Optional[EntityAgent]] = {}
        for members in by_route.values():
            for i, agent in enumerate(members):
                if agent.is_vehicle:
                    leaders[agent.agent_id] = next((m for m in members[i + 1:] if m.s > agent.s), None)
        return leaders

    @staticmethod
    def _next_zone(agent: EntityAgent) -> Optional[RouteZone]:
        """First zone on the route the agent has neither committed to nor left behind"""
        return next((rz for rz in agent.route.zones
                     if agent.rear <= rz.s_exit and rz.zone not in agent.committed), None)

    def _eta(self, agent: EntityAgent, distance: float) -> float:
        """Earliest time the agent's front can cover `distance`"""
        if agent.is_vehicle:
            return travel_time(distance, agent.speed, self.scenario.vehicle.accel, agent.max_speed)
        return max(distance, 0.0) / max(agent.max_speed, SPEED_FLOOR)

    def _priority(self, agent: EntityAgent, zone: str) -> Tuple[int, bool, float, str]:
        """Order of passage through `zone`: lower goes first.

        Committed agents come first, then anyone already inside, then the
        rest by earliest arrival. A pedestrian still waiting at the kerb
        is behind every vehicle.
        """
        rz = agent.route.span(zone)
        if zone in agent.committed:
            rank = 0
        elif rz.s_enter < agent.front and agent.rear <= rz.s_exit:
            rank = 1
        else:
            rank = 2
        waiting = rank == 2 and not agent.is_vehicle
        return rank, waiting, self._eta(agent, rz.s_enter - agent.front), agent.agent_id

    def _point_cap(self, agent: EntityAgent, other: EntityAgent, point: ConflictPoint) -> Optional[float]:
        """Speed at which `agent` reaches `point` no earlier than `other` clears it, None if unconstrained"""
        clearance = self.scenario.behaviour.clearance
        enter = point.s - other.half_width - clearance - agent.front
        leave = point.s + other.half_width + clearance - agent.rear
        other_enter = point.s_other - agent.half_width - clearance - other.front
        other_leave = point.s_other + agent.half_width + clearance - other.rear
        if leave <= 0 or other_leave <= 0:
            return None
        if self._priority(other, point.zone) > self._priority(agent, point.zone):
            return None
        if enter <= 0:
            # already at the point: a moving agent clears it, a standing one stays put
            return None if agent.speed > SPEED_FLOOR else 0.0

        t_clear = travel_time(other_leave, other.speed, max(other.accel, 0.0), other.max_speed)
        if self._eta(agent, enter) >= t_clear:
            return None
        own_leave = travel_time(leave, agent.speed, 0.0, agent.max_speed)
        if own_leave + self.scenario.behaviour.gap_margin < self._eta(other, other_enter):
            return None

        stop = math.sqrt(2.0 * self.scenario.vehicle.comfort_decel * enter)
        if math.isinf(t_clear):
            return stop
        cap = enter / t_clear
        if other.accel < -UNSTEADY_DECEL:
            cap = min(cap, stop)
        return cap

    def _yield_speed(self, agent: EntityAgent, by_route: Dict[str, List[EntityAgent]]) -> Optional[float]:
        """Speed cap from the agents ahead in the order of the next zone; commits when there is none"""
        spec = self.scenario.vehicle
        rz = self._next_zone(agent)
        if rz is None:
            return None
        distance = rz.s_enter - agent.front
        if distance > spec.lookahead:
            return None

        cap = None
        for point in agent.route.conflicts.get(rz.zone, ()):
            for other in by_route.get(point.other, ()):
                limit = self._point_cap(agent, other, point)
                if limit is not None:
                    cap = limit if cap is None else min(cap, limit)
        if cap is None and distance <= agent.speed ** 2 / (2.0 * spec.comfort_decel) + spec.stop_margin:
            agent.committed.add(rz.zone)
            logger.debug("Zone committed", {"id": agent.agent_id, "zone": rz.zone, "t": self.time})
        return cap

    def _gap_accepted(self, ped: EntityAgent, rz: RouteZone, by_route: Dict[str, List[EntityAgent]],
                      impatient: bool) -> bool:
        """True when no vehicle can be at any of the crossing's lanes while the pedestrian walks through them"""
        spec = self.scenario.vehicle
        clearance = self.scenario.behaviour.clearance
        margin = self.scenario.behaviour.gap_margin
        walk = max(ped.max_speed, SPEED_FLOOR)
        for point in ped.route.conflicts.get(rz.zone, ()):
            for vehicle in by_route.get(point.other, ()):
                v_enter = point.s_other - ped.radius - clearance - vehicle.front
                v_leave = point.s_other + ped.radius + clearance - vehicle.rear
                p_leave = point.s + vehicle.half_width + clearance - ped.rear
                if v_leave <= 0 or p_leave <= 0:
                    continue
                if impatient and self._priority(vehicle, rz.zone)[0] == 2:
                    stopping = vehicle.speed ** 2 / (2.0 * spec.comfort_decel) + spec.stop_margin
                    if v_enter > stopping:
                        continue
                p_in = max(point.s - vehicle.half_width - clearance - ped.front, 0.0) / walk
                p_out = p_leave / walk
                v_in = travel_time(max(v_enter, 0.0), vehicle.speed, spec.accel, vehicle.max_speed)
                v_out = travel_time(v_leave, vehicle.speed, spec.accel, vehicle.max_speed)
                if p_in < v_out + margin and v_in < p_out + margin:
                    return False
        return True

    def _kerb_stop(self, ped: EntityAgent, by_route: Dict[str, List[EntityAgent]], now: float) -> Optional[float]:
        """Arc length the pedestrian's front must not pass, or None if it may walk on"""
        rz = self._next_zone(ped)
        if rz is None or rz.s_enter - ped.front > self.scenario.pedestrian.lookahead:
            return None
        impatient = ped.waiting_since is not None and now - ped.waiting_since >= self.scenario.pedestrian.patience
        if ped.front > rz.s_enter or self._gap_accepted(ped, rz, by_route, impatient):
            ped.committed.add(rz.zone)
            if impatient:
                logger.debug("Pedestrian forcing the crossing", {"id": ped.agent_id, "zone": rz.zone, "t": now})
            ped.waiting_since = None
            return None
        if ped.waiting_since is None:
            ped.waiting_since = now
        return rz.s_enter

    def _holding(self, agent: EntityAgent, now: float) -> bool:
        if agent.hold_until is None:
            return False
        if now < agent.hold_until:
            return True
        agent.hold_until = None
        return False

    def _vehicle_accel(self, agent: EntityAgent, leader: Optional[EntityAgent],
                       by_route: Dict[str, List[EntityAgent]], now: float) -> float:
        spec = self.scenario.vehicle
        if agent.braking:
            return -agent.max_decel
        if self._holding(agent, now):
            return 0.0

        accel = idm_accel(agent.speed, agent.max_speed, None, 0.0, spec)
        if leader is not None:
            gap = leader.rear - agent.front
            accel = min(accel, idm_accel(agent.speed, agent.max_speed, gap, agent.speed - leader.speed, spec))
        if agent.yielding:
            cap = self._yield_speed(agent, by_route)
            if cap is not None:
                accel = min(accel, min(max((cap - agent.speed) / self.dt, -agent.max_decel), spec.accel))
        return accel

    def step(self) -> None:
        """Advance every agent by dt, release passed zones and despawn finished agents"""
        now = self.time
        dt = self.dt
        by_route = self._by_route()
        leaders = self._leaders(by_route)

        plans: Dict[str, Tuple[float, Optional[float]]] = {}
        for agent in self.agents.values():
            if agent.is_vehicle:
                accel = self._vehicle_accel(agent, leaders.get(agent.agent_id), by_route, now)
                plans[agent.agent_id] = (accel, None)
            elif self._holding(agent, now):
                plans[agent.agent_id] = (0.0, agent.s)
            else:
                stop = self._kerb_stop(agent, by_route, now) if agent.yielding else None
                plans[agent.agent_id] = (0.0, None if stop is None else stop - agent.radius)

        for agent in self.agents.values():
            accel, stop_at = plans[agent.agent_id]
            if agent.is_vehicle:
                self._integrate_vehicle(agent, accel, dt)
            else:
                target = agent.s + agent.max_speed * dt
                if stop_at is not None:
                    target = min(target, max(agent.s, stop_at))
                agent.speed = (target - agent.s) / dt
                agent.s = target

        self.step_count += 1
        self._release_and_despawn()

    def _integrate_vehicle(self, agent: EntityAgent, accel: float, dt: float) -> None:
        v = agent.speed
        v_next = v + accel * dt
        if v_next <= 0.0:
            ds = v * v / (-2.0 * accel) if accel < 0 else 0.0
            v_next = 0.0
            if agent.braking:
                agent.braking = False
                agent.hold_until = (self.step_count + 1) * dt + self.scenario.behaviour.reaction_hold
        else:
            v_next = min(v_next, agent.max_speed)
            ds = 0.5 * (v + v_next) * dt
        agent.accel = accel if v_next > 0.0 else 0.0
        agent.speed = v_next
        agent.s += ds

    def _release_and_despawn(self) -> None:
        gone = []
        for agent in self.agents.values():
            for rz in agent.route.zones:
                if rz.zone in agent.committed and agent.rear > rz.s_exit:
                    agent.committed.discard(rz.zone)
            if agent.s > agent.route.length:
                gone.append(agent.agent_id)
        for agent_id in gone:
            del self.agents[agent_id]
            self.despawned += 1
            logger.debug("Agent despawned", {"id": agent_id, "t": self.time})

    def ground_truth_collisions(self) -> List[CollisionRecord]:
        """Records for pairs whose shapes started overlapping at this step"""
        grid = SpatialGrid(COLLISION_CELL_SIZE)
        shapes: Dict[str, Footprint] = {}
        for agent_id, agent in self.agents.items():
            shape = agent.footprint()
            shapes[agent_id] = shape
            grid.insert(agent_id, shape.x, shape.y)

        touching: Set[Tuple[str, str]] = set()
        records = []
        for a, b in grid.neighbour_pairs():
            kind = pair_kind(self.agents[a].entity_class, self.agents[b].entity_class)
            if kind is None or not overlaps(shapes[a], shapes[b]):
                continue
            key = pair_key(a, b)
            touching.add(key)
            if key in self._contacts:
                continue
            sa, sb = shapes[a], shapes[b]
            record = CollisionRecord(self.time, key, kind, Vec2((sa.x + sb.x) / 2.0, (sa.y + sb.y) / 2.0))
            records.append(record)
            logger.debug("Collision", record.to_record())
        self._contacts = touching
        records.sort(key=lambda r: r.pair)
        return records

    def due_records(self, decimation: int) -> List[dict]:
        """Trajectory records of the agents whose CAM clock ticks at this step"""
        now = self.time
        return [
            agent.trajectory_record(now)
            for agent in self.agents.values()
            if (self.step_count - agent.spawn_step) % decimation == 0
        ]


def mean_vehicle_count(scenario: Scenario, cfg: ArrivalConfig, duration: float, dt: float = 0.1,
                       sample_interval: float = 1.0) -> float:
    """Time-averaged number of vehicles on the network over one seeded run"""
    world = World(scenario, generate_arrivals(cfg, duration, scenario), dt=dt)
    n_steps = int(round(duration / dt))
    every = max(1, int(round(sample_interval / dt)))
    samples = []
    world.process_spawns()
    for k in range(1, n_steps + 1):
        world.step()
        world.process_spawns()
        if k % every == 0:
            samples.append(world.vehicle_count())
    return float(np.mean(samples)) if samples else 0.0


def _stability_cell(args) -> dict:
    scenario, lambda_v, lambda_p, duration, seeds, dt = args
    counts = [mean_vehicle_count(scenario, ArrivalConfig(lambda_v, lambda_p, seed), duration, dt) for seed in seeds]
    mean, low, high = mean_ci(counts)
    return {"lambda_v": lambda_v, "lambda_p": lambda_p, "mean_count": mean,
            "ci_low": low, "ci_high": high, "n_seeds": len(counts)}


def stability_sweep(lambda_v_grid: Iterable[float], lambda_p_set: Iterable[float], duration: float,
                    seeds: Sequence[int], scenario: Optional[Scenario] = None, dt: float = 0.1,
                    workers: int = 1) -> pd.DataFrame:
    """Mean concurrent vehicle count for every (lambda_v, lambda_p) over a seed set"""
    lambda_v_grid, lambda_p_set, seeds = list(lambda_v_grid), list(lambda_p_set), list(seeds)
    if not lambda_v_grid or not lambda_p_set or not seeds:
        raise ValueError("stability sweep needs non-empty lambda grids and seeds")
    scenario = scenario or default_scenario()

    cells = [(scenario, lv, lp, duration, seeds, dt) for lp in lambda_p_set for lv in lambda_v_grid]
    timer.start("stability_sweep")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_stability_cell, cells))
    else:
        rows = [_stability_cell(cell) for cell in cells]
    timer.end("stability_sweep", {"cells": len(cells), "seeds": len(seeds)})
    return pd.DataFrame(rows, columns=["lambda_v", "lambda_p", "mean_count", "ci_low", "ci_high", "n_seeds"])


def find_knee(lambdas: Sequence[float], means: Sequence[float], fit_points: int = 3,
              tolerance: float = 0.15) -> Optional[float]:
    """First rate whose mean count exceeds the linear trend of the lowest rates by `tolerance`"""
    order = np.argsort(lambdas)
    x = np.asarray(lambdas, dtype=float)[order]
    y = np.asarray(means, dtype=float)[order]
    if len(x) <= fit_points or fit_points < 2:
        return None
    slope, intercept = np.polyfit(x[:fit_points], y[:fit_points], 1)
    for lam, mean in zip(x[fit_points:], y[fit_points:]):
        expected = slope * lam + intercept
        if mean > expected * (1.0 + tolerance):
            return float(lam)
    return None
