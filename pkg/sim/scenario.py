"""
Road topology of the simulated district.

A scenario is a YAML document describing straight roads, one pedestrian
lane and the zebra crossings on it. Everything the mobility model needs
is derived here: one straight route per vehicle entry point, the
pedestrian routes, the conflict zones (intersections and crossings)
each route passes through, and inside each zone the points where a route
crosses another one.
"""
import bisect
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

from sim.errors import ScenarioError
from utils.logger import get_logger
from utils.validation import validator

logger = get_logger("scenario")

DEFAULT_SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "default.yaml"

INTERSECTION = "intersection"
CROSSING = "crossing"


@dataclass(frozen=True)
class Road:
    name: str
    axis: str  # "x" runs east-west, "y" runs north-south
    offset: float
    start: float
    end: float

    def covers(self, coordinate: float) -> bool:
        return min(self.start, self.end) <= coordinate <= max(self.start, self.end)


@dataclass(frozen=True)
class Crossing:
    name: str
    road: str
    center: Tuple[float, float]
    width: float


@dataclass(frozen=True)
class Zone:
    """Axis-aligned conflict area: an intersection box or a zebra crossing band"""
    name: str
    kind: str
    xmin: float
    xmax: float
    ymin: float
    ymax: float


@dataclass(frozen=True)
class RouteZone:
    zone: str
    s_enter: float
    s_exit: float


@dataclass(frozen=True)
class ConflictPoint:
    """Where this route's centreline crosses route `other` inside `zone`"""
    zone: str
    other: str
    s: float
    s_other: float


@dataclass(frozen=True)
class VehicleSpec:
    length: float = 5.0
    width: float = 1.8
    max_speed: float = 13.89
    accel: float = 2.6
    comfort_decel: float = 3.0
    max_decel: float = 4.5
    min_gap: float = 2.0
    headway: float = 1.0
    delta: float = 4.0
    lookahead: float = 80.0
    stop_margin: float = 1.0


@dataclass(frozen=True)
class PedestrianSpec:
    radius: float = 0.3
    max_speed: float = 2.0
    walk_speed: float = 2.0
    lookahead: float = 2.0
    # seconds at the kerb before forcing a way across
    patience: float = 20.0


@dataclass(frozen=True)
class Behaviour:
    p_violate: float = 0.15
    reaction_hold: float = 3.0
    # lateral margin kept around another agent's footprint at a conflict point (m)
    clearance: float = 0.5
    # extra time a pedestrian wants between its crossing and a vehicle's passage (s)
    gap_margin: float = 1.0


class Route:
    """Polyline with arc-length parametrisation; s runs from 0 at the entry point"""

    def __init__(self, name: str, points: List[Tuple[float, float]], road: Optional[str] = None):
        if len(points) < 2:
            raise ScenarioError(f"route {name} needs at least two points")
        self.name = name
        self.road = road
        self.points = [(float(x), float(y)) for x, y in points]
        self.cumulative = [0.0]
        self.headings = []
        for (x0, y0), (x1, y1) in zip(self.points, self.points[1:]):
            if x0 != x1 and y0 != y1:
                raise ScenarioError(f"route {name}: segments must be axis-aligned")
            seg = math.hypot(x1 - x0, y1 - y0)
            if seg == 0:
                raise ScenarioError(f"route {name}: repeated point ({x0}, {y0})")
            self.cumulative.append(self.cumulative[-1] + seg)
            self.headings.append(math.atan2(y1 - y0, x1 - x0))
        self.zones: Tuple[RouteZone, ...] = ()
        self.conflicts: Dict[str, Tuple[ConflictPoint, ...]] = {}

    @property
    def length(self) -> float:
        return self.cumulative[-1]

    def _segment(self, s: float) -> int:
        idx = bisect.bisect_right(self.cumulative, s) - 1
        return min(max(idx, 0), len(self.headings) - 1)

    def pose(self, s: float) -> Tuple[float, float, float]:
        """(x, y, heading) at arc length s; extends the end segments beyond the route"""
        i = self._segment(s)
        x0, y0 = self.points[i]
        h = self.headings[i]
        u = s - self.cumulative[i]
        return x0 + u * math.cos(h), y0 + u * math.sin(h), h

    def span(self, zone: str) -> Optional[RouteZone]:
        return next((rz for rz in self.zones if rz.zone == zone), None)

    def segments(self):
        """(start index, first point, second point) of every segment"""
        for i, (p, q) in enumerate(zip(self.points, self.points[1:])):
            yield i, p, q

    def reversed(self, name: str) -> "Route":
        return Route(name, list(reversed(self.points)), self.road)

    def clip(self, zone: Zone) -> Optional[Tuple[float, float]]:
        """Arc-length interval the route spends inside `zone`, or None"""
        lo, hi = math.inf, -math.inf
        for i, ((x0, y0), (x1, y1)) in enumerate(zip(self.points, self.points[1:])):
            seg = self.cumulative[i + 1] - self.cumulative[i]
            if y0 == y1:
                if not zone.ymin <= y0 <= zone.ymax:
                    continue
                a, b, lo_b, hi_b = x0, x1, zone.xmin, zone.xmax
            else:
                if not zone.xmin <= x0 <= zone.xmax:
                    continue
                a, b, lo_b, hi_b = y0, y1, zone.ymin, zone.ymax
            u0 = (lo_b - a) / (b - a)
            u1 = (hi_b - a) / (b - a)
            u_in, u_out = max(min(u0, u1), 0.0), min(max(u0, u1), 1.0)
            if u_in > u_out:
                continue
            lo = min(lo, self.cumulative[i] + u_in * seg)
            hi = max(hi, self.cumulative[i] + u_out * seg)
        if lo > hi:
            return None
        return lo, hi


@dataclass
class Scenario:
    lane_width: float
    roads: Dict[str, Road]
    pedestrian_lane: List[Tuple[float, float]]
    crossings: Dict[str, Crossing]
    zones: Dict[str, Zone]
    vehicle_routes: Dict[str, Route]
    pedestrian_routes: Dict[str, Route]
    vehicle: VehicleSpec = field(default_factory=VehicleSpec)
    pedestrian: PedestrianSpec = field(default_factory=PedestrianSpec)
    behaviour: Behaviour = field(default_factory=Behaviour)

    @property
    def vehicle_entries(self) -> List[str]:
        return sorted(self.vehicle_routes)

    @property
    def pedestrian_entries(self) -> List[str]:
        return sorted(self.pedestrian_routes)


SCENARIO_KEYS = {"lane_width", "roads", "pedestrian_lane", "crossings",
                 "vehicle_entries", "pedestrian_entries", "vehicle", "pedestrian", "behaviour"}
ROAD_KEYS = {"axis", "offset", "start", "end"}
CROSSING_KEYS = {"road", "center", "width"}
ENTRY_KEYS = {"road", "direction"}


def _check(ok_message: Tuple[bool, str]) -> None:
    ok, message = ok_message
    if not ok:
        raise ScenarioError(message)


def _number(section: str, value: Any, **bounds) -> float:
    _check(validator.validate_number(section, value, **bounds))
    return float(value)


def _spec(cls, section: str, data: Optional[Mapping[str, Any]]):
    """Dataclass of numeric parameters with defaults for missing keys"""
    data = data or {}
    names = {f.name for f in fields(cls)}
    _check(validator.validate_keys(section, data, names))
    values = {}
    for name, value in data.items():
        bounds = {"upper": 1.0} if name == "p_violate" else {}
        values[name] = _number(f"{section}.{name}", value, non_negative=True, **bounds)
    return cls(**values)


def _point(section: str, value: Any) -> Tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ScenarioError(f"{section}: expected [x, y], got {value!r}")
    return _number(f"{section}.x", value[0]), _number(f"{section}.y", value[1])


def _lane_route(name: str, road: Road, direction: str, lane_width: float) -> Route:
    half = lane_width / 2.0
    lo, hi = min(road.start, road.end), max(road.start, road.end)
    if direction not in ("forward", "backward"):
        raise ScenarioError(f"entry {name}: direction must be forward or backward, got {direction!r}")
    forward = direction == "forward"
    if road.axis == "x":
        # right-hand traffic: eastbound south of the centreline
        y = road.offset - half if forward else road.offset + half
        points = [(lo, y), (hi, y)] if forward else [(hi, y), (lo, y)]
    else:
        x = road.offset + half if forward else road.offset - half
        points = [(x, lo), (x, hi)] if forward else [(x, hi), (x, lo)]
    return Route(name, points, road.name)


def _intersection_zones(roads: Dict[str, Road], lane_width: float) -> Dict[str, Zone]:
    zones = {}
    horizontal = [r for r in roads.values() if r.axis == "x"]
    vertical = sorted((r for r in roads.values() if r.axis == "y"), key=lambda r: r.offset)
    n = 1
    for v in vertical:
        for h in sorted(horizontal, key=lambda r: r.offset):
            if not (h.covers(v.offset) and v.covers(h.offset)):
                continue
            name = f"I{n}"
            zones[name] = Zone(name, INTERSECTION,
                               v.offset - lane_width, v.offset + lane_width,
                               h.offset - lane_width, h.offset + lane_width)
            n += 1
    return zones


def _crossing_zone(crossing: Crossing, road: Road, lane_width: float) -> Zone:
    cx, cy = crossing.center
    half = crossing.width / 2.0
    if road.axis == "x":
        return Zone(crossing.name, CROSSING, cx - half, cx + half,
                    road.offset - lane_width, road.offset + lane_width)
    return Zone(crossing.name, CROSSING, road.offset - lane_width, road.offset + lane_width,
                cy - half, cy + half)


def _attach_zones(route: Route, zones: Dict[str, Zone], kinds: Tuple[str, ...]) -> None:
    found = []
    for zone in zones.values():
        if zone.kind not in kinds:
            continue
        interval = route.clip(zone)
        if interval is not None:
            found.append(RouteZone(zone.name, interval[0], interval[1]))
    route.zones = tuple(sorted(found, key=lambda z: z.s_enter))


def _crossing_points(a: Route, b: Route):
    """(x, y, s on a, s on b) wherever a horizontal segment of one route meets a vertical one of the other"""
    for i, (ax0, ay0), (ax1, ay1) in a.segments():
        for j, (bx0, by0), (bx1, by1) in b.segments():
            a_horizontal, b_horizontal = ay0 == ay1, by0 == by1
            if a_horizontal == b_horizontal:
                continue
            x, y = (bx0, ay0) if a_horizontal else (ax0, by0)
            if not (min(ax0, ax1) <= x <= max(ax0, ax1) and min(ay0, ay1) <= y <= max(ay0, ay1)):
                continue
            if not (min(bx0, bx1) <= x <= max(bx0, bx1) and min(by0, by1) <= y <= max(by0, by1)):
                continue
            s_a = a.cumulative[i] + abs(x - ax0) + abs(y - ay0)
            s_b = b.cumulative[j] + abs(x - bx0) + abs(y - by0)
            yield x, y, s_a, s_b


def _attach_conflicts(routes: List[Route], zones: Dict[str, Zone]) -> None:
    """Conflict points of every route pair that can meet: vehicles of different roads, vehicles and pedestrians"""
    for route in routes:
        found: Dict[str, List[ConflictPoint]] = {}
        for other in routes:
            if other is route or (route.road is None and other.road is None):
                continue
            if route.road is not None and route.road == other.road:
                continue
            for x, y, s, s_other in _crossing_points(route, other):
                zone = next((z for z in zones.values()
                             if z.xmin <= x <= z.xmax and z.ymin <= y <= z.ymax
                             and route.span(z.name) and other.span(z.name)), None)
                if zone is None:
                    continue
                found.setdefault(zone.name, []).append(ConflictPoint(zone.name, other.name, s, s_other))
        route.conflicts = {name: tuple(sorted(points, key=lambda p: (p.s, p.other)))
                           for name, points in found.items()}


def build_scenario(doc: Mapping[str, Any]) -> Scenario:
    """Validate a scenario document and derive routes and zones"""
    _check(validator.validate_keys("scenario", doc, SCENARIO_KEYS))
    lane_width = _number("lane_width", doc.get("lane_width", 6.0), positive=True)

    roads: Dict[str, Road] = {}
    for name, spec in (doc.get("roads") or {}).items():
        _check(validator.validate_keys(f"roads.{name}", spec, ROAD_KEYS))
        axis = spec.get("axis")
        if axis not in ("x", "y"):
            raise ScenarioError(f"roads.{name}.axis must be 'x' or 'y', got {axis!r}")
        start = _number(f"roads.{name}.start", spec.get("start"))
        end = _number(f"roads.{name}.end", spec.get("end"))
        if start == end:
            raise ScenarioError(f"roads.{name}: zero length")
        roads[name] = Road(name, axis, _number(f"roads.{name}.offset", spec.get("offset", 0.0)), start, end)
    if not roads:
        raise ScenarioError("scenario defines no roads")

    lane = [_point(f"pedestrian_lane[{i}]", p) for i, p in enumerate(doc.get("pedestrian_lane") or [])]
    pedestrian_lane_route = Route("pedestrian_lane", lane) if lane else None

    zones = _intersection_zones(roads, lane_width)
    crossings: Dict[str, Crossing] = {}
    for name, spec in (doc.get("crossings") or {}).items():
        _check(validator.validate_keys(f"crossings.{name}", spec, CROSSING_KEYS))
        road = roads.get(spec.get("road"))
        if road is None:
            raise ScenarioError(f"crossings.{name}: unknown road {spec.get('road')!r}")
        center = _point(f"crossings.{name}.center", spec.get("center"))
        along = center[1] if road.axis == "x" else center[0]
        if abs(along - road.offset) > 1e-9:
            raise ScenarioError(f"crossings.{name}: centre does not lie on road {road.name}")
        if pedestrian_lane_route is None or not _on_polyline(center, pedestrian_lane_route):
            raise ScenarioError(f"crossings.{name}: centre does not lie on the pedestrian lane")
        crossing = Crossing(name, road.name, center, _number(f"crossings.{name}.width", spec.get("width", 3.0), positive=True))
        crossings[name] = crossing
        zones[name] = _crossing_zone(crossing, road, lane_width)

    vehicle_routes: Dict[str, Route] = {}
    for name, spec in (doc.get("vehicle_entries") or {}).items():
        _check(validator.validate_keys(f"vehicle_entries.{name}", spec, ENTRY_KEYS))
        road = roads.get(spec.get("road"))
        if road is None:
            raise ScenarioError(f"vehicle_entries.{name}: unknown road {spec.get('road')!r}")
        route = _lane_route(name, road, spec.get("direction", "forward"), lane_width)
        _attach_zones(route, zones, (INTERSECTION, CROSSING))
        vehicle_routes[name] = route
    if not vehicle_routes:
        raise ScenarioError("scenario defines no vehicle entry points")

    pedestrian_routes: Dict[str, Route] = {}
    for name, direction in (doc.get("pedestrian_entries") or {}).items():
        if pedestrian_lane_route is None:
            raise ScenarioError(f"pedestrian_entries.{name}: scenario has no pedestrian lane")
        if direction == "forward":
            route = Route(name, lane)
        elif direction == "backward":
            route = pedestrian_lane_route.reversed(name)
        else:
            raise ScenarioError(f"pedestrian_entries.{name}: direction must be forward or backward")
        _attach_zones(route, zones, (CROSSING,))
        pedestrian_routes[name] = route

    _attach_conflicts([*vehicle_routes.values(), *pedestrian_routes.values()], zones)

    scenario = Scenario(
        lane_width=lane_width,
        roads=roads,
        pedestrian_lane=lane,
        crossings=crossings,
        zones=zones,
        vehicle_routes=vehicle_routes,
        pedestrian_routes=pedestrian_routes,
        vehicle=_spec(VehicleSpec, "vehicle", doc.get("vehicle")),
        pedestrian=_spec(PedestrianSpec, "pedestrian", doc.get("pedestrian")),
        behaviour=_spec(Behaviour, "behaviour", doc.get("behaviour")),
    )
    logger.debug("Scenario built", {
        "roads": len(roads), "zones": sorted(zones), "vehicle_entries": scenario.vehicle_entries,
        "pedestrian_entries": scenario.pedestrian_entries,
    })
    return scenario


def _on_polyline(point: Tuple[float, float], route: Route) -> bool:
    px, py = point
    for (x0, y0), (x1, y1) in zip(route.points, route.points[1:]):
        if y0 == y1 and abs(py - y0) < 1e-9 and min(x0, x1) <= px <= max(x0, x1):
            return True
        if x0 == x1 and abs(px - x0) < 1e-9 and min(y0, y1) <= py <= max(y0, y1):
            return True
    return False


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        doc = yaml.safe_load(f) or {}
    logger.info("Loading scenario", {"path": str(path)})
    return build_scenario(doc)


def default_scenario() -> Scenario:
    return load_scenario(DEFAULT_SCENARIO)
