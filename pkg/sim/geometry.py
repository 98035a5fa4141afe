"""
Entity footprints and their overlap tests.

Vehicles are rectangles oriented along their heading, pedestrians are
discs. Overlap uses the separating axis test for two rectangles and the
closest-point distance for a rectangle and a disc.
"""
import math
from dataclasses import dataclass
from typing import List, Tuple, Union

Point = Tuple[float, float]


@dataclass(frozen=True)
class Rect:
    """Oriented rectangle: centre, heading (rad), length along heading, width across"""
    x: float
    y: float
    heading: float
    length: float
    width: float

    def corners(self) -> List[Point]:
        hl, hw = self.length / 2.0, self.width / 2.0
        c, s = math.cos(self.heading), math.sin(self.heading)
        local = [(-hl, -hw), (-hl, hw), (hl, hw), (hl, -hw)]
        return [(self.x + dx * c - dy * s, self.y + dx * s + dy * c) for dx, dy in local]

    def bounding_radius(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)

    def to_local(self, px: float, py: float) -> Point:
        """Point expressed in the rectangle frame (x along heading)"""
        dx, dy = px - self.x, py - self.y
        c, s = math.cos(self.heading), math.sin(self.heading)
        return dx * c + dy * s, -dx * s + dy * c


@dataclass(frozen=True)
class Disc:
    x: float
    y: float
    radius: float

    def bounding_radius(self) -> float:
        return self.radius


Footprint = Union[Rect, Disc]


def _projection(corners: List[Point], axis: Point) -> Tuple[float, float]:
    dots = [cx * axis[0] + cy * axis[1] for cx, cy in corners]
    return min(dots), max(dots)


def _edge_normals(corners: List[Point]) -> List[Point]:
    # two normals suffice for a rectangle
    normals = []
    for i in range(2):
        x1, y1 = corners[i]
        x2, y2 = corners[i + 1]
        ex, ey = x2 - x1, y2 - y1
        n = math.hypot(ex, ey)
        normals.append((-ey / n, ex / n) if n else (0.0, 0.0))
    return normals


def rects_overlap(a: Rect, b: Rect) -> bool:
    """Separating axis test; touching edges count as overlap"""
    if math.hypot(b.x - a.x, b.y - a.y) > a.bounding_radius() + b.bounding_radius():
        return False
    ca, cb = a.corners(), b.corners()
    for axis in _edge_normals(ca) + _edge_normals(cb):
        lo_a, hi_a = _projection(ca, axis)
        lo_b, hi_b = _projection(cb, axis)
        if hi_a < lo_b or hi_b < lo_a:
            return False
    return True


def rect_point_distance(rect: Rect, px: float, py: float) -> float:
    """Distance from a point to the rectangle, 0 inside"""
    lx, ly = rect.to_local(px, py)
    dx = max(abs(lx) - rect.length / 2.0, 0.0)
    dy = max(abs(ly) - rect.width / 2.0, 0.0)
    return math.hypot(dx, dy)


def rect_disc_overlap(rect: Rect, disc: Disc) -> bool:
    return rect_point_distance(rect, disc.x, disc.y) <= disc.radius


def discs_overlap(a: Disc, b: Disc) -> bool:
    return math.hypot(b.x - a.x, b.y - a.y) <= a.radius + b.radius


def overlaps(a: Footprint, b: Footprint) -> bool:
    if isinstance(a, Rect) and isinstance(b, Rect):
        return rects_overlap(a, b)
    if isinstance(a, Rect):
        return rect_disc_overlap(a, b)
    if isinstance(b, Rect):
        return rect_disc_overlap(b, a)
    return discs_overlap(a, b)


def _segment_distance(p1: Point, p2: Point, q1: Point, q2: Point) -> float:
    """Distance between two segments that do not cross"""
    def point_segment(p: Point, a: Point, b: Point) -> float:
        ax, ay = a
        bx, by = b
        ex, ey = bx - ax, by - ay
        ll = ex * ex + ey * ey
        t = 0.0 if ll == 0 else max(0.0, min(1.0, ((p[0] - ax) * ex + (p[1] - ay) * ey) / ll))
        return math.hypot(p[0] - (ax + t * ex), p[1] - (ay + t * ey))

    return min(
        point_segment(p1, q1, q2),
        point_segment(p2, q1, q2),
        point_segment(q1, p1, p2),
        point_segment(q2, p1, p2),
    )


def footprint_gap(a: Footprint, b: Footprint) -> float:
    """Shortest distance between two footprints, 0 when they overlap"""
    if overlaps(a, b):
        return 0.0
    if isinstance(a, Disc) and isinstance(b, Disc):
        return math.hypot(b.x - a.x, b.y - a.y) - a.radius - b.radius
    if isinstance(a, Rect) and isinstance(b, Disc):
        return rect_point_distance(a, b.x, b.y) - b.radius
    if isinstance(a, Disc) and isinstance(b, Rect):
        return rect_point_distance(b, a.x, a.y) - a.radius

    ca, cb = a.corners(), b.corners()
    best = math.inf
    for i in range(4):
        for j in range(4):
            best = min(best, _segment_distance(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4]))
    return best
