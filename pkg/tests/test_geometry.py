import math

import pytest
from hypothesis import given, strategies as st

from sim.geometry import Disc, Rect, footprint_gap, overlaps, rect_point_distance, rects_overlap
from sim.spatial import SpatialGrid


class TestOverlap:
    def test_separated_cars_in_lane(self):
        a = Rect(0.0, 0.0, 0.0, 5.0, 1.8)
        b = Rect(10.0, 0.0, 0.0, 5.0, 1.8)
        assert not rects_overlap(a, b)
        assert footprint_gap(a, b) == pytest.approx(5.0)

    def test_bumper_contact_counts(self):
        a = Rect(0.0, 0.0, 0.0, 5.0, 1.8)
        b = Rect(5.0, 0.0, 0.0, 5.0, 1.8)
        assert overlaps(a, b)
        assert footprint_gap(a, b) == 0.0

    def test_perpendicular_cars_in_intersection(self):
        east = Rect(-74.0, -3.0, 0.0, 5.0, 1.8)
        north = Rect(-72.0, -3.0, math.pi / 2, 5.0, 1.8)
        assert overlaps(east, north)

    def test_diamonds_nearly_touching_at_corners(self):
        a = Rect(0.0, 0.0, math.pi / 4, 2.0, 2.0)
        b = Rect(2.9, 0.0, math.pi / 4, 2.0, 2.0)
        assert not rects_overlap(a, b)
        assert footprint_gap(a, b) == pytest.approx(2.9 - 2.0 * math.sqrt(2.0), abs=1e-9)

    def test_pedestrian_beside_car(self):
        car = Rect(0.0, 0.0, 0.0, 5.0, 1.8)
        ped = Disc(0.0, 3.0, 0.3)
        assert not overlaps(car, ped)
        assert footprint_gap(car, ped) == pytest.approx(1.8)
        assert footprint_gap(ped, car) == pytest.approx(1.8)

    def test_pedestrian_touching_car(self):
        car = Rect(0.0, 0.0, 0.0, 5.0, 1.8)
        assert overlaps(car, Disc(2.7, 0.0, 0.3))
        assert overlaps(Disc(0.0, 1.1, 0.3), car)

    def test_discs(self):
        assert footprint_gap(Disc(0.0, 0.0, 0.3), Disc(1.0, 0.0, 0.3)) == pytest.approx(0.4)
        assert overlaps(Disc(0.0, 0.0, 0.3), Disc(0.5, 0.0, 0.3))

    def test_point_inside_rect_has_zero_distance(self):
        assert rect_point_distance(Rect(1.0, 1.0, 0.3, 5.0, 1.8), 1.0, 1.0) == 0.0

    @given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-math.pi, math.pi))
    def test_gap_is_zero_exactly_when_overlapping(self, x, y, heading):
        a = Rect(0.0, 0.0, 0.0, 5.0, 1.8)
        b = Rect(x, y, heading, 5.0, 1.8)
        gap = footprint_gap(a, b)
        assert gap >= 0.0
        assert (gap == 0.0) == overlaps(a, b) or gap < 1e-9


class TestSpatialGrid:
    def test_query_covers_every_point_in_radius(self):
        grid = SpatialGrid(10.0)
        points = {f"e{i}": (i * 7.3 - 50.0, (i * 13.1) % 40 - 20.0) for i in range(20)}
        for key, (x, y) in points.items():
            grid.insert(key, x, y)
        found = set(grid.query(0.0, 0.0, 25.0))
        expected = {k for k, (x, y) in points.items() if math.hypot(x, y) <= 25.0}
        assert expected <= found

    def test_moving_and_removing(self):
        grid = SpatialGrid(10.0)
        grid.insert("a", 1.0, 1.0)
        grid.insert("a", 95.0, 95.0)
        assert "a" not in grid.query(0.0, 0.0, 5.0)
        assert "a" in grid.query(95.0, 95.0, 1.0)
        grid.remove("a")
        assert len(grid) == 0
        assert "a" not in grid

    def test_neighbour_pairs_are_unique_and_local(self):
        grid = SpatialGrid(10.0)
        grid.insert("a", 1.0, 1.0)
        grid.insert("b", 12.0, 1.0)
        grid.insert("c", 15.0, 15.0)
        grid.insert("far", 100.0, 100.0)
        pairs = [frozenset(p) for p in grid.neighbour_pairs()]
        assert len(pairs) == len(set(pairs))
        assert frozenset({"a", "b"}) in pairs
        assert frozenset({"a", "c"}) in pairs
        assert not any("far" in p for p in pairs)

    def test_rejects_non_positive_cell(self):
        with pytest.raises(ValueError):
            SpatialGrid(0.0)
