"""Uniform grid index over moving point items."""
import math
from typing import Dict, Hashable, Iterator, List, Set, Tuple

Cell = Tuple[int, int]


class SpatialGrid:
    """Point items bucketed into square cells of side `size`.

    Items move by re-inserting them under the same key. Queries return
    every key whose cell intersects the query box, so callers still apply
    an exact distance check.
    """

    def __init__(self, size: float) -> None:
        if not size > 0:
            raise ValueError(f"cell size must be positive, got {size}")
        self.size = float(size)
        self.grid: Dict[Cell, Set[Hashable]] = {}
        self.cells: Dict[Hashable, Cell] = {}

    def _cell(self, x: float, y: float) -> Cell:
        return (int(math.floor(x / self.size)), int(math.floor(y / self.size)))

    def insert(self, key: Hashable, x: float, y: float) -> None:
        cell = self._cell(x, y)
        old = self.cells.get(key)
        if old == cell:
            return
        if old is not None:
            self._discard(key, old)
        self.grid.setdefault(cell, set()).add(key)
        self.cells[key] = cell

    def remove(self, key: Hashable) -> None:
        cell = self.cells.pop(key, None)
        if cell is not None:
            self._discard(key, cell)

    def _discard(self, key: Hashable, cell: Cell) -> None:
        bucket = self.grid.get(cell)
        if bucket is None:
            return
        bucket.discard(key)
        if not bucket:
            del self.grid[cell]

    def query(self, x: float, y: float, radius: float) -> List[Hashable]:
        """Keys in cells overlapping the box [x-r, x+r] x [y-r, y+r]"""
        i0, j0 = self._cell(x - radius, y - radius)
        i1, j1 = self._cell(x + radius, y + radius)
        found: List[Hashable] = []
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                bucket = self.grid.get((i, j))
                if bucket:
                    found.extend(bucket)
        return found

    def neighbour_pairs(self) -> Iterator[Tuple[Hashable, Hashable]]:
        """Each unordered pair of keys in the same or adjacent cells, once"""
        for (i, j), bucket in self.grid.items():
            members = sorted(bucket, key=str)
            for a_idx, a in enumerate(members):
                for b in members[a_idx + 1:]:
                    yield a, b
            # half of the neighbourhood so every adjacent cell pair is visited once
            for di, dj in ((1, -1), (1, 0), (1, 1), (0, 1)):
                other = self.grid.get((i + di, j + dj))
                if not other:
                    continue
                for a in members:
                    for b in sorted(other, key=str):
                        yield a, b

    def __len__(self) -> int:
        return len(self.cells)

    def __contains__(self, key: Hashable) -> bool:
        return key in self.cells
