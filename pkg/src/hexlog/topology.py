# Hexagonal cell grid: axial coordinates, support-station placement (one
# station per cell), and the precomputed hop-distance table used by the
# handoff threshold rule.
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True, order=True)
class CellCoord:
    q: int
    r: int


# The six axial directions, fixed order (east, then counter-clockwise).
HEX_DIRECTIONS = (
    CellCoord(1, 0),
    CellCoord(1, -1),
    CellCoord(0, -1),
    CellCoord(-1, 0),
    CellCoord(-1, 1),
    CellCoord(0, 1),
)

ORIGIN = CellCoord(0, 0)


def hex_distance(a: CellCoord, b: CellCoord) -> int:
    """Minimum number of cell-to-adjacent-cell steps between a and b."""
    dq = a.q - b.q
    dr = a.r - b.r
    return (abs(dq) + abs(dr) + abs(dq + dr)) // 2


def hex_neighbors(c: CellCoord) -> list[CellCoord]:
    """All six axial neighbors of c, grid membership not checked."""
    return [CellCoord(c.q + d.q, c.r + d.r) for d in HEX_DIRECTIONS]


@dataclass(frozen=True)
class Grid:
    """Static hexagonal grid of radius R with one support station per cell.

    Station ids are assigned 0..n-1 in (q, r) order so identical radii
    always produce identical id layouts.
    """

    radius: int
    cells: tuple[CellCoord, ...]
    mss_of_cell: dict[CellCoord, int] = field(repr=False)
    cell_of_mss: dict[int, CellCoord] = field(repr=False)

    def __len__(self) -> int:
        return len(self.cells)

    def contains(self, c: CellCoord) -> bool:
        return c in self.mss_of_cell


def build_grid(radius: int) -> Grid:
    """All cells within hex distance `radius` of the origin.

    Cell count follows the centered-hexagon formula 1 + 3*R*(R+1).
    """
    if radius < 0:
        raise ValueError(f"grid radius must be >= 0, got {radius}")
    cells = [
        CellCoord(q, r)
        for q in range(-radius, radius + 1)
        for r in range(-radius, radius + 1)
        if hex_distance(CellCoord(q, r), ORIGIN) <= radius
    ]
    cells.sort()
    mss_of_cell = {c: i for i, c in enumerate(cells)}
    cell_of_mss = {i: c for i, c in enumerate(cells)}
    return Grid(radius, tuple(cells), mss_of_cell, cell_of_mss)


def neighbors(c: CellCoord, grid: Grid) -> list[CellCoord]:
    """In-grid subset of the six axial neighbors of c, in fixed order."""
    return [n for n in hex_neighbors(c) if grid.contains(n)]


@dataclass(frozen=True)
class DistanceTable:
    """Hop distances between every ordered pair of support stations.

    A graph metric on the hex adjacency graph: symmetric, zero diagonal,
    triangle inequality.
    """

    entries: dict[tuple[int, int], int] = field(repr=False)

    def __call__(self, p: int, q: int) -> int:
        return self.entries[(p, q)]


def build_distance_table(grid: Grid) -> DistanceTable:
    if len(grid) == 0:
        raise ValueError("grid must be non-empty")
    entries = {}
    for p, cp in grid.cell_of_mss.items():
        for q, cq in grid.cell_of_mss.items():
            entries[(p, q)] = hex_distance(cp, cq)
    return DistanceTable(entries)
