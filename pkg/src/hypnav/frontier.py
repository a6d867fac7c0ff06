"""Occupancy mapping, frontier detection and DBSCAN frontier clustering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .world.core import DOOR, FREE, Cell, cell_center
from .world.perception import Observation

UNKNOWN, KNOWN_FREE, OCCUPIED = 0, 1, 2
STATE_CHARS = {UNKNOWN: "?", KNOWN_FREE: ".", OCCUPIED: "#"}

DEFAULT_EPS = 0.5
DEFAULT_MIN_SAMPLES = 3


class DimensionMismatch(ValueError):
    """Observation and map describe grids of different size."""


@dataclass
class OccupancyMap:
    """Cell knowledge of one agent. States only ever move away from ``UNKNOWN``."""

    grid: np.ndarray
    resolution: float

    @classmethod
    def empty(cls, shape: tuple[int, int], resolution: float) -> "OccupancyMap":
        return cls(np.zeros(shape, dtype=np.int8), resolution)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape  # type: ignore[return-value]

    def free_mask(self) -> np.ndarray:
        return self.grid == KNOWN_FREE

    def dump(self) -> str:
        """Text rendering, one character per cell."""
        lut = np.array([STATE_CHARS[UNKNOWN], STATE_CHARS[KNOWN_FREE], STATE_CHARS[OCCUPIED]])
        return "\n".join("".join(row) for row in lut[self.grid])


def update_occupancy(occ: OccupancyMap, obs: Observation) -> list[Cell]:
    """Record an observation; returns the cells that were unknown before."""
    if tuple(obs.shape) != tuple(occ.grid.shape):
        raise DimensionMismatch(f"observation grid {obs.shape} vs map {occ.grid.shape}")
    if obs.rows.size == 0:
        return []
    rows, cols = obs.rows, obs.cols
    fresh = occ.grid[rows, cols] == UNKNOWN
    if not fresh.any():
        return []
    rows, cols, kinds = rows[fresh], cols[fresh], obs.kinds[fresh]
    passable = (kinds == FREE) | (kinds == DOOR)
    occ.grid[rows, cols] = np.where(passable, KNOWN_FREE, OCCUPIED)
    return list(zip(rows.tolist(), cols.tolist()))


def frontier_mask(occ: OccupancyMap) -> np.ndarray:
    """Boolean mask of known-free cells with an unknown 4-neighbour."""
    unk = np.pad(occ.grid == UNKNOWN, 1, constant_values=False)
    near = unk[:-2, 1:-1] | unk[2:, 1:-1] | unk[1:-1, :-2] | unk[1:-1, 2:]
    return (occ.grid == KNOWN_FREE) & near


def detect_frontiers(occ: OccupancyMap) -> set[Cell]:
    rows, cols = np.nonzero(frontier_mask(occ))
    return set(zip(rows.tolist(), cols.tolist()))


@dataclass(frozen=True)
class Frontier:
    id: int
    centroid: tuple[float, float]
    member_cells: frozenset[Cell]
    created_step: int = 0
    # unknown cells bordering the cluster at detection time
    beyond_cells: frozenset[Cell] = field(default=frozenset())

    def nearest_member(self, resolution: float, allowed=None) -> Cell:
        """Member cell closest to the centroid (ties: smallest cell).

        ``allowed`` optionally filters candidates; when it rejects every
        member the unfiltered answer is returned.
        """
        cx, cy = self.centroid
        best = None
        cells = sorted(self.member_cells)
        if allowed is not None:
            cells = [c for c in cells if allowed(c)] or cells
        for cell in cells:
            x, y = cell_center(cell, resolution)
            d = (x - cx) ** 2 + (y - cy) ** 2
            if best is None or d < best[0] - 1e-12:
                best = (d, cell)
        assert best is not None
        return best[1]


def _neighbour_offsets(eps_cells: float) -> list[Cell]:
    r = int(np.floor(eps_cells + 1e-9))
    lim = eps_cells * eps_cells * (1 + 1e-9)
    return [(dr, dc) for dr in range(-r, r + 1) for dc in range(-r, r + 1) if dr * dr + dc * dc <= lim]


def dbscan_cells(cells, eps_cells: float, min_samples: int) -> list[list[Cell]]:
    """DBSCAN over integer cells with Euclidean distance measured in cells.

    Border points join the cluster of their nearest core point (ties go
    to the smallest core cell), so the partition does not depend on input
    order. Clusters smaller than ``min_samples`` are dropped as noise.
    """
    pts = sorted(set(cells))
    if not pts:
        return []
    index = {p: i for i, p in enumerate(pts)}
    offsets = _neighbour_offsets(eps_cells)
    nbrs = []
    for r, c in pts:
        nbrs.append([index[q] for dr, dc in offsets if (q := (r + dr, c + dc)) in index])
    core = [len(n) >= min_samples for n in nbrs]
    parent = list(range(len(pts)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, ns in enumerate(nbrs):
        if core[i]:
            for j in ns:
                if core[j]:
                    a, b = find(i), find(j)
                    if a != b:
                        parent[max(a, b)] = min(a, b)
    label: dict[int, int] = {}
    for i, ns in enumerate(nbrs):
        if core[i]:
            label[i] = find(i)
            continue
        best = None
        for j in ns:
            if core[j]:
                d = (pts[i][0] - pts[j][0]) ** 2 + (pts[i][1] - pts[j][1]) ** 2
                if best is None or (d, j) < best:
                    best = (d, j)
        if best is not None:
            label[i] = find(best[1])
    groups: dict[int, list[Cell]] = {}
    for i in sorted(label):
        groups.setdefault(label[i], []).append(pts[i])
    return [g for g in groups.values() if len(g) >= min_samples]


def cluster_frontiers(
    cells, eps: float = DEFAULT_EPS, min_samples: int = DEFAULT_MIN_SAMPLES, *,
    resolution: float, step: int = 0, first_id: int = 0,
) -> list[Frontier]:
    """Group frontier cells into frontiers ordered by (centroid y, centroid x)."""
    if eps <= 0 or min_samples < 1:
        raise ValueError("need eps > 0 and min_samples >= 1")
    groups = dbscan_cells(cells, eps / resolution, min_samples)
    made = []
    for g in groups:
        centers = np.array([cell_center(x, resolution) for x in g])
        cx, cy = centers.mean(axis=0)
        made.append(((float(cy), float(cx)), frozenset(g)))
    made.sort(key=lambda m: (m[0], min(m[1])))
    return [Frontier(id=first_id + i, centroid=(yx[1], yx[0]), member_cells=members, created_step=step)
            for i, (yx, members) in enumerate(made)]


def beyond_cells(occ: OccupancyMap, members) -> frozenset[Cell]:
    """Unknown 4-neighbours of a set of cells."""
    h, w = occ.grid.shape
    out = set()
    for r, c in members:
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            q = (r + dr, c + dc)
            if 0 <= q[0] < h and 0 <= q[1] < w and occ.grid[q] == UNKNOWN:
                out.add(q)
    return frozenset(out)


def find_frontiers(occ: OccupancyMap, eps: float = DEFAULT_EPS,
                   min_samples: int = DEFAULT_MIN_SAMPLES, step: int = 0) -> list[Frontier]:
    """Detect, cluster and annotate frontiers of the current map."""
    raw = cluster_frontiers(detect_frontiers(occ), eps, min_samples,
                            resolution=occ.resolution, step=step)
    return [Frontier(id=f.id, centroid=f.centroid, member_cells=f.member_cells,
                     created_step=step, beyond_cells=beyond_cells(occ, f.member_cells))
            for f in raw]
