"""Line-of-sight perception with mirror and glass illusions."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .core import (
    DOOR, FREE, GLASS, ILLUSION, MIRROR, WALL, Cell, World, cell_center, region_embedding,
)

# 8 headings, counter-clockwise from east, as (d_row, d_col); rows grow southwards.
HEADINGS: tuple[Cell, ...] = ((0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class Pose:
    cell: Cell
    heading: int = 0

    def xy(self, resolution: float) -> tuple[float, float]:
        return cell_center(self.cell, resolution)


@dataclass(frozen=True)
class SensorConfig:
    range_m: float = 3.5
    # illusion surfaces are recognised as walls only from this close
    reveal_radius_m: float = 1.5
    r_context_m: float = 3.0

    def __post_init__(self) -> None:
        if self.range_m < 0 or self.reveal_radius_m < 0 or self.r_context_m < 0:
            raise ValueError("sensor radii must be nonnegative")


@dataclass(frozen=True)
class SeenObject:
    name: str
    position: tuple[float, float]


@dataclass(frozen=True, eq=False)
class Observation:
    """What the agent perceives from one pose.

    ``region_id`` is the region physically occupied. ``perceived_region`` is
    what the view along the heading suggests, which differs when that sight
    line ends on an unrecognised mirror.
    """

    pose: Pose
    shape: tuple[int, int]
    rows: np.ndarray
    cols: np.ndarray
    kinds: np.ndarray
    visible_objects: tuple[SeenObject, ...]
    region_id: int
    perceived_region: int
    region_category: str
    local_objects: frozenset[str]
    embedding: np.ndarray
    world_id: int = field(default=0)

    @cached_property
    def visible_cells(self) -> frozenset[Cell]:
        return frozenset(zip(self.rows.tolist(), self.cols.tolist()))


def _crossed_cells(dr: int, dc: int) -> list[Cell]:
    """Cells whose open square meets the open segment between two cell centers."""
    if dr == 0 and dc == 0:
        return []
    r_lo, r_hi = min(0, dr), max(0, dr)
    c_lo, c_hi = min(0, dc), max(0, dc)
    ii, jj = np.meshgrid(np.arange(r_lo, r_hi + 1), np.arange(c_lo, c_hi + 1), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    # sign of the line's normal form at the four corners, in doubled coordinates
    vals = np.stack([dc * (2 * ii + si) - dr * (2 * jj + sj) for si in (-1, 1) for sj in (-1, 1)])
    crossed = (vals.min(axis=0) < 0) & (vals.max(axis=0) > 0)
    endpoint = ((ii == 0) & (jj == 0)) | ((ii == dr) & (jj == dc))
    keep = crossed & ~endpoint
    return [(int(a), int(b)) for a, b in zip(ii[keep], jj[keep])]


@lru_cache(maxsize=32)
def _template(radius_sq: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Offsets within range with their padded intermediate-cell lists."""
    r = int(np.floor(np.sqrt(radius_sq) + 1e-9))
    offs = [(dr, dc) for dr in range(-r, r + 1) for dc in range(-r, r + 1)
            if dr * dr + dc * dc <= radius_sq + 1e-9]
    offs.sort(key=lambda o: (o[0] * o[0] + o[1] * o[1], o))
    inters = [_crossed_cells(dr, dc) for dr, dc in offs]
    width = max([len(x) for x in inters] + [1])
    pad = np.zeros((len(offs), width, 2), dtype=np.int32)
    for i, cells in enumerate(inters):
        if cells:
            pad[i, : len(cells)] = cells
    off = np.array(offs, dtype=np.int32).reshape(-1, 2)
    d2 = (off ** 2).sum(axis=1).astype(float)
    return off, pad[:, :, 0], pad[:, :, 1], d2


def _opaque(world: World) -> np.ndarray:
    key = "_opaque_mask"
    cached = world.__dict__.get(key)
    if cached is None:
        cached = world.grid == WALL
        for ill in world.illusions:
            if ill.kind == MIRROR:
                cached[ill.cell] = True
        cached.setflags(write=False)
        world.__dict__[key] = cached
    return cached


def visible_mask(world: World, pose: Pose, range_m: float, reveal_radius_m: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows, columns and distances (m) of visible cells, plus unrevealed illusions.

    Returns ``(rows, cols, hidden)`` where ``hidden`` is a boolean flag per
    in-sight cell marking illusion cells too far away to be recognised.
    """
    res = world.resolution
    off, ir, ic, d2 = _template((range_m / res) ** 2)
    h, w = world.grid.shape
    r0, c0 = pose.cell
    tr = off[:, 0] + r0
    tc = off[:, 1] + c0
    inb = (tr >= 0) & (tr < h) & (tc >= 0) & (tc < w)
    opaque = _opaque(world)
    rr = np.clip(ir + r0, 0, h - 1)
    cc = np.clip(ic + c0, 0, w - 1)
    clear = ~opaque[rr, cc].any(axis=1)
    sight = inb & clear
    tr, tc, d2 = tr[sight], tc[sight], d2[sight]
    hidden = (world.grid[tr, tc] == ILLUSION) & (d2 * res * res > reveal_radius_m ** 2 + 1e-12)
    return tr, tc, hidden


def _reflections(world: World, pose: Pose, seen_mirrors: list[int]) -> list[SeenObject]:
    """Mirror images of the shown region's objects, placed behind the glass surface."""
    out: list[SeenObject] = []
    res = world.resolution
    by_seg: dict[int, list] = {}
    for ill in world.illusions:
        if ill.kind == MIRROR and ill.segment in seen_mirrors:
            by_seg.setdefault(ill.segment, []).append(ill)
    px, py = pose.xy(res)
    for seg in sorted(by_seg):
        cells = by_seg[seg]
        shown = cells[0].region
        mx = float(np.mean([cell_center(x.cell, res)[0] for x in cells]))
        my = float(np.mean([cell_center(x.cell, res)[1] for x in cells]))
        nx, ny = mx - px, my - py
        norm = float(np.hypot(nx, ny)) or 1.0
        nx, ny = nx / norm, ny / norm
        reg = world.region_by_id[shown]
        for ob in world.objects_by_region.get(shown, ()):
            ox, oy = cell_center(ob.cell, res)
            lx, ly = ox - reg.centroid[0], oy - reg.centroid[1]
            along = lx * nx + ly * ny
            depth = 1.0 + abs(along)
            out.append(SeenObject(ob.name, (mx + nx * depth + (lx - along * nx),
                                            my + ny * depth + (ly - along * ny))))
    return out


def sight_line_region(world: World, pose: Pose, range_m: float, reveal_radius_m: float) -> int:
    """Region suggested by the view straight ahead."""
    physical = world.region_of(pose.cell)
    dr, dc = HEADINGS[pose.heading % 8]
    res = world.resolution
    k = 1
    while True:
        r, c = pose.cell[0] + k * dr, pose.cell[1] + k * dc
        dist = k * res * (np.sqrt(2.0) if dr and dc else 1.0)
        if dist > range_m + 1e-9 or not world.in_bounds((r, c)):
            return physical
        kind = world.grid[r, c]
        if kind == WALL:
            return physical
        if kind == ILLUSION:
            ill = world.illusion_at[(r, c)]
            if ill.kind == MIRROR:
                return ill.region if dist > reveal_radius_m + 1e-9 else physical
        k += 1


def perceive(world: World, pose: Pose, range: float, *, reveal_radius: float = 1.5,
             r_context: float = 3.0) -> Observation:
    """Ray-cast the view from ``pose`` out to ``range`` meters."""
    rows, cols, hidden = visible_mask(world, pose, range, reveal_radius)
    res = world.resolution
    shown_rows, shown_cols = rows[~hidden], cols[~hidden]
    vis = np.zeros(world.grid.shape, dtype=bool)
    vis[shown_rows, shown_cols] = True
    objects = [SeenObject(o.name, cell_center(o.cell, res)) for o in world.objects if vis[o.cell]]
    mirrors = sorted({world.illusion_at[(int(r), int(c))].segment
                      for r, c in zip(rows[hidden], cols[hidden])
                      if world.illusion_at[(int(r), int(c))].kind == MIRROR})
    objects.extend(_reflections(world, pose, mirrors))
    px, py = pose.xy(res)
    local = frozenset(o.name for o in objects
                      if (o.position[0] - px) ** 2 + (o.position[1] - py) ** 2 <= r_context ** 2 + 1e-12)
    physical = world.region_of(pose.cell)
    perceived = sight_line_region(world, pose, range, reveal_radius)
    if perceived >= 0:
        category = world.category_name(perceived)
        emb = region_embedding(world, perceived)
    else:
        category = ""
        emb = np.zeros(world.taxonomy.embedding_dim)
    return Observation(
        pose=pose,
        shape=world.grid.shape,
        rows=shown_rows,
        cols=shown_cols,
        kinds=world.grid[shown_rows, shown_cols],
        visible_objects=tuple(objects),
        region_id=physical,
        perceived_region=perceived,
        region_category=category,
        local_objects=local,
        embedding=emb,
        world_id=id(world),
    )


def empty_observation(world: World, pose: Pose) -> Observation:
    """An observation that saw nothing (useful as a no-op update)."""
    z = np.zeros(0, dtype=np.int32)
    return Observation(pose=pose, shape=world.grid.shape, rows=z, cols=z, kinds=z.astype(np.int8),
                       visible_objects=(), region_id=-1, perceived_region=-1, region_category="",
                       local_objects=frozenset(), embedding=np.zeros(world.taxonomy.embedding_dim),
                       world_id=id(world))


__all__ = [
    "DOOR", "FREE", "GLASS", "HEADINGS", "Observation", "Pose", "SeenObject",
    "SensorConfig", "empty_observation", "perceive", "sight_line_region", "visible_mask",
]
