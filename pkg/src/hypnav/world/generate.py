"""Procedural floor plans: binary splits into rooms, doors, furniture, illusions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    DOOR, FREE, GLASS, ILLUSION, MIRROR, WALL, Cell, GenerationError, Illusion,
    Region, World, WorldObject, bfs_steps, cell_center,
)
from .taxonomy import Taxonomy, default_taxonomy

Rect = tuple[int, int, int, int]  # r0, c0, r1, c1 inclusive interior


@dataclass(frozen=True)
class WorldConfig:
    """Generator settings. Sizes are in cells unless suffixed ``_m``."""

    width: int = 40
    height: int = 32
    resolution: float = 0.25
    rooms_min: int = 4
    rooms_max: int = 7
    min_room_side: int = 8
    door_width: int = 3
    illusion_density: float = 0.06
    illusion_length: int = 3
    # mirror share among illusion surfaces (the rest are glass)
    mirror_share: float = 0.38 / 0.67
    max_objects_per_room: int = 6
    max_retries: int = 200
    taxonomy: Taxonomy = field(default_factory=default_taxonomy)

    def __post_init__(self) -> None:
        if self.width < 3 or self.height < 3:
            raise ValueError("grid must be at least 3x3")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if not 1 <= self.rooms_min <= self.rooms_max:
            raise ValueError("need 1 <= rooms_min <= rooms_max")
        if self.rooms_max > self.taxonomy.k:
            raise ValueError("more rooms than categories")
        if self.min_room_side < 1 or self.door_width < 1 or self.illusion_length < 1:
            raise ValueError("room side, door width and illusion length must be >= 1")
        if not 0.0 <= self.illusion_density <= 1.0:
            raise ValueError("illusion_density must lie in [0, 1]")
        if not 0.0 <= self.mirror_share <= 1.0:
            raise ValueError("mirror_share must lie in [0, 1]")
        if self.max_objects_per_room < 1:
            raise ValueError("max_objects_per_room must be >= 1")


def _split(rects: list[Rect], n: int, min_side: int, rng: np.random.Generator) -> list[Rect] | None:
    rects = list(rects)
    while len(rects) < n:
        options = []
        for i, (r0, c0, r1, c1) in enumerate(rects):
            h, w = r1 - r0 + 1, c1 - c0 + 1
            if h >= 2 * min_side + 1 or w >= 2 * min_side + 1:
                options.append(i)
        if not options:
            return None
        areas = np.array([(rects[i][2] - rects[i][0] + 1) * (rects[i][3] - rects[i][1] + 1)
                          for i in options], dtype=float)
        i = options[int(rng.choice(len(options), p=areas / areas.sum()))]
        r0, c0, r1, c1 = rects.pop(i)
        h, w = r1 - r0 + 1, c1 - c0 + 1
        can_h = h >= 2 * min_side + 1
        can_w = w >= 2 * min_side + 1
        horizontal = can_h and (not can_w or h > w or (h == w and rng.random() < 0.5))
        if horizontal:
            cut = int(rng.integers(r0 + min_side, r1 - min_side + 1))
            rects[i:i] = [(r0, c0, cut - 1, c1), (cut + 1, c0, r1, c1)]
        else:
            cut = int(rng.integers(c0 + min_side, c1 - min_side + 1))
            rects[i:i] = [(r0, c0, r1, cut - 1), (r0, cut + 1, r1, c1)]
    return rects


def _shared_wall(a: Rect, b: Rect) -> tuple[str, int, int, int] | None:
    """(orientation, wall line, lo, hi) of the wall separating two rectangles."""
    for p, q in ((a, b), (b, a)):
        if p[3] + 2 == q[1]:
            lo, hi = max(p[0], q[0]), min(p[2], q[2])
            if lo <= hi:
                return ("v", p[3] + 1, lo, hi)
        if p[2] + 2 == q[0]:
            lo, hi = max(p[1], q[1]), min(p[3], q[3])
            if lo <= hi:
                return ("h", p[2] + 1, lo, hi)
    return None


def _place_doors(grid: np.ndarray, rects: list[Rect], width: int, rng: np.random.Generator) -> None:
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            wall = _shared_wall(rects[i], rects[j])
            if wall is None:
                continue
            orient, line, lo, hi = wall
            span = hi - lo + 1
            dw = min(width, span - 2) if span >= 3 else span
            if dw < 1:
                continue
            margin = 1 if span >= dw + 2 else 0
            start = int(rng.integers(lo + margin, hi - margin - dw + 2))
            for k in range(start, start + dw):
                if orient == "v":
                    grid[k, line] = DOOR
                else:
                    grid[line, k] = DOOR


def _wall_candidates(grid: np.ndarray, region_map: np.ndarray):
    """Wall cells that may host an illusion, with orientation and facing regions."""
    h, w = grid.shape
    door = grid == DOOR
    padded = np.pad(door, 1)
    near_door = np.zeros_like(door)
    for dr in (0, 1, 2):
        for dc in (0, 1, 2):
            near_door |= padded[dr:dr + h, dc:dc + w]

    def reg(r: int, c: int) -> int:
        if 0 <= r < h and 0 <= c < w and grid[r, c] == FREE:
            return int(region_map[r, c])
        return -1

    def is_wall(r: int, c: int) -> bool:
        return 0 <= r < h and 0 <= c < w and grid[r, c] == WALL

    out: dict[Cell, tuple[str, int, int]] = {}
    for r in range(h):
        for c in range(w):
            if grid[r, c] != WALL or near_door[r, c]:
                continue
            up, down, left, right = reg(r - 1, c), reg(r + 1, c), reg(r, c - 1), reg(r, c + 1)
            if (up >= 0 or down >= 0) and left < 0 and right < 0 and is_wall(r, c - 1) and is_wall(r, c + 1):
                out[(r, c)] = ("h", up, down)
            elif (left >= 0 or right >= 0) and up < 0 and down < 0 and is_wall(r - 1, c) and is_wall(r + 1, c):
                out[(r, c)] = ("v", left, right)
    return out


def eligible_wall_cells(world_grid: np.ndarray, region_map: np.ndarray) -> int:
    """Number of wall cells eligible to carry an illusion surface."""
    return len(_wall_candidates(world_grid, region_map))


def _place_illusions(
    grid: np.ndarray, region_map: np.ndarray, neighbors: dict[int, tuple[int, ...]],
    cfg: WorldConfig, rng: np.random.Generator,
) -> list[Illusion]:
    cands = _wall_candidates(grid, region_map)
    target = cfg.illusion_density * len(cands)
    pools = {
        MIRROR: sorted(c for c, (_, a, b) in cands.items() if (a >= 0) != (b >= 0)),
        GLASS: sorted(c for c, (_, a, b) in cands.items() if a >= 0 and b >= 0 and a != b),
    }
    taken: set[Cell] = set()
    out: list[Illusion] = []
    seg = 0
    length = cfg.illusion_length
    attempts = 0
    while len(out) + length / 2 < target and attempts < 400:
        attempts += 1
        kind = MIRROR if rng.random() < cfg.mirror_share else GLASS
        if not pools[kind]:
            kind = GLASS if kind == MIRROR else MIRROR
            if not pools[kind]:
                break
        start = pools[kind][int(rng.integers(len(pools[kind])))]
        orient, a, b = cands[start]
        step = (0, 1) if orient == "h" else (1, 0)
        cells = [(start[0] + k * step[0], start[1] + k * step[1]) for k in range(length)]
        if any(cands.get(x) != (orient, a, b) for x in cells):
            continue
        if any((x[0] + dr, x[1] + dc) in taken for x in cells for dr in (-1, 0, 1) for dc in (-1, 0, 1)):
            continue
        if kind == MIRROR:
            facing = a if a >= 0 else b
            options = [n for n in neighbors.get(facing, ()) if n != facing]
            if not options:
                continue
            shown = int(options[int(rng.integers(len(options)))])
        else:
            facing, shown = (a, b) if rng.random() < 0.5 else (b, a)
        for x in cells:
            taken.add(x)
            grid[x] = ILLUSION
            out.append(Illusion(cell=x, region=shown, kind=kind, facing=facing, segment=seg))
        seg += 1
    return out


def _furnish(taxonomy: Taxonomy, category: int, cells: list[Cell], cap: int,
             rng: np.random.Generator) -> list[tuple[str, Cell]]:
    row = taxonomy.co_occurrence[category]
    present = [j for j in range(len(taxonomy.objects)) if rng.random() < row[j]]
    if not present:
        present = [int(np.argmax(row))]
    if len(present) > cap:
        present = sorted(int(j) for j in rng.choice(present, size=cap, replace=False))
    spots = rng.choice(len(cells), size=min(len(present), len(cells)), replace=False)
    return [(taxonomy.objects[j], cells[int(s)]) for j, s in zip(present, spots)]


def _attempt(cfg: WorldConfig, rng: np.random.Generator, seed: int) -> World | None:
    h, w = cfg.height, cfg.width
    n = int(rng.integers(cfg.rooms_min, cfg.rooms_max + 1))
    rects = _split([(1, 1, h - 2, w - 2)], n, cfg.min_room_side, rng)
    if rects is None:
        return None
    grid = np.full((h, w), WALL, dtype=np.int8)
    region_map = np.full((h, w), -1, dtype=np.int32)
    for rid, (r0, c0, r1, c1) in enumerate(rects):
        grid[r0:r1 + 1, c0:c1 + 1] = FREE
        region_map[r0:r1 + 1, c0:c1 + 1] = rid
    _place_doors(grid, rects, cfg.door_width, rng)
    trav = (grid == FREE) | (grid == DOOR)
    first = tuple(int(v) for v in np.argwhere(grid == FREE)[0])
    if np.any(trav & (bfs_steps(trav, [first]) < 0)):
        return None

    tax = cfg.taxonomy
    cats = rng.choice(tax.k, size=len(rects), replace=False, p=tax.prevalence)
    rooms = []
    objects: list[WorldObject] = []
    for rid, (r0, c0, r1, c1) in enumerate(rects):
        cells = [(r, c) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1)]
        centers = np.array([cell_center(x, cfg.resolution) for x in cells])
        cx, cy = centers.mean(axis=0)
        rooms.append(Region(id=rid, category=int(cats[rid]), cells=frozenset(cells),
                            centroid=(float(cx), float(cy))))
        for name, cell in _furnish(tax, int(cats[rid]), cells, cfg.max_objects_per_room, rng):
            objects.append(WorldObject(name=name, cell=cell, region=rid))

    base = World(grid=grid, resolution=cfg.resolution, rooms=tuple(rooms), objects=tuple(objects),
                 illusions=(), seed=seed, taxonomy=tax)
    illusions = _place_illusions(grid, region_map, base.region_neighbors, cfg, rng)
    return World(grid=grid, resolution=cfg.resolution, rooms=tuple(rooms),
                 objects=tuple(objects), illusions=tuple(illusions), seed=seed, taxonomy=tax)


def generate_world(config: WorldConfig, seed: int) -> World:
    """Build a world for ``seed``; the same (config, seed) always gives the same world."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0x57]))
    for _ in range(config.max_retries):
        world = _attempt(config, rng, int(seed))
        if world is not None:
            return world
    raise GenerationError(
        f"could not place {config.rooms_min}-{config.rooms_max} rooms with side >= "
        f"{config.min_room_side} in a {config.height}x{config.width} grid"
    )
