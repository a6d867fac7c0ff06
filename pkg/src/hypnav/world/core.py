"""World data types, region embeddings, geodesic distance and invariant checks."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .taxonomy import Taxonomy, default_taxonomy

Cell = tuple[int, int]

FREE, WALL, DOOR, ILLUSION = 0, 1, 2, 3
KIND_CHARS = {FREE: ".", WALL: "#", DOOR: "+", ILLUSION: "~"}
CHAR_KINDS = {v: k for k, v in KIND_CHARS.items()}

MIRROR, GLASS = "mirror", "glass"
ILLUSION_KINDS = (MIRROR, GLASS)

# Mass of the category one-hot spread uniformly over all categories.
EMBED_SMOOTHING = 0.05

_STEPS4: tuple[Cell, ...] = ((-1, 0), (1, 0), (0, -1), (0, 1))


class GenerationError(RuntimeError):
    """Raised when a world cannot satisfy its configured constraints."""


class UnreachableError(RuntimeError):
    """Raised when two traversable cells are not connected."""


@dataclass(frozen=True)
class Region:
    id: int
    category: int
    cells: frozenset[Cell]
    centroid: tuple[float, float]


@dataclass(frozen=True)
class WorldObject:
    name: str
    cell: Cell
    region: int


@dataclass(frozen=True)
class Illusion:
    """A wall cell that fools perception.

    ``region`` is the region whose semantics the surface shows when viewed
    from ``facing``. ``segment`` groups the cells of one contiguous surface.
    """

    cell: Cell
    region: int
    kind: str
    facing: int
    segment: int = 0


def cell_center(cell: Cell, resolution: float) -> tuple[float, float]:
    """Metric (x, y) of a cell center; x follows columns, y follows rows."""
    return ((cell[1] + 0.5) * resolution, (cell[0] + 0.5) * resolution)


def semantic_embedding(
    taxonomy: Taxonomy, category: str | None, objects: Iterable[str]
) -> np.ndarray:
    """Smoothed one-hot over categories followed by an L1-normalized object bag.

    Unknown object names are ignored; an unknown or missing category gives a
    flat category block.
    """
    k = taxonomy.k
    vec = np.zeros(taxonomy.embedding_dim)
    vec[:k] = EMBED_SMOOTHING / k
    if category is not None and category in taxonomy.category_index:
        vec[taxonomy.category_index[category]] += 1.0 - EMBED_SMOOTHING
    bag = vec[k:]
    for name in objects:
        j = taxonomy.object_index.get(name)
        if j is not None:
            bag[j] += 1.0
    total = bag.sum()
    if total > 0:
        bag /= total
    return vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"embedding length mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True, eq=False)
class World:
    """An immutable grid world. ``grid[row, col]`` holds a cell kind."""

    grid: np.ndarray
    resolution: float
    rooms: tuple[Region, ...]
    objects: tuple[WorldObject, ...]
    illusions: tuple[Illusion, ...]
    seed: int
    taxonomy: Taxonomy = field(default_factory=default_taxonomy)

    def __post_init__(self) -> None:
        g = np.array(self.grid, dtype=np.int8)
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "rooms", tuple(self.rooms))
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "illusions", tuple(self.illusions))
        object.__setattr__(self, "_dist_cache", {})

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape  # type: ignore[return-value]

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.grid.shape[0] and 0 <= cell[1] < self.grid.shape[1]

    def center(self, cell: Cell) -> tuple[float, float]:
        return cell_center(cell, self.resolution)

    def to_cell(self, xy: Sequence[float]) -> Cell:
        return (int(np.floor(xy[1] / self.resolution)), int(np.floor(xy[0] / self.resolution)))

    @cached_property
    def region_map(self) -> np.ndarray:
        rm = np.full(self.grid.shape, -1, dtype=np.int32)
        for reg in self.rooms:
            for r, c in reg.cells:
                rm[r, c] = reg.id
        rm.setflags(write=False)
        return rm

    @cached_property
    def region_by_id(self) -> dict[int, Region]:
        return {r.id: r for r in self.rooms}

    @cached_property
    def traversable(self) -> np.ndarray:
        t = (self.grid == FREE) | (self.grid == DOOR)
        t.setflags(write=False)
        return t

    @cached_property
    def illusion_at(self) -> dict[Cell, Illusion]:
        return {ill.cell: ill for ill in self.illusions}

    @cached_property
    def objects_by_region(self) -> dict[int, tuple[WorldObject, ...]]:
        out: dict[int, list[WorldObject]] = {r.id: [] for r in self.rooms}
        for ob in self.objects:
            out.setdefault(ob.region, []).append(ob)
        return {k: tuple(v) for k, v in out.items()}

    def category_name(self, region_id: int) -> str:
        return self.taxonomy.categories[self.region_by_id[region_id].category]

    def region_object_names(self, region_id: int) -> frozenset[str]:
        return frozenset(o.name for o in self.objects_by_region.get(region_id, ()))

    def region_of(self, cell: Cell) -> int:
        """Region of a free cell; door cells resolve to their first adjacent region."""
        rid = int(self.region_map[cell])
        if rid >= 0:
            return rid
        sides = self.door_sides(cell)
        return sides[0] if sides else -1

    def door_sides(self, cell: Cell) -> tuple[int, ...]:
        """Distinct regions 4-adjacent to a cell, in step order."""
        out: list[int] = []
        h, w = self.grid.shape
        for dr, dc in _STEPS4:
            r, c = cell[0] + dr, cell[1] + dc
            if 0 <= r < h and 0 <= c < w:
                rid = int(self.region_map[r, c])
                if rid >= 0 and rid not in out:
                    out.append(rid)
        return tuple(out)

    @cached_property
    def region_neighbors(self) -> dict[int, tuple[int, ...]]:
        """Regions joined through door cells."""
        nb: dict[int, set[int]] = {r.id: set() for r in self.rooms}
        for r, c in zip(*np.nonzero(self.grid == DOOR)):
            sides = self._door_reach((int(r), int(c)))
            for a in sides:
                for b in sides:
                    if a != b:
                        nb[a].add(b)
        return {k: tuple(sorted(v)) for k, v in nb.items()}

    def _door_reach(self, cell: Cell) -> set[int]:
        # regions reachable from a door cell by walking along door cells
        seen = {cell}
        queue = [cell]
        regions: set[int] = set()
        h, w = self.grid.shape
        while queue:
            cur = queue.pop()
            for dr, dc in _STEPS4:
                r, c = cur[0] + dr, cur[1] + dc
                if not (0 <= r < h and 0 <= c < w):
                    continue
                if self.grid[r, c] == DOOR and (r, c) not in seen:
                    seen.add((r, c))
                    queue.append((r, c))
                elif self.region_map[r, c] >= 0:
                    regions.add(int(self.region_map[r, c]))
        return regions

    @cached_property
    def region_embeddings(self) -> dict[int, np.ndarray]:
        out = {}
        for reg in self.rooms:
            vec = semantic_embedding(
                self.taxonomy,
                self.taxonomy.categories[reg.category],
                [o.name for o in self.objects_by_region.get(reg.id, ())],
            )
            vec.setflags(write=False)
            out[reg.id] = vec
        return out

    def distance_field(self, source: Cell) -> np.ndarray:
        """4-connected BFS step counts from ``source`` (-1 where unreachable)."""
        cache = self._dist_cache  # type: ignore[attr-defined]
        hit = cache.get(source)
        if hit is None:
            hit = bfs_steps(self.traversable, [source])
            hit.setflags(write=False)
            if len(cache) > 256:
                cache.clear()
            cache[source] = hit
        return hit


def region_embedding(world: World, region_id: int) -> np.ndarray:
    """Feature vector of a region's current semantic state."""
    if region_id not in world.region_by_id:
        raise KeyError(f"no region {region_id}")
    return world.region_embeddings[region_id]


def bfs_steps(passable: np.ndarray, sources: Iterable[Cell]) -> np.ndarray:
    """Multi-source 4-connected BFS over a boolean mask."""
    h, w = passable.shape
    flat = passable.ravel()
    dist = np.full(h * w, -1, dtype=np.int32)
    queue: deque[int] = deque()
    for r, c in sources:
        i = r * w + c
        if flat[i] and dist[i] < 0:
            dist[i] = 0
            queue.append(i)
    dl = dist.tolist()
    fl = flat.tolist()
    n = h * w
    while queue:
        i = queue.popleft()
        d = dl[i] + 1
        c = i % w
        if i >= w:
            j = i - w
            if fl[j] and dl[j] < 0:
                dl[j] = d
                queue.append(j)
        if i + w < n:
            j = i + w
            if fl[j] and dl[j] < 0:
                dl[j] = d
                queue.append(j)
        if c > 0:
            j = i - 1
            if fl[j] and dl[j] < 0:
                dl[j] = d
                queue.append(j)
        if c < w - 1:
            j = i + 1
            if fl[j] and dl[j] < 0:
                dl[j] = d
                queue.append(j)
    return np.array(dl, dtype=np.int32).reshape(h, w)


def geodesic_distance(world: World, a: Cell, b: Cell) -> float:
    """Shortest 4-connected traversable path length between two cells, in meters."""
    for cell in (a, b):
        if not world.in_bounds(cell) or not world.traversable[cell]:
            raise ValueError(f"cell {cell} is not free or door")
    if a == b:
        return 0.0
    steps = int(world.distance_field(a)[b])
    if steps < 0:
        raise UnreachableError(f"no path between {a} and {b}")
    return steps * world.resolution


def _components(mask: np.ndarray) -> int:
    cells = list(zip(*np.nonzero(mask)))
    if not cells:
        return 0
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    for start in cells:
        if seen[start]:
            continue
        count += 1
        d = bfs_steps(mask, [tuple(int(v) for v in start)])
        seen |= d >= 0
    return count


def validate_world(world: World) -> list[str]:
    """Human-readable list of violated world invariants (empty when sound)."""
    problems: list[str] = []
    g = world.grid
    k = world.taxonomy.k
    owner = np.full(g.shape, -1, dtype=np.int64)
    ids = [r.id for r in world.rooms]
    if len(set(ids)) != len(ids):
        problems.append("duplicate region ids")
    for reg in world.rooms:
        if not reg.cells:
            problems.append(f"region {reg.id} has no cells")
            continue
        if not 0 <= reg.category < k:
            problems.append(f"region {reg.id} category {reg.category} outside [0, {k})")
        mask = np.zeros(g.shape, dtype=bool)
        for cell in reg.cells:
            if not world.in_bounds(cell):
                problems.append(f"region {reg.id} cell {cell} out of bounds")
                continue
            if g[cell] != FREE:
                problems.append(f"region {reg.id} cell {cell} is not free")
            if owner[cell] >= 0:
                problems.append(f"cell {cell} claimed by regions {owner[cell]} and {reg.id}")
            owner[cell] = reg.id
            mask[cell] = True
        if _components(mask) > 1:
            problems.append(f"region {reg.id} is not 4-connected")
    unowned = (g == FREE) & (owner < 0)
    if unowned.any():
        r, c = map(int, np.argwhere(unowned)[0])
        problems.append(f"{int(unowned.sum())} free cells belong to no region, e.g. {(r, c)}")
    if _components(world.traversable) > 1:
        problems.append("free space is disconnected")
        trav = world.traversable
        h, w = g.shape
        inside = {reg.id: [c for c in reg.cells if 0 <= c[0] < h and 0 <= c[1] < w and trav[c]]
                  for reg in world.rooms}
        live = [reg for reg in world.rooms if inside[reg.id]]
        if live:
            first = live[0]
            reach = bfs_steps(trav, [min(inside[first.id])]) >= 0
            for reg in live[1:]:
                if not any(reach[c] for c in inside[reg.id]):
                    problems.append(f"region {reg.id} is disconnected from region {first.id}")
    region_ids = set(ids)
    for ill in world.illusions:
        if not world.in_bounds(ill.cell) or g[ill.cell] != ILLUSION:
            problems.append(f"illusion at {ill.cell} is not an illusion cell")
        if ill.kind not in ILLUSION_KINDS:
            problems.append(f"illusion at {ill.cell} has unknown kind {ill.kind!r}")
        if ill.region not in region_ids:
            problems.append(f"illusion at {ill.cell} references missing region {ill.region}")
        if ill.facing not in region_ids:
            problems.append(f"illusion at {ill.cell} faces missing region {ill.facing}")
        if ill.region == ill.facing:
            problems.append(f"illusion at {ill.cell} references the region it faces")
    marked = {ill.cell for ill in world.illusions}
    for r, c in zip(*np.nonzero(g == ILLUSION)):
        if (int(r), int(c)) not in marked:
            problems.append(f"illusion cell {(int(r), int(c))} has no illusion record")
    for ob in world.objects:
        if ob.name not in world.taxonomy.object_index:
            problems.append(f"object {ob.name!r} not in vocabulary")
        if not world.in_bounds(ob.cell) or owner[ob.cell] != ob.region:
            problems.append(f"object {ob.name!r} at {ob.cell} is not inside region {ob.region}")
    return problems
