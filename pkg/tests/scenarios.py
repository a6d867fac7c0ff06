"""Hand-built worlds shared by the tests."""

from __future__ import annotations

import numpy as np

from hypnav.world.core import DOOR, FREE, ILLUSION, MIRROR, Illusion, Region, World, WorldObject
from hypnav.world.taxonomy import default_taxonomy

RES = 0.25


def _region(rid: int, category: str, cells, tax) -> Region:
    cells = frozenset(cells)
    xs = [(c + 0.5) * RES for _, c in cells]
    ys = [(r + 0.5) * RES for r, _ in cells]
    return Region(rid, tax.index_of(category), cells, (float(np.mean(xs)), float(np.mean(ys))))


def mirror_world() -> World:
    """A hallway ending in a mirror that shows the bedroom below it.

    The hallway (rows 1-4) is joined to the bedroom (rows 6-12) by a door
    at its west end; the mirror closes its east end.
    """
    tax = default_taxonomy()
    grid = np.ones((14, 30), dtype=np.int8)
    hall = [(r, c) for r in range(1, 5) for c in range(1, 25)]
    bed = [(r, c) for r in range(6, 13) for c in range(1, 25)]
    for cell in hall + bed:
        grid[cell] = FREE
    for c in range(2, 5):
        grid[5, c] = DOOR
    mirror = [(r, 25) for r in range(1, 5)]
    for cell in mirror:
        grid[cell] = ILLUSION
    rooms = (_region(0, "hallway", hall, tax), _region(1, "bedroom", bed, tax))
    objects = (WorldObject("bed", (11, 20), 1), WorldObject("nightstand", (11, 23), 1),
               WorldObject("wardrobe", (7, 22), 1), WorldObject("shoe_rack", (1, 2), 0))
    illusions = tuple(Illusion(cell, 1, MIRROR, 0, 0) for cell in mirror)
    return World(grid, RES, rooms, objects, illusions, seed=0, taxonomy=tax)


def corridor_world(length: int = 10, resolution: float = 0.05) -> World:
    """One straight corridor, one cell wide, inside a wall border."""
    tax = default_taxonomy()
    grid = np.ones((3, length + 2), dtype=np.int8)
    cells = [(1, c) for c in range(1, length + 1)]
    for cell in cells:
        grid[cell] = FREE
    xs = [(c + 0.5) * resolution for _, c in cells]
    reg = Region(0, tax.index_of("hallway"), frozenset(cells), (float(np.mean(xs)), 1.5 * resolution))
    return World(grid, resolution, (reg,), (), (), seed=0, taxonomy=tax)
