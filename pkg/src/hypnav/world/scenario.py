"""Scenario files: a canonical JSON encoding of a world."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .core import CHAR_KINDS, KIND_CHARS, Illusion, Region, World, WorldObject, cell_center
from .taxonomy import Taxonomy, default_taxonomy

SCENARIO_FORMAT = "hypnav.scenario/1"


class ScenarioError(ValueError):
    """Malformed scenario document."""


def canonical_json(obj: Any, indent: int = 0) -> str:
    """Deterministic JSON: scalar-only lists inline, everything else one item per line."""
    pad = " " * indent
    inner = " " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {canonical_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(json.dumps(v) for v in obj) + "]"
        items = [inner + canonical_json(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, (np.integer,)):
        return json.dumps(int(obj))
    if isinstance(obj, (np.floating,)):
        return json.dumps(float(obj))
    return json.dumps(obj)


def _runs(cells: frozenset) -> list[list[int]]:
    """Row runs [row, first_col, last_col] covering a cell set."""
    out: list[list[int]] = []
    for r, c in sorted(cells):
        if out and out[-1][0] == r and out[-1][2] == c - 1:
            out[-1][2] = c
        else:
            out.append([r, c, c])
    return out


def world_to_dict(world: World) -> dict:
    tax = world.taxonomy
    return {
        "format": SCENARIO_FORMAT,
        "seed": int(world.seed),
        "resolution": float(world.resolution),
        "grid": ["".join(KIND_CHARS[int(v)] for v in row) for row in world.grid],
        "regions": [
            {"id": r.id, "category": tax.categories[r.category], "runs": _runs(r.cells)}
            for r in world.rooms
        ],
        "objects": [{"name": o.name, "cell": list(o.cell), "region": o.region} for o in world.objects],
        "illusions": [
            {"cell": list(i.cell), "kind": i.kind, "shows": i.region, "faces": i.facing,
             "segment": i.segment}
            for i in world.illusions
        ],
        "taxonomy": "default" if tax == default_taxonomy() else tax.to_dict(),
    }


def world_from_dict(data: dict) -> World:
    try:
        if data.get("format") != SCENARIO_FORMAT:
            raise ScenarioError(f"unsupported scenario format {data.get('format')!r}")
        tax_raw = data["taxonomy"]
        tax = default_taxonomy() if tax_raw == "default" else Taxonomy.from_dict(tax_raw)
        rows = data["grid"]
        if not rows or len({len(r) for r in rows}) != 1:
            raise ScenarioError("grid rows must be non-empty and equally long")
        grid = np.array([[CHAR_KINDS[ch] for ch in row] for row in rows], dtype=np.int8)
        res = float(data["resolution"])
        regions = []
        for rd in data["regions"]:
            cells = frozenset((int(r), c) for r, a, b in rd["runs"] for c in range(int(a), int(b) + 1))
            if cells:
                centers = np.array([cell_center(x, res) for x in sorted(cells)])
                cx, cy = centers.mean(axis=0)
            else:
                cx = cy = 0.0
            regions.append(Region(id=int(rd["id"]), category=tax.index_of(rd["category"]),
                                  cells=cells, centroid=(float(cx), float(cy))))
        objects = [WorldObject(name=o["name"], cell=(int(o["cell"][0]), int(o["cell"][1])),
                               region=int(o["region"])) for o in data["objects"]]
        illusions = [Illusion(cell=(int(i["cell"][0]), int(i["cell"][1])), region=int(i["shows"]),
                              kind=i["kind"], facing=int(i["faces"]), segment=int(i["segment"]))
                     for i in data["illusions"]]
        return World(grid=grid, resolution=res, rooms=tuple(regions), objects=tuple(objects),
                     illusions=tuple(illusions), seed=int(data["seed"]), taxonomy=tax)
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc


def dumps_world(world: World) -> str:
    return canonical_json(world_to_dict(world)) + "\n"


def loads_world(text: str) -> World:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return world_from_dict(data)


def save_world(world: World, path: str | Path) -> None:
    Path(path).write_text(dumps_world(world), encoding="utf-8")


def load_world(path: str | Path) -> World:
    return loads_world(Path(path).read_text(encoding="utf-8"))
