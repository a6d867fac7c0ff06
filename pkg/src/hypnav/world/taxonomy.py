"""Room categories, object vocabulary and the object/room co-occurrence table."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Probability of an object appearing in a room that lists no explicit value.
STRAY_RATE = 0.02

_CATEGORIES: tuple[str, ...] = (
    "kitchen", "bathroom", "bedroom", "living_room", "dining_room", "hallway",
    "office", "laundry_room", "closet", "garage", "nursery", "playroom", "gym",
    "library", "pantry", "foyer", "guest_bedroom", "home_theater", "utility_room",
    "sunroom", "storage_room", "game_room", "powder_room",
)

_OBJECTS: tuple[str, ...] = (
    "stove", "refrigerator", "sink", "microwave", "dishwasher", "toilet", "bathtub",
    "shower", "towel_rack", "bed", "nightstand", "wardrobe", "dresser", "sofa", "tv",
    "coffee_table", "armchair", "dining_table", "chair", "sideboard", "desk",
    "computer", "bookshelf", "washing_machine", "dryer", "ironing_board", "shoe_rack",
    "coat_rack", "car", "toolbox", "crib", "changing_table", "toy_box", "treadmill",
    "dumbbells", "projector", "pool_table", "water_heater", "plant", "storage_box",
)

_PROFILES: dict[str, dict[str, float]] = {
    "kitchen": {"stove": 0.9, "refrigerator": 0.9, "sink": 0.85, "microwave": 0.7,
                "dishwasher": 0.5, "chair": 0.3, "dining_table": 0.15, "plant": 0.15},
    "bathroom": {"toilet": 0.9, "sink": 0.9, "shower": 0.7, "towel_rack": 0.7,
                 "bathtub": 0.6},
    "bedroom": {"bed": 0.95, "nightstand": 0.8, "wardrobe": 0.6, "dresser": 0.5,
                "tv": 0.2, "chair": 0.15, "plant": 0.1},
    "living_room": {"sofa": 0.9, "tv": 0.8, "coffee_table": 0.75, "armchair": 0.5,
                    "plant": 0.4, "bookshelf": 0.3},
    "dining_room": {"dining_table": 0.9, "chair": 0.9, "sideboard": 0.5, "plant": 0.3},
    "hallway": {"coat_rack": 0.3, "shoe_rack": 0.3, "plant": 0.2},
    "office": {"desk": 0.9, "computer": 0.8, "chair": 0.7, "bookshelf": 0.5,
               "plant": 0.2},
    "laundry_room": {"washing_machine": 0.9, "dryer": 0.8, "ironing_board": 0.5,
                     "sink": 0.4},
    "closet": {"storage_box": 0.6, "shoe_rack": 0.5, "wardrobe": 0.3, "coat_rack": 0.3},
    "garage": {"car": 0.8, "toolbox": 0.7, "storage_box": 0.5, "water_heater": 0.3},
    "nursery": {"crib": 0.9, "changing_table": 0.7, "toy_box": 0.6, "dresser": 0.4,
                "armchair": 0.3},
    "playroom": {"toy_box": 0.9, "chair": 0.3, "tv": 0.3, "bookshelf": 0.3},
    "gym": {"treadmill": 0.8, "dumbbells": 0.8, "tv": 0.2},
    "library": {"bookshelf": 0.95, "armchair": 0.6, "chair": 0.4, "desk": 0.3},
    "pantry": {"storage_box": 0.6, "refrigerator": 0.2, "microwave": 0.2},
    "foyer": {"shoe_rack": 0.7, "coat_rack": 0.6, "plant": 0.4},
    "guest_bedroom": {"bed": 0.9, "nightstand": 0.6, "dresser": 0.4, "wardrobe": 0.4},
    "home_theater": {"projector": 0.8, "sofa": 0.7, "tv": 0.5, "armchair": 0.5},
    "utility_room": {"water_heater": 0.8, "toolbox": 0.4, "storage_box": 0.4,
                     "washing_machine": 0.3},
    "sunroom": {"plant": 0.9, "armchair": 0.6, "chair": 0.4, "coffee_table": 0.4},
    "storage_room": {"storage_box": 0.9, "toolbox": 0.3, "bookshelf": 0.2},
    "game_room": {"pool_table": 0.8, "tv": 0.5, "sofa": 0.4, "chair": 0.4},
    "powder_room": {"toilet": 0.9, "sink": 0.9, "towel_rack": 0.4},
}

# Relative frequency with which each category is drawn when furnishing a world.
_PREVALENCE: dict[str, float] = {
    "kitchen": 5, "bathroom": 5, "bedroom": 5, "living_room": 5, "dining_room": 3,
    "hallway": 3, "office": 3, "laundry_room": 2, "closet": 2, "garage": 1,
    "nursery": 1, "playroom": 1, "gym": 1, "library": 1, "pantry": 1, "foyer": 2,
    "guest_bedroom": 2, "home_theater": 1, "utility_room": 1, "sunroom": 1,
    "storage_room": 1, "game_room": 1, "powder_room": 2,
}


@dataclass(frozen=True, eq=False)
class Taxonomy:
    """Semantic categories with P(object present | category).

    ``co_occurrence`` has shape (K, n_objects); row k is the presence
    profile of category k.
    """

    categories: tuple[str, ...]
    objects: tuple[str, ...]
    co_occurrence: np.ndarray
    prevalence: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        cats = tuple(self.categories)
        objs = tuple(self.objects)
        if len(cats) < 2:
            raise ValueError("taxonomy needs at least two categories")
        if len(set(cats)) != len(cats):
            raise ValueError("category names must be unique")
        if len(set(objs)) != len(objs):
            raise ValueError("object names must be unique")
        co = np.array(self.co_occurrence, dtype=float)
        if co.shape != (len(cats), len(objs)):
            raise ValueError(f"co_occurrence shape {co.shape} != ({len(cats)}, {len(objs)})")
        if not np.all(np.isfinite(co)) or co.min(initial=0.0) < 0.0 or co.max(initial=0.0) > 1.0:
            raise ValueError("co_occurrence entries must lie in [0, 1]")
        co.setflags(write=False)
        prev = np.ones(len(cats)) if self.prevalence is None else np.array(self.prevalence, float)
        if prev.shape != (len(cats),) or prev.min() < 0 or prev.sum() <= 0:
            raise ValueError("prevalence must be a nonnegative vector over categories")
        prev = prev / prev.sum()
        prev.setflags(write=False)
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "objects", objs)
        object.__setattr__(self, "co_occurrence", co)
        object.__setattr__(self, "prevalence", prev)

    @property
    def k(self) -> int:
        return len(self.categories)

    @property
    def embedding_dim(self) -> int:
        return len(self.categories) + len(self.objects)

    @cached_property
    def category_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.categories)}

    @cached_property
    def object_index(self) -> dict[str, int]:
        return {o: i for i, o in enumerate(self.objects)}

    def index_of(self, category: str) -> int:
        try:
            return self.category_index[category]
        except KeyError:
            raise KeyError(f"unknown category {category!r}") from None

    def cooc(self, obj: str, category: str) -> float:
        return float(self.co_occurrence[self.index_of(category), self.object_index[obj]])

    def top_objects(self, category: str, n: int) -> list[tuple[str, float]]:
        """The ``n`` most likely objects for ``category``; ties go to vocabulary order."""
        row = self.co_occurrence[self.index_of(category)]
        order = np.argsort(-row, kind="stable")[:n]
        return [(self.objects[j], float(row[j])) for j in order]

    @cached_property
    def similarity(self) -> np.ndarray:
        """Cosine similarity between categories' co-occurrence profiles (K x K)."""
        co = self.co_occurrence
        norms = np.linalg.norm(co, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        sim = (co @ co.T) / np.outer(safe, safe)
        sim[norms == 0, :] = 0.0
        sim[:, norms == 0] = 0.0
        sim.setflags(write=False)
        return sim

    def to_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "objects": list(self.objects),
            "co_occurrence": [[float(v) for v in row] for row in self.co_occurrence],
            "prevalence": [float(v) for v in self.prevalence],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Taxonomy":
        return cls(
            categories=tuple(data["categories"]),
            objects=tuple(data["objects"]),
            co_occurrence=np.array(data["co_occurrence"], dtype=float),
            prevalence=np.array(data["prevalence"], dtype=float),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Taxonomy):
            return NotImplemented
        return (
            self.categories == other.categories
            and self.objects == other.objects
            and np.array_equal(self.co_occurrence, other.co_occurrence)
            and np.array_equal(self.prevalence, other.prevalence)
        )

    __hash__ = object.__hash__


_DEFAULT: Taxonomy | None = None


def default_taxonomy() -> Taxonomy:
    """The shipped 23-category household taxonomy."""
    global _DEFAULT
    if _DEFAULT is None:
        co = np.full((len(_CATEGORIES), len(_OBJECTS)), STRAY_RATE)
        obj_idx = {o: j for j, o in enumerate(_OBJECTS)}
        for i, cat in enumerate(_CATEGORIES):
            for obj, p in _PROFILES[cat].items():
                co[i, obj_idx[obj]] = p
        _DEFAULT = Taxonomy(
            categories=_CATEGORIES,
            objects=_OBJECTS,
            co_occurrence=co,
            prevalence=np.array([_PREVALENCE[c] for c in _CATEGORIES], dtype=float),
        )
    return _DEFAULT
