"""Grid worlds with semantic rooms, objects and illusion surfaces."""

from .core import (
    DOOR, FREE, GLASS, ILLUSION, MIRROR, WALL, Cell, GenerationError, Illusion, Region,
    UnreachableError, World, WorldObject, bfs_steps, cell_center, cosine, geodesic_distance,
    region_embedding, semantic_embedding, validate_world,
)
from .generate import WorldConfig, eligible_wall_cells, generate_world
from .perception import (
    HEADINGS, Observation, Pose, SeenObject, SensorConfig, empty_observation, perceive,
    sight_line_region, visible_mask,
)
from .scenario import (
    ScenarioError, canonical_json, dumps_world, load_world, loads_world, save_world,
    world_from_dict, world_to_dict,
)
from .taxonomy import Taxonomy, default_taxonomy

__all__ = [
    "Cell", "DOOR", "FREE", "GLASS", "GenerationError", "HEADINGS", "ILLUSION", "Illusion",
    "MIRROR", "Observation", "Pose", "Region", "ScenarioError", "SeenObject", "SensorConfig",
    "Taxonomy", "UnreachableError", "WALL", "World", "WorldConfig", "WorldObject", "bfs_steps",
    "canonical_json", "cell_center", "cosine", "default_taxonomy", "dumps_world",
    "eligible_wall_cells", "empty_observation", "generate_world", "geodesic_distance",
    "load_world", "loads_world", "perceive", "region_embedding", "save_world",
    "semantic_embedding", "sight_line_region", "validate_world", "visible_mask",
    "world_from_dict", "world_to_dict",
]
