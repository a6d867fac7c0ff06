"""Episode runner: perceive, hypothesise, verify, correct, move."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .frontier import (
    DEFAULT_EPS, DEFAULT_MIN_SAMPLES, UNKNOWN, Frontier, OccupancyMap, find_frontiers,
    update_occupancy,
)
from .graph import HypothesisGraph, NodeKind
from .oracle import (
    OracleConfig, OracleContext, OracleError, build_oracle, frontier_truth,
)
from .policy import (
    ActualSemantics, ArmKind, Candidate, PolicyArm, ResidualWeights, ScoringParams,
    Verdict, exploration_score, residual, select_frontier,
)
from .semantics import HypothesisPrediction, peaked_distribution, uniform_prediction
from .world.core import FREE, Cell, World, cell_center, region_embedding, semantic_embedding
from .world.generate import WorldConfig, generate_world
from .world.perception import HEADINGS, Pose, SensorConfig, perceive

TRACE_SCHEMA = "hypnav.trace/1"

SUCCESS, BUDGET, STUCK, ERROR = "success", "budget", "stuck", "error"


@dataclass(frozen=True)
class Task:
    goals: tuple[str, ...]
    success_radius: float = 1.0
    step_budget: int = 500

    def __post_init__(self) -> None:
        if not self.goals:
            raise ValueError("a task needs at least one goal")
        if not self.success_radius > 0:
            raise ValueError("success_radius must be positive")
        if self.step_budget < 1:
            raise ValueError("step_budget must be at least 1")
        object.__setattr__(self, "goals", tuple(self.goals))


@dataclass(frozen=True)
class TaskTemplate:
    """How tasks are drawn for a seed: how many object goals and the limits."""

    n_goals: int = 2
    success_radius: float = 1.0
    step_budget: int = 500

    def __post_init__(self) -> None:
        if self.n_goals < 1:
            raise ValueError("n_goals must be at least 1")


@dataclass(frozen=True)
class AgentConfig:
    sensor: SensorConfig = field(default_factory=SensorConfig)
    frontier_eps: float = DEFAULT_EPS
    frontier_min_samples: int = DEFAULT_MIN_SAMPLES
    merge_radius: float = 0.5
    object_hypotheses: int = 5
    # a new frontier inherits an existing hypothesis within this distance
    frontier_match_m: float = 1.0
    # predicted objects are placed this far past the frontier, into the unknown
    object_offset_m: float = 0.75
    revisit_zone_m: float = 1.0
    verbose: bool = False


def sample_task(world: World, template: TaskTemplate, seed: int) -> tuple[Task, Pose]:
    """Draw a start pose and object goals that are not trivially satisfied.

    Instances of consecutive goals lie more than two success radii apart,
    so reaching one goal never satisfies the next, and no instance of the
    first goal is within one success radius of the start.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**63 - 1), 0x7A5C]))
    res = world.resolution
    free = sorted(c for r in world.rooms for c in r.cells if world.grid[c] == FREE)
    by_name: dict[str, list[tuple[float, float]]] = {}
    for ob in world.objects:
        by_name.setdefault(ob.name, []).append(cell_center(ob.cell, res))
    names = sorted(by_name)
    rad = template.success_radius
    for _ in range(200):
        start = free[int(rng.integers(len(free)))]
        heading = int(rng.integers(8))
        sx, sy = cell_center(start, res)
        order = [names[i] for i in rng.permutation(len(names))]
        chosen: list[str] = []
        for name in order:
            pts = by_name[name]
            if not chosen and any(math.hypot(x - sx, y - sy) <= rad for x, y in pts):
                continue
            if chosen and any(math.hypot(x - u, y - v) <= 2 * rad
                              for u, v in by_name[chosen[-1]] for x, y in pts):
                continue
            chosen.append(name)
            if len(chosen) == template.n_goals:
                return (Task(tuple(chosen), rad, template.step_budget), Pose(start, heading))
    raise ValueError(f"could not draw {template.n_goals} separable goals in world {world.seed}")


def goal_cells(world: World, goal: str, radius: float) -> list[Cell]:
    """Traversable cells from which ``goal`` counts as reached."""
    res = world.resolution
    if goal in world.taxonomy.category_index:
        k = world.taxonomy.index_of(goal)
        return sorted(c for r in world.rooms if r.category == k for c in r.cells)
    pts = [cell_center(o.cell, res) for o in world.objects if o.name == goal]
    if not pts:
        raise ValueError(f"goal {goal!r} does not occur in the world")
    trav = world.traversable
    rr, cc = np.nonzero(trav)
    out = []
    for r, c in zip(rr.tolist(), cc.tolist()):
        x, y = (c + 0.5) * res, (r + 0.5) * res
        if any((x - u) ** 2 + (y - v) ** 2 <= radius * radius + 1e-12 for u, v in pts):
            out.append((r, c))
    return out


def optimal_length(world: World, start: Cell, goal: str, radius: float) -> float:
    """Geodesic meters from ``start`` to the nearest cell that satisfies ``goal``."""
    field_ = world.distance_field(start)
    best = min((field_[c] for c in goal_cells(world, goal, radius) if field_[c] >= 0), default=-1)
    if best < 0:
        raise ValueError(f"goal {goal!r} unreachable from {start}")
    return float(best) * world.resolution


@dataclass
class EpisodeTrace:
    seed: int
    arm: str
    oracle: str
    goals: list[str]
    start: list[int]
    statuses: list[str]
    goal_records: list[dict]
    path_length: float
    steps: list[dict]
    oracle_stats: dict
    graph_stats: dict
    final_nodes: int
    live_hypotheses: int
    confirmed_nodes: int
    refuted_nodes: int
    error: str | None = None
    schema: str = TRACE_SCHEMA
    graph_snapshot: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "schema": self.schema,
            "seed": self.seed,
            "arm": self.arm,
            "oracle": self.oracle,
            "goals": list(self.goals),
            "start": list(self.start),
            "statuses": list(self.statuses),
            "goal_records": self.goal_records,
            "path_length": self.path_length,
            "final_nodes": self.final_nodes,
            "live_hypotheses": self.live_hypotheses,
            "confirmed_nodes": self.confirmed_nodes,
            "refuted_nodes": self.refuted_nodes,
            "oracle_stats": self.oracle_stats,
            "graph_stats": self.graph_stats,
            "error": self.error,
            "steps": self.steps,
        }
        if self.graph_snapshot is not None:
            d["graph_snapshot"] = self.graph_snapshot
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeTrace":
        if d.get("schema") != TRACE_SCHEMA:
            raise ValueError(f"trace schema {d.get('schema')!r} is not {TRACE_SCHEMA!r}")
        return cls(
            seed=d["seed"], arm=d["arm"], oracle=d["oracle"], goals=list(d["goals"]),
            start=list(d["start"]), statuses=list(d["statuses"]), goal_records=d["goal_records"],
            path_length=d["path_length"], steps=d["steps"], oracle_stats=d["oracle_stats"],
            graph_stats=d["graph_stats"], final_nodes=d["final_nodes"],
            live_hypotheses=d["live_hypotheses"], confirmed_nodes=d["confirmed_nodes"],
            refuted_nodes=d["refuted_nodes"], error=d.get("error"), schema=d["schema"],
            graph_snapshot=d.get("graph_snapshot"),
        )

    @classmethod
    def from_json(cls, line: str) -> "EpisodeTrace":
        return cls.from_dict(json.loads(line))

    @property
    def peak_nodes(self) -> int:
        return int(self.graph_stats.get("peak", 0))


def write_traces(traces: Iterable[EpisodeTrace], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in traces:
            fh.write(t.to_json() + "\n")


def read_traces(path) -> list[EpisodeTrace]:
    with open(path, encoding="utf-8") as fh:
        return [EpisodeTrace.from_json(line) for line in fh if line.strip()]


class _Planner:
    """Shortest paths over the agent's known-free cells."""

    def __init__(self, shape: tuple[int, int]) -> None:
        self.h, self.w = shape
        idx = np.arange(self.h * self.w).reshape(shape)
        self._right = (idx[:, :-1].ravel(), idx[:, 1:].ravel())
        self._down = (idx[:-1, :].ravel(), idx[1:, :].ravel())

    def solve(self, free: np.ndarray, source: Cell) -> tuple[np.ndarray, np.ndarray]:
        f = free.ravel()
        a = np.concatenate([self._right[0], self._down[0]])
        b = np.concatenate([self._right[1], self._down[1]])
        keep = f[a] & f[b]
        a, b = a[keep], b[keep]
        n = self.h * self.w
        g = coo_matrix((np.ones(a.size), (a, b)), shape=(n, n)).tocsr()
        dist, pred = shortest_path(g, method="D", directed=False, unweighted=True,
                                   indices=source[0] * self.w + source[1], return_predecessors=True)
        return dist.reshape(self.h, self.w), pred

    def path(self, pred: np.ndarray, source: Cell, target: Cell) -> list[Cell]:
        s = source[0] * self.w + source[1]
        t = target[0] * self.w + target[1]
        out = []
        while t != s:
            if t < 0:
                return []
            out.append((t // self.w, t % self.w))
            t = int(pred[t])
        out.reverse()
        return out


class Episode:
    """Mutable state of one agent run; use :func:`run_episode`."""

    def __init__(self, world: World, task: Task, arm: PolicyArm, oracle_config: OracleConfig,
                 params: ScoringParams, seed: int, weights: ResidualWeights,
                 config: AgentConfig, start: Pose) -> None:
        self.world = world
        self.tax = world.taxonomy
        self.task = task
        self.arm = arm
        self.params = ScoringParams(params.lambda_d, params.lambda_h, arm.effective_lambda_r())
        self.weights = weights
        self.cfg = config
        self.seed = seed
        self.oracle_config = oracle_config
        self.oracle = build_oracle(oracle_config, world, seed) if arm.uses_hypotheses else None
        self.res = world.resolution
        self.occ = OccupancyMap.empty(world.grid.shape, self.res)
        self.graph = HypothesisGraph(config.merge_radius)
        self.planner = _Planner(world.grid.shape)
        self.pose = start
        self.step = 0
        self.sightings: dict[tuple[str, Cell], None] = {}
        self.region_node: dict[int, int] = {}
        self.last_observed: int | None = None
        self.anchor: dict[int, Cell] = {}          # room hypothesis -> anchor cell
        self.truth: dict[int, object] = {}         # room hypothesis -> frontier truth
        self.beyond: dict[int, frozenset] = {}
        self.frontier_cells: dict[int, frozenset] = {}
        self.origin: dict[int, tuple[float, float]] = {}
        self.offset: dict[int, tuple[float, float]] = {}
        # hypotheses bound to a frontier detected this step
        self.live: set[int] = set()
        self.fid_counter = 0
        self.dist = np.full(world.grid.shape, np.inf)
        self.created_at: dict[int, int] = {}
        self.armed: dict[int, bool] = {}
        self.visits: dict[int, int] = {}
        self.verified_once: set[int] = set()
        self.confirmed_ids: set[int] = set()
        self.refuted_ids: set[int] = set()
        self.zones: list[tuple[float, float]] = []
        self.prev_target: tuple | None = None
        self.goal_index = 0
        self.statuses: list[str] = []
        self.goal_records: list[dict] = []
        self.path_length = 0.0
        self.goal_path = 0.0
        self.goal_start = start.cell
        self.goal_step0 = 0
        self.oracle_failures = 0
        self.records: list[dict] = []
        # every query context, for offline oracle comparisons
        self.contexts: list[OracleContext] = []

    # -- helpers ----------------------------------------------------------

    def _xy(self, cell: Cell) -> tuple[float, float]:
        return cell_center(cell, self.res)

    def _here(self) -> tuple[float, float]:
        return self._xy(self.pose.cell)

    @property
    def goal(self) -> str | None:
        return self.task.goals[self.goal_index] if self.goal_index < len(self.task.goals) else None

    def _actual(self, region: int) -> ActualSemantics:
        return ActualSemantics(self.world.category_name(region),
                               self.world.region_object_names(region),
                               region_embedding(self.world, region))

    # -- perception and phase 3 --------------------------------------------

    def _perceive(self, events: list) -> None:
        obs = perceive(self.world, self.pose, self.cfg.sensor.range_m,
                       reveal_radius=self.cfg.sensor.reveal_radius_m,
                       r_context=self.cfg.sensor.r_context_m)
        self.obs = obs
        update_occupancy(self.occ, obs)
        seen_now = {(o.name, cell) for o in obs.visible_objects
                    if self.world.in_bounds(cell := self.world.to_cell(o.position))}
        vis = obs.visible_cells
        for key in [k for k in self.sightings if k[1] in vis and k not in seen_now]:
            del self.sightings[key]
        for key in sorted(seen_now):
            self.sightings.setdefault(key, None)
        region = obs.region_id
        if region < 0:
            return
        here_objs = sorted({o.name for o in obs.visible_objects
                            if self.world.in_bounds(self.world.to_cell(o.position))
                            and self.world.region_map[self.world.to_cell(o.position)] == region})
        cat = self.world.category_name(region)
        nid = self.region_node.get(region)
        if nid is None or nid not in self.graph:
            nid = self.graph.add_observed(self._here(), cat, here_objs,
                                          semantic_embedding(self.tax, cat, here_objs))
            self.graph.node(nid).meta["region"] = region
            self.region_node[region] = nid
        else:
            node = self.graph.node(nid)
            objs = sorted(node.objects | set(here_objs))
            self.graph.update_observed(nid, here_objs, semantic_embedding(self.tax, cat, objs))
        if self.last_observed is not None and self.last_observed != nid and self.last_observed in self.graph:
            self.graph.add_nav_edge(self.last_observed, nid)
        self.last_observed = nid

    def _goal_reached(self) -> bool:
        goal = self.goal
        assert goal is not None
        if goal in self.tax.category_index:
            reg = self.world.region_of(self.pose.cell)
            return reg >= 0 and self.world.category_name(reg) == goal
        x, y = self._here()
        r2 = self.task.success_radius ** 2 + 1e-12
        return any((cx - x) ** 2 + (cy - y) ** 2 <= r2
                   for o in self.world.objects if o.name == goal
                   for cx, cy in [self._xy(o.cell)])

    # -- phase 2: verification ---------------------------------------------

    def _effective(self, nid: int, with_children: bool) -> HypothesisPrediction:
        node = self.graph.node(nid)
        pred = node.prediction
        assert pred is not None
        rho = self.graph.rho(nid)
        dist = pred.distribution
        if rho is not None and abs(rho - pred.confidence) > 1e-12 and pred.source != "fallback" \
                and self.arm.semantic:
            dist = peaked_distribution(self.tax, pred.category, rho)
        objs = pred.predicted_objects
        if with_children:
            objs = tuple((self.graph.node(k).object_name, self.graph.rho(k))
                         for k in self.graph.children_of(nid)
                         if self.graph.node(k).kind is NodeKind.OBJECT
                         and not self.graph.node(k).meta.get("verified"))
        return replace(pred, distribution=dist, predicted_objects=objs,
                       confidence=float(dist.probs.max()), category=pred.category)

    def _refute(self, nid: int, events: list) -> None:
        pos = self.graph.node(nid).position
        self.zones.append(pos)
        self.refuted_ids.add(nid)
        kind = self.arm.kind
        if kind in (ArmKind.FULL, ArmKind.NO_SEMANTIC):
            self.graph.cascade_correct(nid)
        elif kind is ArmKind.LOCAL_DELETE:
            self.graph.local_delete(nid)
        elif kind is ArmKind.SOFT_DECAY:
            self.graph.decay(nid, self.arm.gamma)
            self.graph.mark_refuted(nid, "decay")
        else:
            self.graph.attenuate(nid, self.arm.attenuation)
            self.graph.mark_refuted(nid, "attenuate")
        if nid in self.graph:
            self.armed[nid] = False

    def _note_verified(self, nid: int) -> None:
        self.visits[nid] = self.visits.get(nid, 0) + 1
        self.verified_once.add(nid)
        self.armed[nid] = False

    def _rearm(self) -> None:
        """A checked node that is still in memory can be checked again once left behind."""
        x, y = self._here()
        r = self.cfg.revisit_zone_m
        for nid, on in self.armed.items():
            if not on and nid in self.graph:
                px, py = self.graph.node(nid).position
                if math.hypot(px - x, py - y) > r:
                    self.armed[nid] = True

    def _checked(self, parent: int | None) -> bool:
        """Whether a parent's region has been visited, so its objects can be sought.

        A refuted parent that the arm keeps still counts: its children carry
        on as if the premise held.
        """
        if parent is None:
            return False
        return self.graph.node(parent).kind is NodeKind.OBSERVED or parent in self.verified_once

    def _check_room(self, nid: int, events: list, seen: bool = False) -> None:
        """Residual test of a room hypothesis against the region it stood for."""
        truth = self.truth[nid]
        region = truth.next_region if truth.illusion_kind is None else truth.member_region
        actual = self._actual(region)
        rep = residual(self._effective(nid, with_children=False), actual, self.weights)
        ev = {"op": "verify", "id": nid, "truth": actual.category, **rep.to_dict()}
        if seen:
            ev["seen"] = True
        events.append(ev)
        self._note_verified(nid)
        # object claims keep referring to this place whatever happens to the parent
        for k in self.graph.children_of(nid):
            self.graph.node(k).meta.setdefault("region", region)
        self.graph.node(nid).meta["region"] = region
        if rep.verdict is Verdict.CONFIRMED:
            self.graph.confirm(nid, actual.category, actual.objects, actual.embedding)
            self.graph.node(nid).meta["region"] = region
            self.confirmed_ids.add(nid)
            self.refuted_ids.discard(nid)
            self.anchor.pop(nid, None)
            self.region_node.setdefault(region, nid)
        else:
            self._refute(nid, events)

    def _close(self, gone: Iterable[int], events: list) -> None:
        """Check hypotheses whose frontier closed because the space behind it came into view."""
        for nid in sorted(gone):
            if nid not in self.graph or self.graph.node(nid).kind is not NodeKind.HYPOTHESIS:
                continue
            if nid in self.verified_once or not self.armed.get(nid, True):
                continue
            beyond = self.beyond.get(nid)
            # corner cells behind a frontier can stay unseen, so half is enough
            if beyond and 2 * sum(self.occ.grid[c] != UNKNOWN for c in beyond) >= len(beyond):
                self._check_room(nid, events, seen=True)

    def _verify(self, events: list) -> None:
        here = self._here()
        reach = self.cfg.merge_radius + 1e-9
        rooms = sorted(i for i in self.anchor if i in self.graph
                       and self.graph.node(i).kind is NodeKind.HYPOTHESIS)
        for nid in rooms:
            if self.created_at.get(nid) == self.step or not self.armed.get(nid, True):
                continue
            ax, ay = self._xy(self.anchor[nid])
            if math.hypot(ax - here[0], ay - here[1]) > reach:
                continue
            if self.beyond.get(nid) and all(self.occ.grid[c] == UNKNOWN for c in self.beyond[nid]):
                continue
            self._check_room(nid, events)
        objs = sorted(i for i, n in self.graph.nodes.items()
                      if n.kind is NodeKind.OBJECT and not n.meta.get("verified"))
        for nid in objs:
            if nid not in self.graph or self.created_at.get(nid) == self.step \
                    or not self.armed.get(nid, True):
                continue
            parent = self.graph.parent_of(nid)
            if not self._checked(parent):
                continue
            node = self.graph.node(nid)
            if math.hypot(node.position[0] - here[0], node.position[1] - here[1]) > reach:
                continue
            region = node.meta.get("region", self.graph.node(parent).meta.get("region"))
            present = region is not None and node.object_name in self.world.region_object_names(region)
            events.append({"op": "verify", "id": nid, "object": node.object_name, "present": present})
            self._note_verified(nid)
            if present:
                self.graph.confirm_object(nid)
                self.confirmed_ids.add(nid)
                self.refuted_ids.discard(nid)
            else:
                self._refute(nid, events)

    # -- phase 1: frontiers and hypotheses ----------------------------------

    def _entry(self, fr: Frontier) -> Cell:
        """Reachable member nearest the centroid, else the nearest member."""
        return fr.nearest_member(self.res, lambda c: bool(np.isfinite(self.dist[c])))

    def _frontiers(self, events: list) -> list[Frontier]:
        frontiers = find_frontiers(self.occ, self.cfg.frontier_eps, self.cfg.frontier_min_samples,
                                   self.step)
        if not self.arm.uses_hypotheses:
            return frontiers
        live = [i for i in self.anchor if i in self.graph
                and self.graph.node(i).kind is NodeKind.HYPOTHESIS]
        bound: set[int] = set()
        match_r = self.cfg.frontier_match_m + 1e-9
        for fr in frontiers:
            best = None
            for nid in live:
                if nid in bound:
                    continue
                ox, oy = self.origin[nid]
                px, py = self.graph.node(nid).position
                d = min(math.hypot(ox - fr.centroid[0], oy - fr.centroid[1]),
                        math.hypot(px - fr.centroid[0], py - fr.centroid[1]))
                shared = self.frontier_cells.get(nid, frozenset()) & fr.member_cells
                if d <= match_r or shared:
                    key = (0 if shared else 1, d, nid)
                    if best is None or key < best[0]:
                        best = (key, nid)
            if best is not None:
                nid = best[1]
                bound.add(nid)
                self._bind(nid, fr)
            else:
                nid = self._hypothesise(fr, events)
                if nid is not None:
                    bound.add(nid)
        gone = self.live - bound
        self.live = bound
        self._close(gone, events)
        return frontiers

    def _bind(self, nid: int, fr: Frontier, first: bool = False) -> None:
        """Attach a frontier to a node; the anchor follows the frontier."""
        cell = self._entry(fr)
        self.anchor[nid] = cell
        self.beyond[nid] = fr.beyond_cells
        self.frontier_cells[nid] = fr.member_cells
        # arrival finds whatever lies beyond the frontier it follows now
        self.truth[nid] = frontier_truth(self.world, fr)
        node = self.graph.node(nid)
        node.position = self._xy(cell)
        self.offset[nid] = self._into_unknown(fr)
        for k in self.graph.children_of(nid):
            child = self.graph.node(k)
            if child.kind is NodeKind.OBJECT and not child.meta.get("verified"):
                child.position = self._object_spot(nid)

    def _into_unknown(self, fr: Frontier) -> tuple[float, float]:
        """Offset from a frontier toward the unknown cells just past it."""
        if not fr.beyond_cells:
            return (0.0, 0.0)
        pts = np.array([self._xy(c) for c in sorted(fr.beyond_cells)])
        v = pts.mean(axis=0) - np.asarray(fr.centroid)
        n = float(np.hypot(v[0], v[1]))
        if n < 1e-9:
            return (0.0, 0.0)
        k = self.cfg.object_offset_m / n
        return (float(v[0] * k), float(v[1] * k))

    def _object_spot(self, nid: int) -> tuple[float, float]:
        x, y = self.graph.node(nid).position
        ox, oy = self.offset.get(nid, (0.0, 0.0))
        h, w = self.world.grid.shape
        return (min(max(x + ox, 0.0), w * self.res - 1e-6), min(max(y + oy, 0.0), h * self.res - 1e-6))

    def _hypothesise(self, fr: Frontier, events: list) -> int | None:
        parent = self.graph.nearest_observed(fr.centroid)
        if parent is None:
            return None
        ctx = OracleContext(
            frontier=fr,
            perceived_region=self.obs.perceived_region,
            perceived_category=self.obs.region_category,
            local_objects=self._local_objects(),
            explored_categories=tuple(sorted({n.category for n in self.graph.nodes.values()
                                              if n.kind is NodeKind.OBSERVED and n.category})),
            goal=self.goal,
            step=self.step,
        )
        self.contexts.append(ctx)
        if self.arm.semantic:
            try:
                pred = self.oracle.predict(ctx)
            except OracleError as exc:
                self.oracle_failures += 1
                events.append({"op": "oracle_error", "error": str(exc)})
                pred = uniform_prediction(self.tax)
        else:
            pred = uniform_prediction(self.tax, source="uniform")
        self.fid_counter += 1
        nid = self.graph.add_hypothesis(parent, pred, pred.confidence,
                                        position=self._xy(self._entry(fr)),
                                        frontier_id=self.fid_counter)
        self.graph.add_nav_edge(parent, nid)
        self.created_at[nid] = self.step
        self.origin[nid] = fr.centroid
        self._bind(nid, fr, first=True)
        if self.arm.semantic:
            for name, p in pred.predicted_objects[: self.cfg.object_hypotheses]:
                kid = self.graph.add_object_hypothesis(nid, name, p)
                self.graph.node(kid).position = self._object_spot(nid)
                self.created_at[kid] = self.step
        return nid

    def _local_objects(self) -> frozenset[str]:
        x, y = self._here()
        r2 = self.cfg.sensor.r_context_m ** 2 + 1e-12
        return frozenset(name for name, cell in self.sightings
                         if sum(v * v for v in np.subtract(self._xy(cell), (x, y))) <= r2)

    # -- selection and motion -----------------------------------------------

    def _select(self, frontiers: list[Frontier], dist: np.ndarray):
        goal = self.goal
        assert goal is not None

        def d_of(cell: Cell) -> float:
            v = dist[cell]
            return float(v) * self.res if np.isfinite(v) else math.inf

        sights = sorted((d_of(cell), cell) for name, cell in self.sightings
                        if name == goal and self.occ.grid[cell] != UNKNOWN)
        sights = [s for s in sights if math.isfinite(s[0])]
        if sights:
            return ("goal", 0, sights[0][1], False)
        best = None
        if self.arm.uses_hypotheses:
            for nid in sorted(self.anchor):
                if nid not in self.graph or not self.armed.get(nid, True):
                    continue
                # a pending node whose frontier is gone has nothing left to explore
                if nid not in self.live and nid not in self.verified_once:
                    continue
                node = self.graph.node(nid)
                if node.kind is not NodeKind.HYPOTHESIS:
                    continue
                cell = self.anchor[nid]
                d = d_of(cell)
                if not math.isfinite(d):
                    continue
                if self.arm.semantic:
                    s = exploration_score(self._effective(nid, True), goal, d, self.params,
                                          self.visits.get(nid, 0), taxonomy=self.tax)
                else:
                    s = -d
                if best is None or s > best[0] or (s == best[0] and nid < best[1]):
                    best = (s, nid, cell, "hypothesis")
            if self.arm.semantic and goal in self.tax.object_index:
                for nid, node in sorted(self.graph.nodes.items()):
                    if node.kind is not NodeKind.OBJECT or node.object_name != goal \
                            or node.meta.get("verified") or not self.armed.get(nid, True):
                        continue
                    if not self._checked(self.graph.parent_of(nid)):
                        continue
                    cell = self.world.to_cell(node.position)
                    d = d_of(cell)
                    if not math.isfinite(d):
                        continue
                    s = self.graph.rho(nid) - self.params.lambda_d * d \
                        - self.params.lambda_r * self.visits.get(nid, 0)
                    if best is None or s > best[0] or (s == best[0] and nid < best[1]):
                        best = (s, nid, cell, "object")
        if best is not None:
            return (best[3], best[1], best[2], True)
        cands = []
        entries = {}
        for fr in frontiers:
            entries[fr.id] = cell = self._entry(fr)
            d = d_of(cell)
            if math.isfinite(d):
                cands.append(Candidate(fr, None, d))
        if not cands:
            return None
        fr = select_frontier(cands, goal, self.params, PolicyArm(ArmKind.GEOMETRY_ONLY))
        return ("frontier", fr.id, entries[fr.id], True)

    def _record_selection(self, sel, record: dict) -> None:
        kind, ident, cell, explore = sel
        key = (kind, ident, cell) if kind == "frontier" else (kind, ident)
        if key == self.prev_target:
            return
        self.prev_target = key
        x, y = self._xy(cell)
        record["select"] = {"kind": kind, "id": ident, "cell": list(cell), "pos": [x, y],
                            "explore": explore}

    def _finish_goal(self, status: str) -> None:
        goal = self.goal
        assert goal is not None
        try:
            l_star = optimal_length(self.world, self.goal_start, goal, self.task.success_radius)
        except ValueError:
            l_star = 0.0
        self.goal_records.append({"goal": goal, "status": status, "l_star": l_star,
                                  "path_length": self.goal_path,
                                  "steps": self.step - self.goal_step0,
                                  "end_step": self.step})
        self.statuses.append(status)
        self.goal_index += 1
        self.goal_start = self.pose.cell
        self.goal_path = 0.0
        self.goal_step0 = self.step
        self.prev_target = None

    def run(self) -> EpisodeTrace:
        error = None
        try:
            self._loop()
        except Exception as exc:  # recorded, not raised, so batches keep going
            error = f"{type(exc).__name__}: {exc}"
            while self.goal is not None:
                self._finish_goal(ERROR)
        return self._trace(error)

    def _loop(self) -> None:
        budget = self.task.step_budget
        while True:
            events: list = []
            record: dict = {"t": self.step, "pose": [self.pose.cell[0], self.pose.cell[1],
                                                     self.pose.heading]}
            self.records.append(record)
            self._perceive(events)
            while self.goal is not None and self._goal_reached():
                self._finish_goal(SUCCESS)
            if self.goal is None:
                self._flush(record, events, 0)
                return
            if self.arm.uses_hypotheses:
                self._rearm()
                self._verify(events)
            self.dist, pred = self.planner.solve(self.occ.free_mask(), self.pose.cell)
            frontiers = self._frontiers(events)
            if self.step >= budget:
                self._flush(record, events, len(frontiers))
                while self.goal is not None:
                    self._finish_goal(BUDGET)
                return
            sel = self._select(frontiers, self.dist)
            if sel is None:
                self._flush(record, events, len(frontiers))
                while self.goal is not None:
                    self._finish_goal(STUCK)
                return
            self._record_selection(sel, record)
            path = self.planner.path(pred, self.pose.cell, sel[2])
            self._flush(record, events, len(frontiers))
            if path:
                nxt = path[0]
                step_dir = (nxt[0] - self.pose.cell[0], nxt[1] - self.pose.cell[1])
                self.pose = Pose(nxt, HEADINGS.index(step_dir))
                self.path_length += self.res
                self.goal_path += self.res
            self.step += 1

    def _flush(self, record: dict, events: list, n_frontiers: int) -> None:
        record["frontiers"] = n_frontiers
        evs = events + self.graph.drain_events()
        if evs:
            record["events"] = evs
        if self.cfg.verbose:
            record["map"] = self.occ.dump()

    def _trace(self, error: str | None) -> EpisodeTrace:
        g = self.graph
        live_pending = sum(1 for i, n in g.nodes.items()
                           if i not in self.refuted_ids and (n.kind is NodeKind.HYPOTHESIS or (
                               n.kind is NodeKind.OBJECT and not n.meta.get("verified"))))
        stats = self.oracle.stats.to_dict() if self.oracle is not None else {
            "calls": 0, "expensive": 0, "failures": 0}
        stats = dict(stats, failures=stats.get("failures", 0) + self.oracle_failures)
        return EpisodeTrace(
            seed=self.seed, arm=self.arm.name,
            oracle=self.oracle_config.kind if self.arm.semantic else "none",
            goals=list(self.task.goals), start=[self.records[0]["pose"][0], self.records[0]["pose"][1],
                                                 self.records[0]["pose"][2]] if self.records else [],
            statuses=self.statuses, goal_records=self.goal_records, path_length=self.path_length,
            steps=self.records, oracle_stats=stats, graph_stats=g.stats.to_dict(),
            final_nodes=len(g), live_hypotheses=live_pending,
            confirmed_nodes=len(self.confirmed_ids), refuted_nodes=len(self.refuted_ids),
            error=error,
        )


def run_episode(world: World, task: Task, arm: PolicyArm | str,
                oracle_config: OracleConfig = OracleConfig(),
                params: ScoringParams = ScoringParams(), seed: int = 0, *,
                weights: ResidualWeights = ResidualWeights(),
                config: AgentConfig = AgentConfig(), start: Pose | None = None,
                dump_graph: bool = False) -> EpisodeTrace:
    """Run one episode to completion; deterministic in all arguments."""
    if isinstance(arm, str):
        arm = PolicyArm.parse(arm)
    if start is None:
        _, start = sample_task(world, TaskTemplate(len(task.goals), task.success_radius,
                                                   task.step_budget), seed)
    ep = Episode(world, task, arm, oracle_config, params, seed, weights, config, start)
    trace = ep.run()
    closer = getattr(ep.oracle, "close", None)
    if closer is not None:
        closer()
    if dump_graph:
        trace.graph_snapshot = ep.graph.to_dict()
    return trace


@dataclass(frozen=True)
class BatchSpec:
    world_config: WorldConfig = field(default_factory=WorldConfig)
    task_template: TaskTemplate = field(default_factory=TaskTemplate)
    oracle_config: OracleConfig = field(default_factory=OracleConfig)
    params: ScoringParams = field(default_factory=ScoringParams)
    weights: ResidualWeights = field(default_factory=ResidualWeights)
    agent_config: AgentConfig = field(default_factory=AgentConfig)
    dump_graph: bool = False


def _run_seed(spec: BatchSpec, arms: tuple[PolicyArm, ...], seed: int) -> list[EpisodeTrace]:
    out = []
    try:
        world = generate_world(spec.world_config, seed)
        task, start = sample_task(world, spec.task_template, seed)
    except Exception as exc:
        msg = f"{type(exc).__name__}: {exc}"
        for arm in arms:
            out.append(EpisodeTrace(seed, arm.name, spec.oracle_config.kind, [], [], [ERROR], [],
                                    0.0, [], {}, {}, 0, 0, 0, 0, error=msg))
        return out
    for arm in arms:
        out.append(run_episode(world, task, arm, spec.oracle_config, spec.params, seed,
                               weights=spec.weights, config=spec.agent_config, start=start,
                               dump_graph=spec.dump_graph))
    return out


def run_batch(seeds: Iterable[int], arms: Sequence[PolicyArm | str], spec: BatchSpec = BatchSpec(),
              workers: int = 1) -> list[EpisodeTrace]:
    """Run every arm on every seed's world, task and oracle stream.

    Results are ordered by seed, then by the order of ``arms``.
    """
    arm_list = tuple(PolicyArm.parse(a) if isinstance(a, str) else a for a in arms)
    if not arm_list:
        raise ValueError("need at least one arm")
    seeds = list(seeds)
    if workers <= 1 or len(seeds) <= 1:
        results = [_run_seed(spec, arm_list, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_seed, [spec] * len(seeds), [arm_list] * len(seeds), seeds))
    return [t for group in results for t in group]


def frontier_contexts(seeds: Iterable[int], spec: BatchSpec = BatchSpec(),
                      arm: PolicyArm | str = "no-semantic") -> list[tuple[World, list[OracleContext]]]:
    """Oracle queries an agent would make, per seed world.

    The default arm explores without reading predictions, so the same
    frontiers can be put to any oracle.
    """
    arm = PolicyArm.parse(arm) if isinstance(arm, str) else arm
    out = []
    for seed in seeds:
        world = generate_world(spec.world_config, seed)
        task, start = sample_task(world, spec.task_template, seed)
        ep = Episode(world, task, arm, spec.oracle_config, spec.params, seed, spec.weights,
                     spec.agent_config, start)
        ep.run()
        out.append((world, ep.contexts))
    return out


__all__ = [
    "AgentConfig", "BUDGET", "BatchSpec", "ERROR", "EpisodeTrace", "STUCK", "SUCCESS", "TRACE_SCHEMA",
    "Task", "TaskTemplate", "frontier_contexts", "goal_cells", "optimal_length", "read_traces", "run_batch", "run_episode",
    "sample_task", "write_traces",
]
