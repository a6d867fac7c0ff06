"""Hypothesis graph memory with dependency tracking and cascade retraction.

The dependency structure is a forest: every node has at most one parent
and edges carry the confidence with which the child was derived.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from .semantics import HypothesisPrediction
from .world.scenario import canonical_json

MERGE_RADIUS = 0.5
SNAPSHOT_FORMAT = "hypnav.graph/1"


class GraphError(RuntimeError):
    pass


class DeadNodeError(GraphError):
    """The referenced node does not exist (never created or removed)."""


class WrongKindError(GraphError):
    pass


class SingleParentError(GraphError):
    pass


class CycleError(GraphError):
    pass


class NodeKind(str, Enum):
    OBSERVED = "observed"
    HYPOTHESIS = "hypothesis"
    OBJECT = "object"


@dataclass
class Node:
    id: int
    kind: NodeKind
    position: tuple[float, float]
    category: str | None = None
    objects: frozenset[str] = frozenset()
    embedding: np.ndarray | None = None
    prediction: HypothesisPrediction | None = None
    frontier_id: int | None = None
    object_name: str | None = None
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DependencyEdge:
    parent: int
    child: int
    rho: float


@dataclass
class GraphStats:
    peak: int = 0
    creations: int = 0
    confirmations: int = 0
    refutations: int = 0
    cascade_events: list[tuple[int, int]] = field(default_factory=list)  # (depth, removed)
    removed_total: int = 0

    def to_dict(self) -> dict:
        return {
            "peak": self.peak,
            "creations": self.creations,
            "confirmations": self.confirmations,
            "refutations": self.refutations,
            "cascade_events": [list(e) for e in self.cascade_events],
            "removed_total": self.removed_total,
        }


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


def _dist(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


class HypothesisGraph:
    """Observed and hypothesised places with navigability and dependency edges."""

    def __init__(self, merge_radius: float = MERGE_RADIUS) -> None:
        self.merge_radius = merge_radius
        self.nodes: dict[int, Node] = {}
        self.nav_edges: set[tuple[int, int]] = set()
        self.dep_edges: dict[int, DependencyEdge] = {}  # keyed by child
        self.children: dict[int, list[int]] = {}
        self.stats = GraphStats()
        self.events: list[dict] = []
        self._next_id = 1

    # -- queries ----------------------------------------------------------

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.nodes

    def node(self, node_id: int) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise DeadNodeError(f"node {node_id} is not live") from None

    def parent_of(self, node_id: int) -> int | None:
        e = self.dep_edges.get(node_id)
        return None if e is None else e.parent

    def rho(self, node_id: int) -> float | None:
        e = self.dep_edges.get(node_id)
        return None if e is None else e.rho

    def children_of(self, node_id: int) -> list[int]:
        return list(self.children.get(node_id, ()))

    def descendants(self, node_id: int) -> dict[int, int]:
        """Breadth-first dependency depth of every descendant (root at depth 0)."""
        depth = {node_id: 0}
        queue = deque([node_id])
        while queue:
            cur = queue.popleft()
            for child in self.children.get(cur, ()):
                if child not in depth:
                    depth[child] = depth[cur] + 1
                    queue.append(child)
        return depth

    def of_kind(self, kind: NodeKind) -> list[int]:
        return [i for i, n in self.nodes.items() if n.kind is kind]

    def nearest_observed(self, position: tuple[float, float]) -> int | None:
        best = None
        for i, n in self.nodes.items():
            if n.kind is NodeKind.OBSERVED:
                d = _dist(n.position, position)
                if best is None or d < best[0]:
                    best = (d, i)
        return None if best is None else best[1]

    # -- construction -----------------------------------------------------

    def _new_node(self, node: Node) -> int:
        self.nodes[node.id] = node
        self.stats.peak = max(self.stats.peak, len(self.nodes))
        return node.id

    def _take_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def _link(self, parent: int, child: int, rho: float) -> None:
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"rho {rho} outside [0, 1]")
        if child in self.dep_edges:
            raise SingleParentError(f"node {child} already has parent {self.dep_edges[child].parent}")
        anc: int | None = parent
        while anc is not None:
            if anc == child:
                raise CycleError(f"edge {parent}->{child} would close a cycle")
            anc = self.parent_of(anc)
        self.dep_edges[child] = DependencyEdge(parent, child, float(rho))
        self.children.setdefault(parent, []).append(child)

    def add_dependency(self, parent: int, child: int, rho: float) -> None:
        """Attach an existing parentless node under ``parent``."""
        self.node(parent)
        self.node(child)
        self._link(parent, child, rho)
        self.events.append({"op": "link", "parent": parent, "child": child, "rho": float(rho)})

    def add_nav_edge(self, a: int, b: int) -> None:
        self.node(a)
        self.node(b)
        if a != b:
            self.nav_edges.add((min(a, b), max(a, b)))

    def add_observed(self, position, category: str, objects: Iterable[str],
                     embedding: np.ndarray | None) -> int:
        """Add an observed place, or refresh the one already within the merge radius."""
        pos = (float(position[0]), float(position[1]))
        objs = frozenset(objects)
        best = None
        for i, n in self.nodes.items():
            if n.kind is NodeKind.OBSERVED:
                d = _dist(n.position, pos)
                if d <= self.merge_radius + 1e-9 and (best is None or d < best[0]):
                    best = (d, i)
        if best is not None:
            n = self.nodes[best[1]]
            merged = n.objects | objs
            changed = merged != n.objects
            n.objects = merged
            if embedding is not None:
                n.embedding = np.array(embedding, dtype=float)
            if changed:
                self.events.append({"op": "update", "id": n.id, "objects": sorted(merged)})
            return n.id
        nid = self._take_id()
        self._new_node(Node(nid, NodeKind.OBSERVED, pos, category=category, objects=objs,
                            embedding=None if embedding is None else np.array(embedding, dtype=float)))
        self.events.append({"op": "add", "id": nid, "kind": "observed", "pos": list(pos),
                            "category": category})
        return nid

    def update_observed(self, node_id: int, objects: Iterable[str],
                        embedding: np.ndarray | None = None) -> None:
        """Union new objects into an observed node (revisit update)."""
        n = self.node(node_id)
        if n.kind is not NodeKind.OBSERVED:
            raise WrongKindError(f"node {node_id} is {n.kind.value}, not observed")
        merged = n.objects | frozenset(objects)
        if embedding is not None:
            n.embedding = np.array(embedding, dtype=float)
        if merged != n.objects:
            n.objects = merged
            self.events.append({"op": "update", "id": n.id, "objects": sorted(merged)})

    def add_hypothesis(self, parent: int, prediction: HypothesisPrediction, rho: float,
                       position=None, frontier_id: int | None = None) -> int:
        par = self.node(parent)
        pos = par.position if position is None else (float(position[0]), float(position[1]))
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"rho {rho} outside [0, 1]")
        nid = self._take_id()
        self._new_node(Node(nid, NodeKind.HYPOTHESIS, pos, prediction=prediction,
                            frontier_id=frontier_id))
        self._link(parent, nid, rho)
        self.stats.creations += 1
        self.events.append({"op": "add", "id": nid, "kind": "hypothesis", "parent": parent,
                            "rho": float(rho), "pos": list(pos), "category": prediction.category})
        return nid

    def add_object_hypothesis(self, parent_room: int, object_name: str, rho_k: float) -> int:
        par = self.node(parent_room)
        if par.kind is NodeKind.OBJECT:
            raise WrongKindError("object hypotheses hang under rooms or observed places")
        if not 0.0 <= rho_k <= 1.0:
            raise ValueError(f"rho {rho_k} outside [0, 1]")
        nid = self._take_id()
        self._new_node(Node(nid, NodeKind.OBJECT, par.position, object_name=object_name))
        self._link(parent_room, nid, rho_k)
        self.stats.creations += 1
        self.events.append({"op": "add", "id": nid, "kind": "object", "parent": parent_room,
                            "rho": float(rho_k), "pos": list(par.position), "name": object_name})
        return nid

    # -- verification -----------------------------------------------------

    def confirm(self, node_id: int, actual_category: str, actual_objects: Iterable[str],
                actual_embedding: np.ndarray | None) -> None:
        """Promote a hypothesis to an observed node; its children stay attached."""
        n = self.node(node_id)
        if n.kind is not NodeKind.HYPOTHESIS:
            raise WrongKindError(f"node {node_id} is {n.kind.value}, not a hypothesis")
        n.meta["predicted"] = n.prediction.category if n.prediction else None
        n.meta["verified"] = True
        n.kind = NodeKind.OBSERVED
        n.category = actual_category
        n.objects = frozenset(actual_objects)
        n.embedding = None if actual_embedding is None else np.array(actual_embedding, dtype=float)
        n.prediction = None
        self.stats.confirmations += 1
        self.events.append({"op": "confirm", "id": node_id, "category": actual_category})

    def confirm_object(self, node_id: int) -> None:
        """Mark an object hypothesis as verified present."""
        n = self.node(node_id)
        if n.kind is not NodeKind.OBJECT:
            raise WrongKindError(f"node {node_id} is {n.kind.value}, not an object hypothesis")
        if not n.meta.get("verified"):
            n.meta["verified"] = True
            self.stats.confirmations += 1
            self.events.append({"op": "confirm", "id": node_id, "category": None})

    def _check_refutable(self, node_id: int) -> Node:
        n = self.node(node_id)
        if n.kind is NodeKind.OBSERVED:
            raise WrongKindError(f"node {node_id} is observed and cannot be refuted")
        return n

    def _remove(self, ids: Iterable[int]) -> None:
        ids = set(ids)
        for nid in ids:
            e = self.dep_edges.pop(nid, None)
            if e is not None and e.parent not in ids:
                kids = self.children.get(e.parent)
                if kids is not None:
                    kids.remove(nid)
        for nid in ids:
            self.children.pop(nid, None)
            del self.nodes[nid]
        self.nav_edges = {e for e in self.nav_edges if e[0] not in ids and e[1] not in ids}
        self.stats.removed_total += len(ids)

    def cascade_correct(self, refuted: int) -> set[int]:
        """Remove a refuted node together with everything derived from it."""
        n = self._check_refutable(refuted)
        depth = self.descendants(refuted)
        removed = set(depth)
        pos = n.position
        self._remove(removed)
        self.stats.refutations += 1
        max_depth = max(depth.values())
        if max_depth >= 1:
            self.stats.cascade_events.append((max_depth, len(removed)))
        self.events.append({"op": "refute", "id": refuted, "mode": "cascade", "pos": list(pos),
                            "removed": sorted(removed), "depth": max_depth})
        return removed

    def local_delete(self, refuted: int) -> set[int]:
        """Remove only the refuted node; its children move up to its parent."""
        n = self._check_refutable(refuted)
        edge = self.dep_edges.get(refuted)
        kids = self.children_of(refuted)
        pos = n.position
        self._remove({refuted})
        moved = []
        for kid in kids:
            old = self.dep_edges.pop(kid)
            if edge is not None:
                self._link(edge.parent, kid, old.rho)
                moved.append(kid)
        self.stats.refutations += 1
        self.events.append({"op": "refute", "id": refuted, "mode": "local", "pos": list(pos),
                            "removed": [refuted], "depth": 0,
                            "reparented": moved, "parent": None if edge is None else edge.parent})
        return {refuted}

    def mark_refuted(self, node_id: int, mode: str) -> None:
        """Count a refutation of a node that stays in memory."""
        n = self._check_refutable(node_id)
        n.meta["refuted"] = n.meta.get("refuted", 0) + 1
        self.stats.refutations += 1
        self.events.append({"op": "refute", "id": node_id, "mode": mode, "pos": list(n.position),
                            "removed": [], "depth": 0})

    def _scale(self, node_id: int, factor: float) -> None:
        e = self.dep_edges.get(node_id)
        if e is not None:
            self.dep_edges[node_id] = DependencyEdge(e.parent, e.child, e.rho * factor)

    def decay(self, refuted: int, gamma: float) -> dict[int, float]:
        """Scale the node's edge by gamma and each depth-d descendant's by gamma**d."""
        self.node(refuted)
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        depth = self.descendants(refuted)
        out = {}
        for nid, d in depth.items():
            self._scale(nid, gamma ** max(d, 1))
            if nid in self.dep_edges:
                out[nid] = self.dep_edges[nid].rho
        self.events.append({"op": "decay", "id": refuted, "gamma": float(gamma),
                            "rho": {str(k): v for k, v in sorted(out.items())}})
        return out

    def attenuate(self, node_id: int, factor: float) -> None:
        """Scale one node's edge confidence, leaving descendants alone."""
        self.node(node_id)
        self._scale(node_id, factor)
        self.events.append({"op": "attenuate", "id": node_id, "factor": float(factor),
                            "rho": self.rho(node_id)})

    # -- checking ---------------------------------------------------------

    def validate(self) -> ValidationReport:
        rep = ValidationReport()
        live = self.nodes
        for child, e in self.dep_edges.items():
            if e.child != child:
                rep.violations.append(f"edge stored under {child} names child {e.child}")
            if e.parent not in live or e.child not in live:
                rep.violations.append(f"dependency edge {e.parent}->{e.child} touches a removed node")
            if not 0.0 <= e.rho <= 1.0:
                rep.violations.append(f"edge {e.parent}->{e.child} has rho {e.rho}")
        seen_child: dict[int, int] = {}
        for par, kids in self.children.items():
            for k in kids:
                if k in seen_child:
                    rep.violations.append(f"node {k} has parents {seen_child[k]} and {par}")
                seen_child[k] = par
        for a, b in self.nav_edges:
            if a not in live or b not in live:
                rep.violations.append(f"nav edge {a}-{b} touches a removed node")
        for start in self.dep_edges:
            seen = set()
            cur: int | None = start
            while cur is not None:
                if cur in seen:
                    rep.violations.append(f"dependency cycle through node {start}")
                    break
                seen.add(cur)
                e = self.dep_edges.get(cur)
                cur = None if e is None else e.parent
        if self.stats.peak < len(self.nodes):
            rep.violations.append(f"peak {self.stats.peak} below live count {len(self.nodes)}")
        for n in self.nodes.values():
            if n.kind is NodeKind.OBSERVED and n.prediction is not None:
                rep.violations.append(f"observed node {n.id} carries a distribution")
            if n.kind is NodeKind.HYPOTHESIS and n.prediction is None:
                rep.violations.append(f"hypothesis node {n.id} has no prediction")
        return rep

    # -- serialization ----------------------------------------------------

    def drain_events(self) -> list[dict]:
        out, self.events = self.events, []
        return out

    def to_dict(self) -> dict:
        nodes = []
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            nodes.append({
                "id": n.id,
                "kind": n.kind.value,
                "position": [n.position[0], n.position[1]],
                "category": n.category,
                "objects": sorted(n.objects),
                "embedding": None if n.embedding is None else [float(v) for v in n.embedding],
                "prediction": None if n.prediction is None else n.prediction.to_dict(),
                "frontier_id": n.frontier_id,
                "object_name": n.object_name,
                "meta": {k: n.meta[k] for k in sorted(n.meta)},
            })
        return {
            "format": SNAPSHOT_FORMAT,
            "merge_radius": self.merge_radius,
            "next_id": self._next_id,
            "nodes": nodes,
            "nav_edges": [list(e) for e in sorted(self.nav_edges)],
            "dep_edges": [[e.parent, e.child, e.rho] for _, e in sorted(self.dep_edges.items())],
            "children": [[p, list(k)] for p, k in sorted(self.children.items()) if k],
            "stats": self.stats.to_dict(),
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict()) + "\n"

    @classmethod
    def from_dict(cls, data: dict, categories: tuple[str, ...]) -> "HypothesisGraph":
        if data.get("format") != SNAPSHOT_FORMAT:
            raise ValueError(f"unsupported graph snapshot format {data.get('format')!r}")
        g = cls(merge_radius=float(data["merge_radius"]))
        g._next_id = int(data["next_id"])
        for nd in data["nodes"]:
            pred = nd["prediction"]
            g.nodes[nd["id"]] = Node(
                id=nd["id"],
                kind=NodeKind(nd["kind"]),
                position=(nd["position"][0], nd["position"][1]),
                category=nd["category"],
                objects=frozenset(nd["objects"]),
                embedding=None if nd["embedding"] is None else np.array(nd["embedding"], float),
                prediction=None if pred is None else HypothesisPrediction.from_dict(pred, categories),
                frontier_id=nd["frontier_id"],
                object_name=nd["object_name"],
                meta=dict(nd["meta"]),
            )
        g.nav_edges = {(a, b) for a, b in data["nav_edges"]}
        g.dep_edges = {c: DependencyEdge(p, c, float(r)) for p, c, r in data["dep_edges"]}
        g.children = {p: list(k) for p, k in data["children"]}
        st = data["stats"]
        g.stats = GraphStats(peak=st["peak"], creations=st["creations"],
                             confirmations=st["confirmations"], refutations=st["refutations"],
                             cascade_events=[tuple(e) for e in st["cascade_events"]],
                             removed_total=st["removed_total"])
        return g

    @classmethod
    def from_json(cls, text: str, categories: tuple[str, ...]) -> "HypothesisGraph":
        return cls.from_dict(json.loads(text), categories)
