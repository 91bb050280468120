"""Hierarchical scene graph: floors contain rooms, rooms contain objects.

Every non-floor node has exactly one *parent edge* (``contains`` or
``supports``); together these edges form a forest rooted at the floors.
``adjacent`` and ``functional`` edges are lateral and unconstrained.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping

from ..errors import (
    CycleError,
    EmptyQueryError,
    HierarchyError,
    KindMismatchError,
    UnknownNodeError,
    UnknownRoomError,
)

NODE_KINDS = ("floor", "room", "object")
RELATIONS = ("contains", "supports", "adjacent", "functional")
PARENT_RELATIONS = frozenset({"contains", "supports"})
VISIBILITIES = ("visible", "occluded", "removed")

# parent kind allowed for each child kind
_ALLOWED_PARENTS = {"room": {"floor"}, "object": {"room", "object"}}

Position = tuple[float, float, float]


def _as_position(value) -> Position:
    pos = tuple(float(v) for v in value)
    if len(pos) != 3 or not all(math.isfinite(v) for v in pos):
        raise ValueError(f"position must be three finite numbers, got {value!r}")
    return pos  # type: ignore[return-value]


@dataclass(frozen=True)
class SceneNode:
    id: str
    kind: str
    label: str
    position: Position = (0.0, 0.0, 0.0)
    affordances: frozenset = frozenset()
    attributes: Mapping[str, Any] = field(default_factory=dict)
    last_observed: float = 0.0
    visibility: str = "visible"

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if self.visibility not in VISIBILITIES:
            raise ValueError(f"unknown visibility {self.visibility!r}")
        if not self.id:
            raise ValueError("node id must be non-empty")
        object.__setattr__(self, "position", _as_position(self.position))
        object.__setattr__(self, "affordances", frozenset(self.affordances))
        object.__setattr__(self, "attributes", dict(self.attributes))

    def __hash__(self):
        return hash(self.id)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "label": self.label,
            "position": list(self.position),
            "affordances": sorted(self.affordances),
            "attributes": {k: self.attributes[k] for k in sorted(self.attributes)},
            "last_observed": self.last_observed,
            "visibility": self.visibility,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SceneNode":
        return cls(
            id=data["id"],
            kind=data["kind"],
            label=data.get("label", data["id"]),
            position=data.get("position", (0.0, 0.0, 0.0)),
            affordances=frozenset(data.get("affordances", ())),
            attributes=data.get("attributes", {}),
            last_observed=data.get("last_observed", 0.0),
            visibility=data.get("visibility", "visible"),
        )


@dataclass(frozen=True)
class SceneEdge:
    src: str
    dst: str
    relation: str
    since: float = 0.0

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")

    def to_dict(self) -> dict:
        return {"src": self.src, "dst": self.dst, "relation": self.relation, "since": self.since}


@dataclass(frozen=True)
class Delta:
    """One applied change. ``changes`` maps field name to ``(old, new)``."""

    revision: int
    op: str
    target: str
    changes: Mapping[str, tuple] = field(default_factory=dict)

    def __bool__(self):
        return bool(self.changes)


@dataclass(frozen=True)
class ObservedNode:
    node: SceneNode
    parent: str | None = None
    relation: str = "contains"


@dataclass(frozen=True)
class Observation:
    """What one robot saw from inside one room.

    Nodes in ``seen`` are upserted as visible; ids in ``removed`` are marked
    removed. Object nodes of ``room`` that were visible before and are not in
    ``seen`` become occluded.
    """

    observer: str
    room: str
    seen: tuple = ()
    removed: tuple = ()
    time: float | None = None


@dataclass(frozen=True)
class Match:
    node: SceneNode
    ancestry: tuple[str, ...]

    @property
    def id(self) -> str:
        return self.node.id


class LogicalClock:
    """Monotonic counter used as a timestamp source in tests."""

    def __init__(self, start: float = 0.0):
        self._t = start
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            self._t += 1.0
            return self._t


class SceneGraph:
    def __init__(self, clock: Callable[[], float] | None = None):
        self._nodes: dict[str, SceneNode] = {}
        self._parent: dict[str, SceneEdge] = {}
        self._lateral: set[SceneEdge] = set()
        self.revision = 0
        self.clock = clock or LogicalClock()
        self._lock = threading.RLock()

    # ------------------------------------------------------------------ reads

    def __contains__(self, node_id) -> bool:
        return node_id in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def nodes(self) -> dict[str, SceneNode]:
        with self._lock:
            return dict(self._nodes)

    @property
    def edges(self) -> set[SceneEdge]:
        with self._lock:
            return set(self._parent.values()) | set(self._lateral)

    def node(self, node_id: str) -> SceneNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def get(self, node_id: str) -> SceneNode | None:
        return self._nodes.get(node_id)

    def parent_edge(self, node_id: str) -> SceneEdge | None:
        return self._parent.get(node_id)

    def parent(self, node_id: str) -> str | None:
        edge = self._parent.get(node_id)
        return edge.src if edge else None

    def children(self, node_id: str) -> list[str]:
        with self._lock:
            return sorted(e.dst for e in self._parent.values() if e.src == node_id)

    def descendants(self, node_id: str) -> list[str]:
        with self._lock:
            kids: dict[str, list[str]] = {}
            for e in self._parent.values():
                kids.setdefault(e.src, []).append(e.dst)
            out, stack = [], sorted(kids.get(node_id, []), reverse=True)
            while stack:
                cur = stack.pop()
                out.append(cur)
                stack.extend(sorted(kids.get(cur, []), reverse=True))
            return out

    def ancestors(self, node_id: str) -> tuple[str, ...]:
        chain = []
        cur = self.parent(node_id)
        while cur is not None:
            chain.append(cur)
            cur = self.parent(cur)
        return tuple(chain)

    def room_of(self, node_id: str) -> str | None:
        node = self._nodes.get(node_id)
        if node is None:
            return None
        if node.kind == "room":
            return node_id
        for anc in self.ancestors(node_id):
            if self._nodes[anc].kind == "room":
                return anc
        return None

    def lateral_edges(self, node_id: str | None = None) -> list[SceneEdge]:
        with self._lock:
            edges = [e for e in self._lateral if node_id is None or node_id in (e.src, e.dst)]
        return sorted(edges, key=lambda e: (e.src, e.dst, e.relation))

    # ----------------------------------------------------------------- writes

    def _bump(self, op: str, target: str, changes: dict) -> Delta:
        self.revision += 1
        return Delta(self.revision, op, target, changes)

    def _check_parent(self, child_kind: str, child_id: str, parent_id: str, relation: str):
        if relation not in PARENT_RELATIONS:
            raise ValueError(f"{relation!r} is not a parent relation")
        if parent_id == child_id:
            raise CycleError(f"{relation}({parent_id}->{child_id}) is a self-loop")
        parent = self._nodes.get(parent_id)
        if parent is None:
            raise UnknownNodeError(parent_id)
        allowed = _ALLOWED_PARENTS.get(child_kind)
        if allowed is None:
            raise HierarchyError(f"floor {child_id!r} cannot have a parent")
        if parent.kind not in allowed:
            raise HierarchyError(f"a {child_kind} cannot be parented under a {parent.kind}")
        if child_id in self._nodes and child_id in self.ancestors(parent_id):
            raise CycleError(f"{relation}({parent_id}->{child_id}) would create a cycle")

    def upsert_node(self, node: SceneNode, parent: str | None = None,
                    relation: str = "contains") -> Delta:
        """Insert ``node`` or replace the stored node with the same id.

        ``parent`` is required when inserting a room or object and optional on
        update, where it re-parents the node in the same delta.
        """
        with self._lock:
            old = self._nodes.get(node.id)
            if old is not None and old.kind != node.kind:
                raise KindMismatchError(f"{node.id!r} is a {old.kind}, not a {node.kind}")
            if old is None and node.kind != "floor" and parent is None:
                raise HierarchyError(f"new {node.kind} {node.id!r} needs a parent")
            if parent is not None:
                self._check_parent(node.kind, node.id, parent, relation)

            changes: dict[str, tuple] = {}
            if old is None:
                changes["created"] = (None, node.to_dict())
            else:
                for name in ("label", "position", "affordances", "attributes",
                             "last_observed", "visibility"):
                    a, b = getattr(old, name), getattr(node, name)
                    if a != b:
                        changes[name] = (a, b)
            self._nodes[node.id] = node
            if parent is not None:
                prev = self._parent.get(node.id)
                if prev is None or (prev.src, prev.relation) != (parent, relation):
                    self._parent[node.id] = SceneEdge(parent, node.id, relation, self.clock())
                    changes["parent"] = (
                        (prev.src, prev.relation) if prev else None, (parent, relation))
            return self._bump("upsert", node.id, changes)

    def update_node(self, node_id: str, **fields) -> Delta:
        with self._lock:
            return self.upsert_node(replace(self.node(node_id), **fields))

    def set_edge(self, src: str, dst: str, relation: str, since: float | None = None) -> Delta:
        """Add an edge. Parent relations replace any previous parent of ``dst``."""
        if relation not in RELATIONS:
            raise ValueError(f"unknown relation {relation!r}")
        with self._lock:
            for nid in (src, dst):
                if nid not in self._nodes:
                    raise UnknownNodeError(nid)
            ts = self.clock() if since is None else since
            if relation in PARENT_RELATIONS:
                self._check_parent(self._nodes[dst].kind, dst, src, relation)
                prev = self._parent.get(dst)
                self._parent[dst] = SceneEdge(src, dst, relation, ts)
                changes = {}
                if prev is None or (prev.src, prev.relation) != (src, relation):
                    changes["parent"] = ((prev.src, prev.relation) if prev else None, (src, relation))
                return self._bump("edge", dst, changes)
            if src == dst:
                raise CycleError(f"{relation}({src}->{dst}) is a self-loop")
            key = (src, dst, relation)
            exists = any((e.src, e.dst, e.relation) == key for e in self._lateral)
            changes = {}
            if not exists:
                self._lateral.add(SceneEdge(src, dst, relation, ts))
                changes["edge"] = (None, key)
            return self._bump("edge", f"{src}->{dst}", changes)

    def apply_observation(self, observation: Observation) -> list[Delta]:
        """Fold one observation into the graph; see :class:`Observation`.

        Conflicting observations resolve last-writer-wins in call order.
        """
        with self._lock:
            room = self._nodes.get(observation.room)
            if room is None or room.kind != "room":
                raise UnknownRoomError(observation.room)
            when = self.clock() if observation.time is None else observation.time
            deltas = []
            seen_ids = set()
            for obs in observation.seen:
                seen_ids.add(obs.node.id)
                node = replace(obs.node, visibility="visible", last_observed=when)
                deltas.append(self.upsert_node(node, obs.parent, obs.relation))
            for node_id in observation.removed:
                if node_id in self._nodes:
                    deltas.append(self.upsert_node(
                        replace(self._nodes[node_id], visibility="removed")))
            for node_id in sorted(self._nodes):
                node = self._nodes[node_id]
                if (node.kind == "object" and node_id not in seen_ids
                        and node.visibility == "visible"
                        and not node.attributes.get("robot")
                        and self.room_of(node_id) == observation.room):
                    deltas.append(self.upsert_node(replace(node, visibility="occluded")))
            return deltas

    # ---------------------------------------------------------------- queries

    def query(self, labels: Iterable[str] | None = None, room: str | None = None,
              affordance: str | None = None, relation: Mapping | None = None,
              include_removed: bool = False, allow_full_scan: bool = False) -> list[Match]:
        """Return nodes matching every given filter, sorted by id.

        ``relation`` is ``{"relation": r, "parent": id}`` for parent edges or
        ``{"relation": r, "other": id}`` for lateral ones.
        """
        labels = set(labels) if labels is not None else None
        if labels is None and room is None and affordance is None and relation is None \
                and not allow_full_scan:
            raise EmptyQueryError("query needs at least one filter")
        with self._lock:
            out = []
            for node_id in sorted(self._nodes):
                node = self._nodes[node_id]
                if not include_removed and node.visibility == "removed":
                    continue
                if labels is not None and node.label not in labels:
                    continue
                if affordance is not None and affordance not in node.affordances:
                    continue
                if room is not None and (node_id == room or self.room_of(node_id) != room):
                    continue
                if relation is not None and not self._relation_matches(node_id, relation):
                    continue
                out.append(Match(node, self.ancestors(node_id)))
            return out

    def _relation_matches(self, node_id: str, pattern: Mapping) -> bool:
        rel = pattern.get("relation")
        if rel in PARENT_RELATIONS or "parent" in pattern:
            edge = self._parent.get(node_id)
            if edge is None:
                return False
            return (rel is None or edge.relation == rel) and \
                pattern.get("parent", edge.src) == edge.src
        other = pattern.get("other")
        return any(
            (rel is None or e.relation == rel)
            and (other is None or other in (e.src, e.dst))
            for e in self._lateral if node_id in (e.src, e.dst))

    # ------------------------------------------------------- copy / serialize

    def copy(self) -> "SceneGraph":
        with self._lock:
            g = SceneGraph(self.clock)
            g._nodes = dict(self._nodes)
            g._parent = dict(self._parent)
            g._lateral = set(self._lateral)
            g.revision = self.revision
            return g

    def to_dict(self) -> dict:
        with self._lock:
            return {
                "revision": self.revision,
                "nodes": [self._nodes[k].to_dict() for k in sorted(self._nodes)],
                "edges": [e.to_dict() for e in sorted(
                    list(self._parent.values()) + list(self._lateral),
                    key=lambda e: (e.dst, e.src, e.relation))],
            }

    @classmethod
    def from_dict(cls, data: Mapping, clock: Callable[[], float] | None = None) -> "SceneGraph":
        g = cls(clock)
        nodes = {n["id"]: SceneNode.from_dict(n) for n in data.get("nodes", [])}
        parents, lateral = {}, []
        for e in data.get("edges", []):
            edge = SceneEdge(e["src"], e["dst"], e["relation"], e.get("since", 0.0))
            if edge.relation in PARENT_RELATIONS:
                parents[edge.dst] = edge
            else:
                lateral.append(edge)
        placed: set[str] = set()

        def place(nid, trail=()):
            if nid in placed:
                return
            if nid in trail:
                raise CycleError(f"cycle through {nid!r}")
            edge = parents.get(nid)
            if edge is not None:
                if edge.src not in nodes:
                    raise UnknownNodeError(edge.src)
                place(edge.src, trail + (nid,))
                g.upsert_node(nodes[nid], edge.src, edge.relation)
                g._parent[nid] = edge
            else:
                g.upsert_node(nodes[nid])
            placed.add(nid)

        for nid in sorted(nodes):
            place(nid)
        for edge in lateral:
            g.set_edge(edge.src, edge.dst, edge.relation, edge.since)
        g.revision = data.get("revision", g.revision)
        return g


def query_spatial(graph: SceneGraph, query: Mapping | None = None, **kwargs) -> list[Match]:
    """Functional form of :meth:`SceneGraph.query` taking a query mapping."""
    params = dict(query or {})
    if "label" in params:
        params["labels"] = [params.pop("label")]
    params.update(kwargs)
    return graph.query(**params)


def check_forest(graph: SceneGraph) -> list[str]:
    """Independent DFS audit of the parent-edge forest. Returns problems found."""
    problems = []
    nodes = graph.nodes
    parent_of: dict[str, str] = {}
    for e in graph.edges:
        if e.relation in PARENT_RELATIONS:
            if e.dst in parent_of:
                problems.append(f"{e.dst} has two parents")
            parent_of[e.dst] = e.src
            for end in (e.src, e.dst):
                if end not in nodes:
                    problems.append(f"dangling endpoint {end}")
    state: dict[str, int] = {}
    for start in sorted(nodes):
        path = []
        cur = start
        while cur is not None and state.get(cur, 0) == 0:
            state[cur] = 1
            path.append(cur)
            cur = parent_of.get(cur)
        if cur is not None and state.get(cur) == 1:
            problems.append(f"cycle through {cur}")
        for p in path:
            state[p] = 2
    for nid, node in nodes.items():
        if node.kind == "floor" and nid in parent_of:
            problems.append(f"floor {nid} has a parent")
        if node.kind != "floor":
            chain, cur = [], nid
            seen = set()
            while cur in parent_of and cur not in seen:
                seen.add(cur)
                cur = parent_of[cur]
                chain.append(cur)
            if not chain or nodes.get(chain[-1]) is None or nodes[chain[-1]].kind != "floor":
                problems.append(f"{nid} is not rooted at a floor")
    return problems
