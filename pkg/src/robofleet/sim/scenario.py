"""Scenario files: the initial world, the robot team and the task templates.

A scenario is one JSON document. See ``docs/scenario_schema.md`` for the full
schema; every cross-reference (rooms, parents, tools, robot homes) is checked
on load and reported with a JSON-pointer style field path.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from ..errors import DanglingReferenceError, SchemaError
from ..memory.registry import EMBODIMENTS, RobotProfile
from ..memory.scene import SceneGraph, SceneNode
from ..memory.shared import SharedMemory
from ..planner.rules import TEMPLATE_KINDS, TaskTemplate
from ..skills.catalog import FailureInjection, ToolCatalog, baseline_catalog, bind_skills
from ..skills.world import World, robot_node

BUNDLED = ("household", "restaurant", "supermarket", "apple_knife")
SUITE_SCENARIOS = ("household", "restaurant", "supermarket")


@dataclass
class RobotSpec:
    profile: RobotProfile
    home: str
    battery: float = 1.0


@dataclass
class Scenario:
    name: str
    seed: int
    graph: SceneGraph
    robots: dict[str, RobotSpec]
    catalog: ToolCatalog
    injections: list[FailureInjection] = field(default_factory=list)
    templates: list[TaskTemplate] = field(default_factory=list)
    object_defaults: dict[str, str] = field(default_factory=dict)
    gold_traces: dict[str, Any] = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    path: str | None = None

    @property
    def profiles(self) -> dict[str, RobotProfile]:
        return {rid: spec.profile for rid, spec in sorted(self.robots.items())}

    def rooms(self) -> list[str]:
        return sorted(n.id for n in self.graph.nodes.values() if n.kind == "room")

    def build_world(self) -> World:
        """A fresh world graph with robot nodes standing at their homes."""
        g = self.graph.copy()
        g = SceneGraph.from_dict(g.to_dict())
        for rid, spec in sorted(self.robots.items()):
            home = g.node(spec.home)
            g.upsert_node(robot_node(spec.profile, spec.home, home.position),
                          g.room_of(spec.home), "contains")
        return World(g, self.profiles)

    def seed_memory(self, memory: SharedMemory, world: World) -> None:
        """Prior map: everything in the world that is not hidden from view."""
        g = world.graph
        order = sorted(g.nodes, key=lambda n: (len(g.ancestors(n)), n))
        for nid in order:
            if world.hidden(nid):
                continue
            edge = g.parent_edge(nid)
            node = replace(g.node(nid), visibility="visible", last_observed=0.0)
            memory.scene.upsert_node(node, edge.src if edge else None,
                                     edge.relation if edge else "contains")
        for lat in g.lateral_edges():
            memory.scene.set_edge(lat.src, lat.dst, lat.relation, 0.0)

    def with_injections(self, injections) -> "Scenario":
        return replace(self, injections=list(injections))


# ------------------------------------------------------------------ parsing


def _need(data: Mapping, key: str, kind, path: str):
    if key not in data:
        raise SchemaError(f"missing required field {key!r}", f"{path}/{key}" if path else key)
    value = data[key]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise SchemaError(f"expected {names}, got {type(value).__name__}", f"{path}/{key}")
    return value


def _position(data: Mapping, path: str, default=None):
    pos = data.get("position", default)
    if pos is None:
        raise SchemaError("missing required field 'position'", f"{path}/position")
    if not (isinstance(pos, list) and len(pos) == 3
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pos)):
        raise SchemaError("position must be a list of three numbers", f"{path}/position")
    return tuple(float(v) for v in pos)


def parse_scenario(data: Any, path: str | None = None) -> Scenario:
    """Validate and build a :class:`Scenario` from decoded JSON."""
    if not isinstance(data, dict):
        raise SchemaError("scenario must be a JSON object", "")
    name = _need(data, "name", str, "")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise SchemaError("expected int", "/seed")

    g = SceneGraph(clock=lambda: 0.0)
    floors = _need(data, "floors", list, "")
    if not floors:
        raise SchemaError("at least one floor is required", "/floors")
    for i, f in enumerate(floors):
        p = f"/floors/{i}"
        fid = _need(f, "id", str, p)
        g.upsert_node(SceneNode(fid, "floor", f.get("label", fid), _position(f, p, [0, 0, 0])))

    rooms = _need(data, "rooms", list, "")
    for i, r in enumerate(rooms):
        p = f"/rooms/{i}"
        rid = _need(r, "id", str, p)
        floor = _need(r, "floor", str, p)
        if floor not in g or g.node(floor).kind != "floor":
            raise DanglingReferenceError(f"unknown floor {floor!r}", f"{p}/floor")
        if rid in g:
            raise SchemaError(f"duplicate id {rid!r}", f"{p}/id")
        g.upsert_node(SceneNode(rid, "room", r.get("label", rid.replace("_", " ")),
                                _position(r, p)), floor, "contains")

    objects = _need(data, "objects", list, "")
    pending = list(enumerate(objects))
    # parents may be listed after children; place in dependency order
    while pending:
        progressed = False
        for i, o in list(pending):
            p = f"/objects/{i}"
            oid = _need(o, "id", str, p)
            parent = _need(o, "parent", str, p)
            if parent not in g:
                continue
            if oid in g:
                raise SchemaError(f"duplicate id {oid!r}", f"{p}/id")
            relation = o.get("relation", "contains" if g.node(parent).kind == "room"
                             else "supports")
            if relation not in ("contains", "supports"):
                raise SchemaError(f"bad relation {relation!r}", f"{p}/relation")
            attrs = o.get("attributes", {})
            if not isinstance(attrs, dict):
                raise SchemaError("expected object", f"{p}/attributes")
            affs = o.get("affordances", [])
            if not isinstance(affs, list):
                raise SchemaError("expected list", f"{p}/affordances")
            pos = _position(o, p, list(g.node(parent).position))
            g.upsert_node(SceneNode(oid, "object", o.get("label", oid.replace("_", " ")), pos,
                                    frozenset(affs), attrs), parent, relation)
            pending.remove((i, o))
            progressed = True
        if not progressed:
            i, o = pending[0]
            raise DanglingReferenceError(f"unknown parent {o.get('parent')!r}",
                                         f"/objects/{i}/parent")

    for i, pair in enumerate(data.get("adjacency", [])):
        p = f"/adjacency/{i}"
        if not (isinstance(pair, list) and len(pair) == 2):
            raise SchemaError("expected a pair of room ids", p)
        for j, end in enumerate(pair):
            if end not in g:
                raise DanglingReferenceError(f"unknown node {end!r}", f"{p}/{j}")
        g.set_edge(pair[0], pair[1], "adjacent", 0.0)

    tools = data.get("tools", "baseline")
    if tools == "baseline":
        catalog = baseline_catalog()
    elif isinstance(tools, list):
        try:
            catalog = ToolCatalog.from_list(tools)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad tool profile: {exc}", "/tools") from None
    else:
        raise SchemaError("expected 'baseline' or a list of tool profiles", "/tools")

    robots: dict[str, RobotSpec] = {}
    for i, r in enumerate(_need(data, "robots", list, "")):
        p = f"/robots/{i}"
        rid = _need(r, "robot_id", str, p)
        emb = _need(r, "embodiment", str, p)
        if emb not in EMBODIMENTS:
            raise SchemaError(f"unknown embodiment {emb!r}", f"{p}/embodiment")
        skills = _need(r, "skills", list, p)
        domain = _need(r, "motion_domain", list, p)
        for j, tool in enumerate(skills):
            if tool not in catalog:
                raise DanglingReferenceError(f"unknown tool {tool!r}", f"{p}/skills/{j}")
        for j, room in enumerate(domain):
            if room not in g or g.node(room).kind != "room":
                raise DanglingReferenceError(f"unknown room {room!r}", f"{p}/motion_domain/{j}")
        home = _need(r, "home", str, p)
        if home not in g:
            raise DanglingReferenceError(f"unknown home {home!r}", f"{p}/home")
        if g.room_of(home) not in domain:
            raise SchemaError("home lies outside the motion domain", f"{p}/home")
        battery = r.get("battery", 1.0)
        if not isinstance(battery, (int, float)) or not 0.0 <= battery <= 1.0:
            raise SchemaError("battery must be a number in [0, 1]", f"{p}/battery")
        if rid in robots or rid in g:
            raise SchemaError(f"duplicate id {rid!r}", f"{p}/robot_id")
        try:
            profile = RobotProfile(rid, emb, frozenset(skills), frozenset(domain),
                                   g.node(home).position)
            bind_skills(profile, catalog)
        except ValueError as exc:
            raise SchemaError(str(exc), p) from None
        robots[rid] = RobotSpec(profile, home, float(battery))
    if not robots:
        raise SchemaError("at least one robot is required", "/robots")

    injections = []
    for i, inj in enumerate(data.get("failure_injections", [])):
        p = f"/failure_injections/{i}"
        try:
            fi = FailureInjection.from_dict(inj)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad failure injection: {exc}", p) from None
        if fi.tool_id != "*" and fi.tool_id not in catalog:
            raise DanglingReferenceError(f"unknown tool {fi.tool_id!r}", f"{p}/tool_id")
        if fi.robot_id is not None and fi.robot_id not in robots:
            raise DanglingReferenceError(f"unknown robot {fi.robot_id!r}", f"{p}/robot_id")
        injections.append(fi)

    templates = []
    for i, t in enumerate(data.get("task_templates", [])):
        p = f"/task_templates/{i}"
        _need(t, "name", str, p)
        kind = _need(t, "kind", str, p)
        if kind not in TEMPLATE_KINDS:
            raise SchemaError(f"unknown template kind {kind!r}", f"{p}/kind")
        _need(t, "pattern", str, p)
        try:
            templates.append(TaskTemplate.from_dict(t))
        except Exception as exc:  # re.error and friends
            raise SchemaError(f"bad template: {exc}", p) from None

    defaults = data.get("object_defaults", {})
    if not isinstance(defaults, dict):
        raise SchemaError("expected object", "/object_defaults")
    for label, room in defaults.items():
        if room not in g or g.node(room).kind != "room":
            raise DanglingReferenceError(f"unknown room {room!r}", f"/object_defaults/{label}")

    return Scenario(name, seed, g, robots, catalog, injections, templates, dict(defaults),
                    dict(data.get("gold_traces", {})), copy.deepcopy(data), path)


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario file, or a bundled scenario by name."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        return bundled_scenario(str(path))
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise SchemaError("file not found", str(path)) from None
    except IsADirectoryError:
        raise SchemaError("is a directory", str(path)) from None
    if not text.strip():
        raise SchemaError("empty scenario file", str(path))
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno}: {exc.msg}", str(path)) from None
    return parse_scenario(data, str(path))


def bundled_scenario(name: str) -> Scenario:
    text = resources.files("robofleet.data.scenarios").joinpath(f"{name}.json").read_text()
    return parse_scenario(json.loads(text), f"bundled:{name}")


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("robofleet.data.scenarios").joinpath(f"{name}.json")))
