"""Building the planner input from a memory snapshot."""

from __future__ import annotations

import re

from ..errors import NoRobotsError
from ..memory.scene import SceneGraph
from ..memory.shared import MemorySnapshot
from .types import GlobalTask, PlannerInput

SCOPES = ("reachable", "full", "retrieved")


def _subgraph(graph: SceneGraph, rooms: set[str]) -> SceneGraph:
    data = graph.to_dict()
    keep = set()
    for nid, node in graph.nodes.items():
        if node.kind == "floor":
            keep.add(nid)
        elif graph.room_of(nid) in rooms:
            keep.add(nid)
    data["nodes"] = [n for n in data["nodes"] if n["id"] in keep]
    data["edges"] = [e for e in data["edges"] if e["src"] in keep and e["dst"] in keep]
    return SceneGraph.from_dict(data, graph.clock)


def _retrieved(graph: SceneGraph, rooms: set[str], instruction: str) -> SceneGraph:
    """Rooms, fixtures, robots and any node whose label occurs in the instruction."""
    text = " " + re.sub(r"[^a-z0-9]+", " ", instruction.lower()) + " "
    base = _subgraph(graph, rooms)
    data = base.to_dict()
    keep = set()
    for nid, node in base.nodes.items():
        parent = base.parent(nid)
        is_fixture = node.kind == "object" and parent is not None \
            and base.node(parent).kind == "room"
        mentioned = f" {node.label.lower()} " in text
        if node.kind != "object" or is_fixture or node.attributes.get("robot") or mentioned:
            keep.add(nid)
            keep.update(base.ancestors(nid))
    data["nodes"] = [n for n in data["nodes"] if n["id"] in keep]
    data["edges"] = [e for e in data["edges"] if e["src"] in keep and e["dst"] in keep]
    return SceneGraph.from_dict(data, graph.clock)


def compose_context(snapshot: MemorySnapshot, task: GlobalTask,
                    scope: str = "reachable") -> PlannerInput:
    """Fuse scene, recent events, robot states, skills and the task.

    ``scope`` selects the spatial extract: ``reachable`` keeps rooms inside at
    least one registered robot's motion domain, ``full`` keeps everything,
    ``retrieved`` further drops loose objects the instruction does not name.
    """
    if scope not in SCOPES:
        raise ValueError(f"unknown context scope {scope!r}")
    if not snapshot.profiles:
        raise NoRobotsError("no robots are registered")
    rooms = set()
    for prof in snapshot.profiles.values():
        rooms |= set(prof.motion_domain)
    if scope == "full":
        spatial = snapshot.scene.copy()
    elif scope == "reachable":
        spatial = _subgraph(snapshot.scene, rooms)
    else:
        spatial = _retrieved(snapshot.scene, rooms, task.instruction)
    skills = {rid: frozenset(p.skills) for rid, p in sorted(snapshot.profiles.items())}
    return PlannerInput(spatial, tuple(snapshot.recent_events), dict(sorted(snapshot.states.items())),
                        skills, task, dict(sorted(snapshot.profiles.items())))
