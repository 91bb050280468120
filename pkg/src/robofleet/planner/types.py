"""Plan data types and structural validation of subtask graphs."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from ..memory.registry import RobotProfile, RobotState
from ..memory.scene import SceneGraph
from ..memory.temporal import TemporalEvent
from . import goals

SUBTASK_KINDS = ("single", "collaboration")

_task_counter = itertools.count(1)


@dataclass(frozen=True)
class GlobalTask:
    task_id: str
    instruction: str
    issued_at: float = 0.0

    def __post_init__(self):
        if not self.instruction or not self.instruction.strip():
            raise ValueError("task instruction must be non-empty")

    @classmethod
    def new(cls, instruction: str, issued_at: float = 0.0) -> "GlobalTask":
        return cls(f"task-{next(_task_counter)}", instruction, issued_at)

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "instruction": self.instruction,
                "issued_at": self.issued_at}

    @classmethod
    def from_dict(cls, data: Mapping) -> "GlobalTask":
        return cls(data["task_id"], data["instruction"], data.get("issued_at", 0.0))


@dataclass(frozen=True)
class PlannerInput:
    """The five fused operands, in the order they are serialized."""

    spatial: SceneGraph
    temporal: tuple[TemporalEvent, ...]
    robot_states: dict[str, RobotState]
    skill_catalog: dict[str, frozenset]
    task: GlobalTask
    profiles: dict[str, RobotProfile] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(self.skill_catalog) - set(self.robot_states)
        if missing:
            raise ValueError(f"skill catalog names unknown robots {sorted(missing)}")


@dataclass(frozen=True)
class ReasoningTrace:
    steps: tuple[str, ...] = ()


@dataclass(frozen=True)
class Subtask:
    subtask_id: str
    description: str
    depth: int
    assignees: tuple[str, ...]
    kind: str = "single"
    prerequisites: frozenset = frozenset()
    goal: Mapping[str, Any] = field(default_factory=dict)
    template: str = ""
    params: Mapping[str, Any] = field(default_factory=dict)
    required_skills: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "assignees", tuple(self.assignees))
        object.__setattr__(self, "prerequisites", frozenset(self.prerequisites))
        object.__setattr__(self, "required_skills", frozenset(self.required_skills))

    def __hash__(self):
        return hash(self.subtask_id)

    @property
    def label(self) -> str:
        """The (depth, robots) notation, e.g. ``(2, R1+R2)``."""
        return f"({self.depth}, {'+'.join(self.assignees)})"

    def role_goal(self, robot_id: str) -> dict:
        roles = self.params.get("roles") or {}
        return dict(roles.get(robot_id, self.goal))

    def to_dict(self) -> dict:
        return {
            "id": self.subtask_id, "description": self.description, "depth": self.depth,
            "assignees": list(self.assignees), "kind": self.kind,
            "prerequisites": sorted(self.prerequisites), "goal": dict(self.goal),
            "template": self.template, "params": dict(self.params),
            "required_skills": sorted(self.required_skills),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Subtask":
        return cls(data["id"], data.get("description", ""), data["depth"],
                   tuple(data["assignees"]), data.get("kind", "single"),
                   frozenset(data.get("prerequisites", ())), data.get("goal", {}),
                   data.get("template", ""), data.get("params", {}),
                   frozenset(data.get("required_skills", ())))


@dataclass(frozen=True)
class SubtaskGraph:
    graph_id: str
    subtasks: Mapping[str, Subtask]
    task: GlobalTask | None = None

    def __len__(self):
        return len(self.subtasks)

    def order(self) -> list[Subtask]:
        """Subtasks sorted by (depth, id)."""
        return sorted(self.subtasks.values(), key=lambda s: (s.depth, s.subtask_id))

    def dependents(self, subtask_id: str) -> list[str]:
        return sorted(s.subtask_id for s in self.subtasks.values()
                      if subtask_id in s.prerequisites)

    def to_dict(self) -> dict:
        return {"graph_id": self.graph_id,
                "task": self.task.to_dict() if self.task else None,
                "subtasks": [s.to_dict() for s in self.order()]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SubtaskGraph":
        task = GlobalTask.from_dict(data["task"]) if data.get("task") else None
        subtasks = {s["id"]: Subtask.from_dict(s) for s in data["subtasks"]}
        return cls(data["graph_id"], subtasks, task)


def compute_depths(prerequisites: Mapping[str, Iterable[str]]) -> dict[str, int]:
    """Longest-prerequisite-path depth. Raises ValueError on a cycle."""
    depth: dict[str, int] = {}
    visiting: set[str] = set()

    def visit(sid):
        if sid in depth:
            return depth[sid]
        if sid in visiting:
            raise ValueError(f"cycle through {sid}")
        visiting.add(sid)
        pre = [p for p in prerequisites.get(sid, ()) if p in prerequisites]
        depth[sid] = 1 + max((visit(p) for p in pre), default=0)
        visiting.discard(sid)
        return depth[sid]

    for sid in sorted(prerequisites):
        visit(sid)
    return depth


@dataclass(frozen=True)
class Violation:
    code: str
    subtask_id: str | None
    message: str

    def __str__(self):
        where = f"[{self.subtask_id}] " if self.subtask_id else ""
        return f"{self.code}: {where}{self.message}"


def _find_cycle(prereqs: Mapping[str, Iterable[str]]) -> list[str] | None:
    color: dict[str, int] = {}
    stack: list[str] = []

    def dfs(node):
        color[node] = 1
        stack.append(node)
        for nxt in sorted(prereqs.get(node, ())):
            if nxt not in prereqs:
                continue
            if color.get(nxt) == 1:
                return stack[stack.index(nxt):] + [nxt]
            if color.get(nxt) is None:
                found = dfs(nxt)
                if found:
                    return found
        stack.pop()
        color[node] = 2
        return None

    for node in sorted(prereqs):
        if color.get(node) is None:
            found = dfs(node)
            if found:
                return found
    return None


def validate_graph(graph: SubtaskGraph, registry=None,
                   skill_catalog: Mapping[str, Iterable[str]] | None = None) -> list[Violation]:
    """Structural checks on a plan. An empty list means the graph is valid.

    ``registry`` may be a :class:`RobotRegistry` or any container of robot ids;
    ``None`` skips the registration check. ``skill_catalog`` maps robot id to
    skill ids; ``None`` skips skill coverage.
    """
    out: list[Violation] = []
    subs = graph.subtasks
    prereqs = {sid: set(s.prerequisites) for sid, s in subs.items()}

    for sid, s in sorted(subs.items()):
        if sid != s.subtask_id:
            out.append(Violation("id-mismatch", sid, f"keyed as {sid} but named {s.subtask_id}"))
        for p in sorted(s.prerequisites):
            if p not in subs:
                out.append(Violation("unknown-prerequisite", sid, f"prerequisite {p} not in graph"))
        if not s.assignees:
            out.append(Violation("no-assignees", sid, "subtask has no assignees"))
        if len(set(s.assignees)) != len(s.assignees):
            out.append(Violation("duplicate-assignee", sid, "assignees repeat"))
        if s.kind not in SUBTASK_KINDS:
            out.append(Violation("kind", sid, f"unknown kind {s.kind!r}"))
        elif (s.kind == "single") != (len(s.assignees) == 1):
            out.append(Violation("kind-arity", sid,
                                 f"{s.kind} subtask with {len(s.assignees)} assignees"))
        problem = goals.well_formed(s.goal) if s.goal else None
        if problem:
            out.append(Violation("goal", sid, problem))
        roles = (s.params or {}).get("roles") or {}
        for rid in sorted(set(roles) - set(s.assignees)):
            out.append(Violation("role", sid, f"role for non-assignee {rid}"))
        if registry is not None:
            for rid in s.assignees:
                if rid not in registry:
                    out.append(Violation("unknown-robot", sid, f"assignee {rid} is not registered"))
        if skill_catalog is not None:
            for rid in s.assignees:
                if rid in skill_catalog:
                    missing = set(s.required_skills) - set(skill_catalog[rid])
                    if missing:
                        out.append(Violation("skill-coverage", sid,
                                             f"{rid} lacks {sorted(missing)}"))
                elif registry is None:
                    out.append(Violation("unknown-robot", sid, f"{rid} not in skill catalog"))

    cycle = _find_cycle(prereqs)
    if cycle:
        out.append(Violation("cycle", None, " -> ".join(cycle)))
        return out

    depths = compute_depths(prereqs)
    for sid, s in sorted(subs.items()):
        if s.depth != depths[sid]:
            out.append(Violation("depth-consistency", sid,
                                 f"depth {s.depth} but prerequisites imply {depths[sid]}"))
        for p in s.prerequisites:
            if p in subs and subs[p].depth >= s.depth:
                out.append(Violation("depth-order", sid,
                                     f"prerequisite {p} has depth {subs[p].depth} >= {s.depth}"))
    return out
