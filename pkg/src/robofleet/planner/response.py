"""Parsing plan responses from a remote planner.

A response is a JSON object, possibly surrounded by prose or a fenced block::

    {"reasoning": ["step", ...],
     "subtasks": [{"id": "s1", "description": "...", "depth": 1,
                   "assignees": ["R1"], "kind": "single", "prerequisites": [],
                   "goal": {"op": "on", "object": "egg", "target": "table"}}]}
"""

from __future__ import annotations

import json
from typing import Any

from ..errors import MalformedResponseError, PlanValidationError
from .types import GlobalTask, ReasoningTrace, Subtask, SubtaskGraph, validate_graph

RESPONSE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["reasoning", "subtasks"],
    "properties": {
        "reasoning": {"type": "array", "items": {"type": "string"}},
        "subtasks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "description", "depth", "assignees", "kind",
                             "prerequisites", "goal"],
                "properties": {
                    "id": {"type": "string"},
                    "description": {"type": "string"},
                    "depth": {"type": "integer", "minimum": 1},
                    "assignees": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                    "kind": {"enum": ["single", "collaboration"]},
                    "prerequisites": {"type": "array", "items": {"type": "string"}},
                    "goal": {"type": "object"},
                    "required_skills": {"type": "array", "items": {"type": "string"}},
                    "params": {"type": "object"},
                },
            },
        },
    },
}

_FIELD_TYPES = {"id": str, "description": str, "depth": int, "assignees": list, "kind": str,
                "prerequisites": list, "goal": dict}


def extract_json(text: str) -> Any:
    """The first complete JSON object embedded in ``text``."""
    if not isinstance(text, str) or not text.strip():
        raise MalformedResponseError("empty response", "$")
    start = text.find("{")
    if start < 0:
        raise MalformedResponseError("no JSON object in response", "$")
    try:
        obj, _ = json.JSONDecoder().raw_decode(text[start:])
    except json.JSONDecodeError as exc:
        raise MalformedResponseError(f"invalid JSON: {exc.msg} at offset {start + exc.pos}",
                                     "$") from None
    return obj


def parse_plan_response(text: str, task: GlobalTask | None = None, registry=None,
                        skill_catalog=None, graph_id: str | None = None
                        ) -> tuple[ReasoningTrace, SubtaskGraph]:
    """Decode, type-check and validate a plan response."""
    data = extract_json(text)
    if not isinstance(data, dict):
        raise MalformedResponseError("response must be a JSON object", "$")
    reasoning = data.get("reasoning", [])
    if not isinstance(reasoning, list) or not all(isinstance(r, str) for r in reasoning):
        raise MalformedResponseError("reasoning must be a list of strings", "$.reasoning")
    items = data.get("subtasks")
    if not isinstance(items, list):
        raise MalformedResponseError("subtasks must be a list", "$.subtasks")
    subtasks: dict[str, Subtask] = {}
    for i, item in enumerate(items):
        where = f"$.subtasks[{i}]"
        if not isinstance(item, dict):
            raise MalformedResponseError("subtask must be an object", where)
        for key, kind in _FIELD_TYPES.items():
            if key not in item:
                raise MalformedResponseError(f"missing field {key!r}", f"{where}.{key}")
            value = item[key]
            if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
                raise MalformedResponseError(f"{key} must be {kind.__name__}", f"{where}.{key}")
        for key in ("assignees", "prerequisites", "required_skills"):
            if not all(isinstance(v, str) for v in item.get(key, [])):
                raise MalformedResponseError(f"{key} must hold strings", f"{where}.{key}")
        if item["id"] in subtasks:
            raise MalformedResponseError(f"duplicate subtask id {item['id']!r}", f"{where}.id")
        if "params" in item and not isinstance(item["params"], dict):
            raise MalformedResponseError("params must be an object", f"{where}.params")
        subtasks[item["id"]] = Subtask.from_dict(item)
    gid = graph_id or data.get("graph_id") or (f"g-{task.task_id}" if task else "g-remote")
    graph = SubtaskGraph(str(gid), subtasks, task)
    violations = validate_graph(graph, registry, skill_catalog)
    if violations:
        raise PlanValidationError(violations)
    return ReasoningTrace(tuple(reasoning)), graph


def render_plan_response(trace: ReasoningTrace, graph: SubtaskGraph) -> str:
    """Serialize a plan in the response schema (inverse of the parser)."""
    return json.dumps({"graph_id": graph.graph_id, "reasoning": list(trace.steps),
                       "subtasks": [s.to_dict() for s in graph.order()]},
                      indent=1, sort_keys=True)
