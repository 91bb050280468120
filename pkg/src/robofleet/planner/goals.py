"""Closed-world goal predicates evaluated against a scene graph.

Predicates are plain JSON-compatible dicts so they travel unchanged through
plan responses, traces and prompts::

    {"op": "on", "object": "egg", "target": "dining_table"}
    {"op": "held_by", "object": "knife", "robot": "R2"}
    {"op": "attr", "node": "gift_bag", "key": "open", "value": True}
    {"op": "all", "of": [...]}

``object`` names a *label*; ``target``, ``node`` and ``robot`` name node ids.
"""

from __future__ import annotations

from typing import Iterable, Mapping

from ..memory.scene import SceneGraph

OPS = ("on", "held_by", "attr", "all")


def on(obj: str, target: str) -> dict:
    return {"op": "on", "object": obj, "target": target}


def held_by(obj: str, robot: str) -> dict:
    return {"op": "held_by", "object": obj, "robot": robot}


def attr(node: str, key: str, value, via: Mapping | None = None) -> dict:
    pred = {"op": "attr", "node": node, "key": key, "value": value}
    if via:
        pred["via"] = dict(via)
    return pred


def all_of(preds: Iterable[Mapping]) -> dict:
    flat = []
    for p in preds:
        flat.extend(conjuncts(p))
    return flat[0] if len(flat) == 1 else {"op": "all", "of": flat}


def conjuncts(pred: Mapping) -> list[dict]:
    if pred.get("op") == "all":
        out = []
        for p in pred["of"]:
            out.extend(conjuncts(p))
        return out
    return [dict(pred)]


def well_formed(pred) -> str | None:
    """Return a problem description or None."""
    if not isinstance(pred, Mapping):
        return "predicate must be an object"
    op = pred.get("op")
    if op not in OPS:
        return f"unknown predicate op {op!r}"
    need = {"on": ("object", "target"), "held_by": ("object", "robot"),
            "attr": ("node", "key", "value"), "all": ("of",)}[op]
    for key in need:
        if key not in pred:
            return f"{op} predicate missing {key!r}"
    if op == "all":
        for sub in pred["of"]:
            problem = well_formed(sub)
            if problem:
                return problem
    return None


def nodes_with_label(graph: SceneGraph, label: str) -> list[str]:
    return [m.id for m in graph.query(labels=[label])]


def evaluate(pred: Mapping, graph: SceneGraph) -> bool:
    op = pred["op"]
    if op == "all":
        return all(evaluate(p, graph) for p in pred["of"])
    if op == "attr":
        node = graph.get(pred["node"])
        return node is not None and node.attributes.get(pred["key"]) == pred["value"]
    holder = pred["target"] if op == "on" else pred["robot"]
    return any(graph.parent(n) == holder for n in nodes_with_label(graph, pred["object"]))


def labels_in(pred: Mapping) -> list[str]:
    out = []
    for c in conjuncts(pred):
        if "object" in c:
            out.append(c["object"])
        via = c.get("via") or {}
        if "source" in via:
            out.append(via["source"])
    return sorted(set(out))


def nodes_in(pred: Mapping) -> list[str]:
    out = []
    for c in conjuncts(pred):
        for key in ("target", "node", "robot"):
            if key in c:
                out.append(c[key])
    return sorted(set(out))
