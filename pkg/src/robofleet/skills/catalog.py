"""Tool profiles, the tool catalog and robot-to-skill binding."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Any, Iterable, Mapping

from ..errors import EmbodimentMismatchError, InvalidProfileError, UnknownToolError
from ..memory.registry import EMBODIMENTS, RobotProfile

CATEGORIES = ("manipulation", "navigation", "perception", "special")
PARAM_TYPES = ("node", "label", "robot", "token", "role")
EFFECT_OPS = {
    "move_robot": ("to",),
    "reparent": ("node", "parent"),
    "set_attr": ("node", "key", "value"),
    "observe": (),
}


@dataclass(frozen=True)
class ToolProfile:
    tool_id: str
    category: str
    description: str = ""
    params_schema: tuple = ()
    effects: tuple = ()
    duration: float = 1.0
    applicability: frozenset = frozenset(EMBODIMENTS)
    rendezvous: bool = False

    def __post_init__(self):
        object.__setattr__(self, "params_schema",
                           tuple((str(n), str(t)) for n, t in self.params_schema))
        object.__setattr__(self, "effects", tuple(dict(e) for e in self.effects))
        object.__setattr__(self, "applicability", frozenset(self.applicability))
        problems = self.problems()
        if problems:
            raise InvalidProfileError(f"tool {self.tool_id!r}: {'; '.join(problems)}")

    def problems(self) -> list[str]:
        out = []
        if self.category not in CATEGORIES:
            out.append(f"unknown category {self.category!r}")
        names = [n for n, _ in self.params_schema]
        if len(set(names)) != len(names):
            out.append("duplicate parameter names")
        for _, ptype in self.params_schema:
            if ptype not in PARAM_TYPES:
                out.append(f"unknown parameter type {ptype!r}")
        if self.duration < 0:
            out.append("negative duration")
        unknown = set(self.applicability) - set(EMBODIMENTS)
        if unknown:
            out.append(f"unknown embodiments {sorted(unknown)}")
        bindable = set(names) | {"robot", "receiver"}
        for effect in self.effects:
            op = effect.get("op")
            if op not in EFFECT_OPS:
                out.append(f"unknown effect op {op!r}")
                continue
            for key in EFFECT_OPS[op]:
                if key not in effect:
                    out.append(f"{op} effect missing {key!r}")
                    continue
                ref = effect[key]
                if isinstance(ref, str) and ref.startswith("$") and ref[1:] not in bindable:
                    out.append(f"{op} effect references unknown parameter {ref}")
            rel = effect.get("relation")
            if rel is not None and rel not in ("contains", "supports", "auto"):
                out.append(f"{op} effect has bad relation {rel!r}")
        return out

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.params_schema)

    def to_dict(self) -> dict:
        return {"tool_id": self.tool_id, "category": self.category,
                "description": self.description,
                "params_schema": [{"name": n, "type": t} for n, t in self.params_schema],
                "effects": list(self.effects), "duration": self.duration,
                "applicability": sorted(self.applicability), "rendezvous": self.rendezvous}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ToolProfile":
        return cls(data["tool_id"], data["category"], data.get("description", ""),
                   tuple((p["name"], p["type"]) for p in data.get("params_schema", ())),
                   tuple(data.get("effects", ())), float(data.get("duration", 1.0)),
                   frozenset(data.get("applicability", EMBODIMENTS)),
                   bool(data.get("rendezvous", False)))


class ToolCatalog:
    def __init__(self, profiles: Iterable[ToolProfile] = ()):
        self._tools: dict[str, ToolProfile] = {}
        for p in profiles:
            self.register_tool(p)

    def __contains__(self, tool_id) -> bool:
        return tool_id in self._tools

    def __len__(self) -> int:
        return len(self._tools)

    def __iter__(self):
        return iter(sorted(self._tools))

    def get(self, tool_id: str) -> ToolProfile:
        try:
            return self._tools[tool_id]
        except KeyError:
            raise UnknownToolError(tool_id) from None

    def register_tool(self, profile: ToolProfile) -> str:
        old = self._tools.get(profile.tool_id)
        if old is not None and old != profile:
            raise InvalidProfileError(f"tool {profile.tool_id!r} already registered differently")
        self._tools[profile.tool_id] = profile
        return profile.tool_id

    def to_list(self) -> list[dict]:
        return [self._tools[t].to_dict() for t in sorted(self._tools)]

    @classmethod
    def from_list(cls, items: Iterable[Mapping]) -> "ToolCatalog":
        return cls(ToolProfile.from_dict(d) for d in items)


def register_tool(catalog: ToolCatalog, profile: ToolProfile) -> str:
    return catalog.register_tool(profile)


def bind_skills(robot: RobotProfile, catalog: ToolCatalog) -> frozenset:
    """Tools from ``catalog`` that ``robot`` names and can physically run."""
    if len(catalog) == 0:
        raise InvalidProfileError(f"{robot.robot_id}: empty catalog gives an empty binding")
    bound = set()
    for tool_id in sorted(robot.skills):
        tool = catalog.get(tool_id)
        if robot.embodiment not in tool.applicability:
            raise EmbodimentMismatchError(
                f"{robot.robot_id} ({robot.embodiment}) cannot run {tool_id}")
        bound.add(tool_id)
    if not bound:
        raise InvalidProfileError(f"{robot.robot_id}: binding is empty")
    return frozenset(bound)


def baseline_catalog() -> ToolCatalog:
    """The bundled catalog: navigate, detect, grasp, place, handover, open_container, pour."""
    text = resources.files("robofleet.data").joinpath("tools.json").read_text()
    return ToolCatalog.from_list(json.loads(text))


FAILURE_MODES = ("fail_prob", "fail_first_k", "precondition_spoof")


@dataclass(frozen=True)
class FailureInjection:
    """``fail_prob`` and ``precondition_spoof`` take a probability,
    ``fail_first_k`` a count. ``robot_id`` optionally narrows the target."""

    tool_id: str = "*"
    mode: str = "fail_prob"
    parameter: float = 0.0
    seed: int = 0
    robot_id: str | None = None

    def __post_init__(self):
        if self.mode not in FAILURE_MODES:
            raise ValueError(f"unknown failure mode {self.mode!r}")
        if self.mode == "fail_first_k":
            if self.parameter < 0 or int(self.parameter) != self.parameter:
                raise ValueError("fail_first_k needs a non-negative integer count")
        elif not 0.0 <= self.parameter <= 1.0:
            raise ValueError(f"probability {self.parameter} outside [0, 1]")

    def matches(self, tool_id: str, robot_id: str) -> bool:
        return self.tool_id in ("*", tool_id) and self.robot_id in (None, robot_id)

    def to_dict(self) -> dict[str, Any]:
        d = {"tool_id": self.tool_id, "mode": self.mode, "parameter": self.parameter,
             "seed": self.seed}
        if self.robot_id is not None:
            d["robot_id"] = self.robot_id
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "FailureInjection":
        return cls(data.get("tool_id", "*"), data["mode"], data.get("parameter", 0.0),
                   int(data.get("seed", 0)), data.get("robot_id"))
