"""Simulated skill execution with declared effects and failure injection.

An invocation has two halves. :meth:`SkillLibrary.begin` checks the robot-side
preconditions and consults the injection policy; :meth:`SkillLibrary.finish`
runs at the end of the tool's duration, checks world state and commits the
effects to the world and to shared memory in one step. :meth:`invoke` does
both back to back for callers without an event loop.
"""

from __future__ import annotations

import itertools
import logging
import random
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

from ..errors import SkillError
from ..memory.shared import SharedMemory
from .catalog import FailureInjection, ToolCatalog, ToolProfile
from .world import World

log = logging.getLogger(__name__)

SUCCESS, FAILURE, REJECTED = "success", "failure", "rejected"


@dataclass(frozen=True)
class ToolInvocation:
    invocation_id: str
    tool_id: str
    robot_id: str
    args: Mapping[str, Any]
    started: float = 0.0
    location: str | None = None
    subtask_id: str | None = None
    agent_id: str | None = None

    def to_dict(self) -> dict:
        return {"invocation_id": self.invocation_id, "tool": self.tool_id,
                "robot": self.robot_id, "args": dict(self.args), "started": self.started,
                "location": self.location, "subtask": self.subtask_id, "agent": self.agent_id}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ToolInvocation":
        return cls(data["invocation_id"], data["tool"], data["robot"], dict(data["args"]),
                   data.get("started", 0.0), data.get("location"), data.get("subtask"),
                   data.get("agent"))


@dataclass(frozen=True)
class ToolResult:
    invocation_id: str
    tool_id: str
    robot_id: str
    status: str
    reason: str | None = None
    started: float = 0.0
    ended: float = 0.0
    observation: Mapping[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == SUCCESS

    def to_dict(self) -> dict:
        return {"invocation_id": self.invocation_id, "tool": self.tool_id,
                "robot": self.robot_id, "status": self.status, "reason": self.reason,
                "started": self.started, "ended": self.ended,
                "observation": dict(self.observation)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ToolResult":
        return cls(data["invocation_id"], data["tool"], data["robot"], data["status"],
                   data.get("reason"), data.get("started", 0.0), data.get("ended", 0.0),
                   data.get("observation", {}))


def call_signature(tool_id: str, args: Mapping[str, Any]) -> str:
    """Short, stable rendering of a call's target, used for traces and grading."""
    if tool_id == "detect":
        return args.get("label", "")
    if tool_id in ("place", "pour"):
        first = args.get("object", args.get("source", ""))
        return f"{first}->{args.get('target', '')}"
    if tool_id == "handover":
        return f"{args.get('object', '')}:{args.get('role', '')}"
    return str(args.get("target", args.get("object", "")))


class InjectionPolicy:
    """Seeded failure injection, consulted once per accepted invocation."""

    def __init__(self, injections: Iterable[FailureInjection] = ()):
        self.injections = list(injections)
        self._rngs = [random.Random(inj.seed) for inj in self.injections]
        self._counts = [0] * len(self.injections)

    def decide(self, tool_id: str, robot_id: str) -> tuple[str, str] | None:
        for i, inj in enumerate(self.injections):
            if not inj.matches(tool_id, robot_id):
                continue
            if inj.mode == "fail_first_k":
                if self._counts[i] < inj.parameter:
                    self._counts[i] += 1
                    return FAILURE, "injected"
            elif self._rngs[i].random() < inj.parameter:
                if inj.mode == "fail_prob":
                    return FAILURE, "injected"
                return REJECTED, "spoofed_precondition"
        return None


class SkillLibrary:
    def __init__(self, catalog: ToolCatalog, world: World, memory: SharedMemory,
                 injections: Iterable[FailureInjection] = (), clock=None,
                 battery_drain: float = 0.001):
        self.catalog = catalog
        self.world = world
        self.memory = memory
        self.clock = clock or memory.clock
        self.policy = InjectionPolicy(injections)
        self.battery_drain = battery_drain
        self._ids = itertools.count(1)
        self._busy: dict[str, str] = {}
        self._injected: dict[str, str] = {}

    # ---------------------------------------------------------------- helpers

    def _now(self) -> float:
        return self.clock()

    def new_invocation(self, tool_id: str, robot_id: str, args: Mapping[str, Any],
                       subtask_id: str | None = None, agent_id: str | None = None
                       ) -> ToolInvocation:
        location = None
        if robot_id in self.world.graph:
            location = self.world.graph.node(robot_id).attributes.get("at")
        return ToolInvocation(f"inv-{next(self._ids):06d}", tool_id, robot_id, dict(args),
                              self._now(), location, subtask_id, agent_id)

    def duration(self, tool_id: str) -> float:
        return self.catalog.get(tool_id).duration

    def _result(self, inv: ToolInvocation, status: str, reason: str | None = None,
                observation: Mapping | None = None) -> ToolResult:
        res = ToolResult(inv.invocation_id, inv.tool_id, inv.robot_id, status, reason,
                         inv.started, self._now(), dict(observation or {}))
        payload = res.to_dict()
        payload["subtask"] = inv.subtask_id
        payload["agent"] = inv.agent_id
        payload["signature"] = call_signature(inv.tool_id, inv.args)
        self.memory.log.append("tool_result", inv.robot_id, payload)
        return res

    def _known(self, node_id) -> bool:
        g = self.world.graph
        return isinstance(node_id, str) and node_id in g and \
            g.node(node_id).visibility != "removed"

    # ------------------------------------------------------------ preconditions

    def _reject_reason(self, inv: ToolInvocation, tool: ToolProfile) -> str | None:
        reg = self.memory.registry
        rid = inv.robot_id
        if rid not in reg or rid not in self.world.graph:
            return "unknown_robot"
        profile = reg.profile(rid)
        if reg.state(rid).status == "offline":
            return "offline"
        if inv.tool_id not in profile.skills or profile.embodiment not in tool.applicability:
            return "not_bound"
        if rid in self._busy:
            return "busy"
        for name, ptype in tool.params_schema:
            if name not in inv.args:
                return f"missing_arg:{name}"
            if ptype == "robot" and inv.args[name] not in reg:
                return f"unknown_robot:{inv.args[name]}"
        w, a = self.world, inv.args
        held = w.held(rid)
        if inv.tool_id == "navigate":
            if self._known(a["target"]):
                room = w.graph.room_of(a["target"])
                if room not in profile.motion_domain:
                    return "outside_motion_domain"
        elif inv.tool_id == "grasp":
            if len(held) >= profile.capacity:
                return "hands_full"
            if self._known(a["object"]) and \
                    "graspable" not in w.graph.node(a["object"]).affordances:
                return "not_graspable"
        elif inv.tool_id == "place":
            if a["object"] not in held:
                return "not_holding"
            if self._known(a["target"]):
                target = w.graph.node(a["target"])
                if not {"support", "container"} & target.affordances:
                    return "not_a_surface"
                if not w.reachable(rid, a["target"]):
                    return "not_at_target"
        elif inv.tool_id == "open_container":
            if self._known(a["target"]):
                if "openable" not in w.graph.node(a["target"]).affordances:
                    return "no_affordance"
                if not w.reachable(rid, a["target"]):
                    return "not_at_target"
        elif inv.tool_id == "pour":
            if a["source"] not in held:
                return "not_holding"
            if self._known(a["target"]):
                if "fillable" not in w.graph.node(a["target"]).affordances:
                    return "not_fillable"
                if not w.reachable(rid, a["target"]):
                    return "not_at_target"
        elif inv.tool_id == "handover":
            if a["role"] not in ("give", "receive"):
                return "bad_role"
            if a["role"] == "give" and a["object"] not in held:
                return "not_holding"
            if a["role"] == "receive" and len(held) >= profile.capacity:
                return "hands_full"
        return None

    def _failure_reason(self, inv: ToolInvocation, tool: ToolProfile) -> str | None:
        w, a = self.world, inv.args
        for name, ptype in tool.params_schema:
            if ptype == "node" and not self._known(a[name]):
                return "not_found"
        if inv.tool_id == "grasp":
            obj = a["object"]
            if w.hidden(obj) or not w.reachable(inv.robot_id, obj):
                return "not_found"
        elif inv.tool_id == "place":
            target = w.graph.node(a["target"])
            if "openable" in target.affordances and not target.attributes.get("open", False):
                return "container_closed"
        elif inv.tool_id == "pour":
            if not w.graph.node(a["source"]).attributes.get("filled", False):
                return "empty"
        elif inv.tool_id == "detect":
            if not self._found(inv):
                return "not_found"
        return None

    def _found(self, inv: ToolInvocation) -> list[str]:
        w = self.world
        room = w.robot_room(inv.robot_id)
        return [n for n in w.visible_in_room(room)
                if w.graph.node(n).label == inv.args["label"]]

    # ------------------------------------------------------------------ commit

    def _apply(self, inv: ToolInvocation, tool: ToolProfile, bind: Mapping[str, Any]) -> dict:
        w, g = self.world, self.world.graph
        now = self._now()
        touched: list[str] = []
        observation: dict[str, Any] = {}

        def ref(value):
            return bind.get(value[1:], value) if isinstance(value, str) and value.startswith("$") \
                else value

        for effect in tool.effects:
            op = effect["op"]
            if op == "move_robot":
                target = ref(effect["to"])
                rid = bind["robot"]
                room = g.room_of(target)
                pos = g.node(target).position
                node = g.node(rid)
                attrs = dict(node.attributes, at=target)
                g.upsert_node(replace(node, attributes=attrs), room, "contains")
                touched += w.move_subtree(rid, pos)
                self.memory.registry.update_robot_state(rid, position=pos)
            elif op == "reparent":
                node_id, parent = ref(effect["node"]), ref(effect["parent"])
                relation = effect.get("relation", "supports")
                if relation == "auto":
                    relation = "contains" if "container" in g.node(parent).affordances \
                        else "supports"
                g.set_edge(parent, node_id, relation, now)
                touched += w.move_subtree(node_id, g.node(parent).position)
            elif op == "set_attr":
                node_id = ref(effect["node"])
                node = g.node(node_id)
                g.upsert_node(replace(node, attributes=dict(node.attributes,
                                                             **{effect["key"]: effect["value"]})))
                touched.append(node_id)
            elif op == "observe":
                obs = w.observation(bind["robot"], now)
                self.memory.scene.apply_observation(obs)
                observation = {"room": obs.room, "label": inv.args.get("label"),
                               "found": self._found(inv)}
        self._mirror(touched, now)
        return observation

    def _mirror(self, touched: Iterable[str], now: float) -> None:
        g, mem = self.world.graph, self.memory.scene
        for n in sorted(set(touched), key=lambda n: (len(g.ancestors(n)), n)):
            edge = g.parent_edge(n)
            node = replace(g.node(n), visibility="visible", last_observed=now)
            mem.upsert_node(node, edge.src if edge else None,
                            edge.relation if edge else "contains")

    def _drain(self, robot_id: str, seconds: float) -> None:
        reg = self.memory.registry
        if self.battery_drain and robot_id in reg:
            b = reg.state(robot_id).battery
            reg.update_robot_state(robot_id, battery=round(max(0.0, b - self.battery_drain * seconds), 6))

    # -------------------------------------------------------------- public API

    def begin(self, inv: ToolInvocation) -> ToolResult | None:
        """Start an invocation. Returns a rejection, or None when it is underway."""
        self.memory.log.append("tool_call", inv.robot_id,
                               dict(inv.to_dict(),
                                    signature=call_signature(inv.tool_id, inv.args)))
        tool = self.catalog.get(inv.tool_id)
        reason = self._reject_reason(inv, tool)
        if reason is None:
            decision = self.policy.decide(inv.tool_id, inv.robot_id)
            if decision is not None:
                status, why = decision
                if status == REJECTED:
                    reason = why
                else:
                    self._injected[inv.invocation_id] = why
        if reason is not None:
            return self._result(inv, REJECTED, reason, {"diagnosis": reason})
        self._busy[inv.robot_id] = inv.invocation_id
        return None

    def finish(self, inv: ToolInvocation) -> ToolResult:
        """Complete a started invocation at the current clock time."""
        tool = self.catalog.get(inv.tool_id)
        if tool.rendezvous:
            raise SkillError("rendezvous tools complete through finish_rendezvous")
        self._busy.pop(inv.robot_id, None)
        injected = self._injected.pop(inv.invocation_id, None)
        if injected:
            return self._result(inv, FAILURE, injected)
        reason = self._failure_reason(inv, tool)
        if reason:
            return self._result(inv, FAILURE, reason)
        bind = dict(inv.args, robot=inv.robot_id)
        observation = self._apply(inv, tool, bind)
        self._drain(inv.robot_id, tool.duration)
        return self._result(inv, SUCCESS, None, observation)

    def abort(self, inv: ToolInvocation, reason: str) -> ToolResult:
        """End a started invocation as a failure without touching the world."""
        self._busy.pop(inv.robot_id, None)
        self._injected.pop(inv.invocation_id, None)
        return self._result(inv, FAILURE, reason)

    def finish_rendezvous(self, give: ToolInvocation, receive: ToolInvocation
                          ) -> tuple[ToolResult, ToolResult]:
        """Commit a matched handover pair as one atomic effect."""
        tool = self.catalog.get(give.tool_id)
        for inv in (give, receive):
            self._busy.pop(inv.robot_id, None)
        injected = [self._injected.pop(i.invocation_id, None) for i in (give, receive)]
        if any(injected):
            return (self._result(give, FAILURE, "injected"),
                    self._result(receive, FAILURE, "injected"))
        w = self.world
        obj = give.args["object"]
        if not self._known(obj) or w.graph.parent(obj) != give.robot_id:
            reason = "not_found"
        elif w.robot_room(give.robot_id) != w.robot_room(receive.robot_id):
            reason = "rendezvous_mismatch"
        else:
            reason = None
        if reason:
            return self._result(give, FAILURE, reason), self._result(receive, FAILURE, reason)
        self._apply(give, tool, dict(give.args, robot=give.robot_id,
                                     receiver=receive.robot_id))
        for inv in (give, receive):
            self._drain(inv.robot_id, tool.duration)
        return self._result(give, SUCCESS), self._result(receive, SUCCESS)

    def invoke(self, tool_id: str, robot_id: str, args: Mapping[str, Any],
               subtask_id: str | None = None, agent_id: str | None = None) -> ToolResult:
        """Run one non-rendezvous invocation to completion, advancing the clock."""
        inv = self.new_invocation(tool_id, robot_id, args, subtask_id, agent_id)
        if self.catalog.get(tool_id).rendezvous:
            self.memory.log.append("tool_call", robot_id, inv.to_dict())
            return self._result(inv, REJECTED, "needs_rendezvous",
                                {"diagnosis": "needs_rendezvous"})
        rejected = self.begin(inv)
        if rejected is not None:
            return rejected
        if hasattr(self.clock, "advance"):
            self.clock.advance(self.duration(tool_id))
        return self.finish(inv)
