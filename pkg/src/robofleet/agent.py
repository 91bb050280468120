"""Per-subtask robotic agents.

An agent owns one (subtask, robot) pair and loops: decide, invoke a tool, fold
the result into its history, decide again. :class:`RulePolicy` is the default
decision table; its output depends only on the subtask, the agent's history
and the shared scene graph, so identical inputs give identical decisions.

Goal conjuncts are worked in order, each through the canonical steps
locate -> approach -> acquire -> deliver. Failures are handled in three
levels: retry the same call (1), re-perceive then retry (2), and finally
declare failure so the Monitor can retry or replan (3). A ``not_found`` from
``detect`` instead starts a search over openable and container fixtures,
nearest room first.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Mapping

from .memory.registry import RobotProfile
from .memory.scene import SceneGraph
from .memory.shared import SharedMemory
from .planner import goals
from .planner.types import Subtask
from .skills.executor import FAILURE, REJECTED, SkillLibrary, ToolInvocation, ToolResult, \
    call_signature

if TYPE_CHECKING:
    from .sim.clock import EventQueue

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 16
DEFAULT_RENDEZVOUS_TIMEOUT = 30.0

INVOKE, SUCCESS, FAIL, ESCALATE = "invoke", "declare_success", "declare_failure", "escalate"
SEARCH_AFFORDANCES = frozenset({"container", "openable"})


@dataclass(frozen=True)
class AgentDecision:
    kind: str
    tool: str | None = None
    args: Mapping[str, Any] = field(default_factory=dict)
    reason: str | None = None
    level: int | None = None

    @classmethod
    def invoke(cls, tool: str, **args) -> "AgentDecision":
        return cls(INVOKE, tool, dict(args))

    @classmethod
    def success(cls) -> "AgentDecision":
        return cls(SUCCESS)

    @classmethod
    def failure(cls, reason: str) -> "AgentDecision":
        return cls(FAIL, reason=reason)

    @classmethod
    def escalate(cls, level: int = 3, reason: str | None = None) -> "AgentDecision":
        return cls(ESCALATE, reason=reason, level=level)

    @property
    def terminal(self) -> bool:
        return self.kind != INVOKE

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind == INVOKE:
            d.update(tool=self.tool, args=dict(self.args))
        if self.reason is not None:
            d["reason"] = self.reason
        if self.level is not None:
            d["level"] = self.level
        return d


@dataclass
class AgentState:
    agent_id: str
    subtask: Subtask
    robot_id: str
    history: list = field(default_factory=list)
    partial_memory: dict = field(default_factory=dict)
    budget: int = DEFAULT_BUDGET
    rendezvous: str | None = None
    attempt: int = 1

    def record(self, inv: ToolInvocation, res: ToolResult) -> None:
        self.history.append((inv, res))
        self.budget -= 1

    def to_dict(self) -> dict:
        return {"agent_id": self.agent_id, "subtask": self.subtask.subtask_id,
                "robot": self.robot_id, "attempt": self.attempt, "token": self.rendezvous,
                "budget_left": self.budget,
                "history": [{"call": inv.to_dict(), "result": res.to_dict()}
                            for inv, res in self.history]}


# ---------------------------------------------------------------- memory view


class _View:
    """Read-only helpers over the shared scene graph for one robot."""

    def __init__(self, graph: SceneGraph, robot: str, profile: RobotProfile):
        self.g = graph
        self.robot = robot
        self.profile = profile

    def at(self) -> str:
        return self.g.node(self.robot).attributes.get("at", self.room())

    def room(self) -> str:
        return self.g.room_of(self.robot)

    def item(self, label: str) -> str | None:
        """Best node for a label: visible first, then occluded, by id."""
        found = [m.node for m in self.g.query(labels=[label])]
        found = [n for n in found if not n.attributes.get("robot")]
        found.sort(key=lambda n: (n.visibility != "visible", n.id))
        return found[0].id if found else None

    def holder(self, node_id: str) -> str | None:
        parent = self.g.parent(node_id)
        if parent is not None and self.g.node(parent).attributes.get("robot"):
            return parent
        return None

    def station(self, node_id: str) -> str:
        cur = node_id
        while True:
            node = self.g.node(cur)
            if node.kind != "object" or node.attributes.get("robot"):
                return cur
            parent = self.g.parent(cur)
            if parent is None or self.g.node(parent).kind != "object":
                return cur
            cur = parent

    def reachable(self, node_id: str) -> bool:
        target = self.station(node_id)
        if self.g.node(target).kind == "room":
            return self.room() == target
        at = self.at()
        return at in self.g and self.station(at) == target

    def is_open(self, node_id: str) -> bool:
        return bool(self.g.node(node_id).attributes.get("open", False))

    def needs_opening(self, node_id: str) -> bool:
        return "openable" in self.g.node(node_id).affordances and not self.is_open(node_id)

    def room_distance(self, a: str | None, b: str | None) -> float:
        if a is None or b is None or a == b:
            return 0.0 if a == b else math.inf
        return math.dist(self.g.node(a).position, self.g.node(b).position)

    def label(self, node_id) -> str | None:
        node = self.g.get(node_id) if isinstance(node_id, str) else None
        return node.label if node is not None else None


# -------------------------------------------------------------------- policy


class RulePolicy:
    """Decision table for tool selection and recovery."""

    def select_tool(self, state: AgentState, graph: SceneGraph,
                    profile: RobotProfile) -> AgentDecision:
        if state.budget <= 0:
            return AgentDecision.failure("budget")
        view = _View(graph, state.robot_id, profile)
        if state.history:
            inv, res = state.history[-1]
            if res.status == REJECTED:
                return AgentDecision.failure(f"rejected:{res.reason}")
            if res.status == FAILURE:
                reaction = self.recover(state, res, view)
                if reaction is not None:
                    return reaction
        return self._advance(state, view)

    # ------------------------------------------------------------ failures

    def recover(self, state: AgentState, failure: ToolResult, view: _View | None = None
                ) -> AgentDecision | None:
        """React to a failed call. None means: carry on with the goal.

        ``detect`` not_found returns None; the search itself happens in the
        locate step, which sees the failed detect in the history.
        """
        inv = next(i for i, r in reversed(state.history) if r is failure)
        if failure.reason == "rendezvous_timeout":
            return AgentDecision.failure("rendezvous")
        if inv.tool_id == "detect" and failure.reason == "not_found":
            return None
        sig = (inv.tool_id, call_signature(inv.tool_id, inv.args))
        n = sum(1 for i, r in state.history
                if r.status == FAILURE and (i.tool_id, call_signature(i.tool_id, i.args)) == sig)
        if n == 1:
            return AgentDecision.invoke(inv.tool_id, **inv.args)
        if n == 2:
            label = None
            if view is not None:
                key = {"grasp": "object", "place": "target", "pour": "target",
                       "open_container": "target"}.get(inv.tool_id)
                label = view.label(inv.args.get(key)) if key else None
            if label is not None and "detect" in (view.profile.skills if view else ()):
                return AgentDecision.invoke("detect", label=label)
            return AgentDecision.invoke(inv.tool_id, **inv.args)
        return AgentDecision.failure(failure.reason or "failed")

    # ------------------------------------------------------------- the goal

    def _advance(self, state: AgentState, view: _View) -> AgentDecision:
        sub = state.subtask
        me = state.robot_id
        cons = goals.conjuncts(state.subtask.role_goal(me))
        unmet = [c for c in cons if not goals.evaluate(c, view.g)]
        if not unmet:
            return AgentDecision.success()
        # collect items from partners before delivering anything
        for c in unmet:
            if c["op"] == "on":
                item = view.item(c["object"])
                holder = view.holder(item) if item else None
                if holder and holder != me and holder in sub.assignees:
                    return self._handover(state, view, item, c["object"], holder, "receive")
        c = unmet[0]
        op = c["op"]
        if op == "on":
            return self._place(state, view, c["object"], c["target"])
        if op == "held_by":
            if c["robot"] == me:
                return self._acquire(state, view, c["object"])
            item = view.item(c["object"])
            if item and view.holder(item) == me:
                return self._handover(state, view, item, c["object"], c["robot"], "give")
            return self._acquire(state, view, c["object"])
        if op == "attr":
            return self._attr(state, view, c)
        return AgentDecision.failure(f"unsupported_goal:{op}")

    def _goto(self, view: _View, node_id: str) -> AgentDecision:
        return AgentDecision.invoke("navigate", target=view.station(node_id))

    def _place(self, state, view: _View, label: str, target: str) -> AgentDecision:
        item = view.item(label)
        held = item is not None and view.holder(item) == state.robot_id
        if view.needs_opening(target) and "open_container" in view.profile.skills and not held:
            if not view.reachable(target):
                return self._goto(view, target)
            return AgentDecision.invoke("open_container", target=target)
        if not held:
            return self._acquire(state, view, label)
        if not view.reachable(target):
            return self._goto(view, target)
        return AgentDecision.invoke("place", object=item, target=target)

    def _attr(self, state, view: _View, c: Mapping) -> AgentDecision:
        node = c["node"]
        via = c.get("via") or {}
        if c["key"] == "open" and c["value"] is True:
            if not view.reachable(node):
                return self._goto(view, node)
            return AgentDecision.invoke("open_container", target=node)
        if via.get("tool") == "pour":
            src = view.item(via["source"])
            if src is None or view.holder(src) != state.robot_id:
                return self._acquire(state, view, via["source"])
            if not view.reachable(node):
                return self._goto(view, node)
            return AgentDecision.invoke("pour", source=src, target=node)
        return AgentDecision.failure(f"unsupported_goal:attr:{c['key']}")

    def _handover(self, state, view: _View, item: str, label: str, partner: str,
                  role: str) -> AgentDecision:
        room = None
        for h in state.subtask.params.get("handovers", ()):
            if h.get("object") == label:
                room = h.get("room")
        if room is None:
            room = view.room()
        if view.room() != room:
            return AgentDecision.invoke("navigate", target=room)
        return AgentDecision.invoke("handover", object=item, partner=partner, role=role,
                                    token=state.rendezvous or "")

    # -------------------------------------------------------- locate/acquire

    def _detects(self, state, label: str) -> list:
        return [(i, r) for i, r in state.history
                if i.tool_id == "detect" and i.args.get("label") == label]

    def _acquire(self, state: AgentState, view: _View, label: str) -> AgentDecision:
        detects = self._detects(state, label)
        item = view.item(label)
        confirmed = bool(detects) and detects[-1][1].ok
        if not confirmed:
            if detects and detects[-1][1].reason == "not_found":
                return self._search(state, view, label)
            room = view.g.room_of(item) if item else None
            if room is None:
                room = (state.subtask.params.get("search") or {}).get(label)
            if room is None or room not in view.profile.motion_domain:
                return self._search(state, view, label)
            if view.room() != room:
                return AgentDecision.invoke("navigate", target=room)
            return AgentDecision.invoke("detect", label=label)
        if item is None:
            return AgentDecision.failure("lost")
        holder = view.holder(item)
        if holder is not None and holder != state.robot_id:
            return AgentDecision.failure(f"held_by:{holder}")
        if not view.reachable(item):
            return self._goto(view, item)
        return AgentDecision.invoke("grasp", object=item)

    def search_candidates(self, state: AgentState, view: _View, label: str) -> list[str]:
        """Unexplored fixtures that could hide ``label``, nearest room first."""
        detects = self._detects(state, label)
        explored = {i.location for i, _ in detects}
        failed = [i for i, r in detects if r.reason == "not_found"]
        origin = view.g.room_of(failed[0].location) if failed and failed[0].location in view.g \
            else view.room()
        out = []
        for nid, node in view.g.nodes.items():
            if node.kind != "object" or node.attributes.get("robot") \
                    or node.visibility == "removed" or nid in explored:
                continue
            if not SEARCH_AFFORDANCES & node.affordances:
                continue
            if view.holder(nid) is not None:
                continue
            room = view.g.room_of(nid)
            if room not in view.profile.motion_domain:
                continue
            out.append((view.room_distance(room, origin), nid))
        return [nid for _, nid in sorted(out)]

    def _search(self, state, view: _View, label: str) -> AgentDecision:
        cands = self.search_candidates(state, view, label)
        if not cands:
            return AgentDecision.escalate(3, f"no place left to search for {label}")
        c = cands[0]
        if view.at() != c:
            return AgentDecision.invoke("navigate", target=c)
        if view.needs_opening(c) and "open_container" in view.profile.skills:
            return AgentDecision.invoke("open_container", target=c)
        return AgentDecision.invoke("detect", label=label)


def select_tool(state: AgentState, graph: SceneGraph, profile: RobotProfile) -> AgentDecision:
    return RulePolicy().select_tool(state, graph, profile)


def recover(state: AgentState, failure: ToolResult, graph: SceneGraph,
            profile: RobotProfile) -> AgentDecision:
    """Recovery decision for a failed call; falls through to the goal logic."""
    policy = RulePolicy()
    view = _View(graph, state.robot_id, profile)
    decision = policy.recover(state, failure, view)
    return decision if decision is not None else policy._advance(state, view)


# ------------------------------------------------------------- rendezvous


class RendezvousHub:
    """Pairs giver and receiver invocations that share a token and object."""

    def __init__(self, skills: SkillLibrary, queue: EventQueue,
                 timeout: float = DEFAULT_RENDEZVOUS_TIMEOUT):
        self.skills = skills
        self.queue = queue
        self.timeout = timeout
        self._waiting: dict[tuple, tuple] = {}

    def arrive(self, inv: ToolInvocation, deliver: Callable[[ToolInvocation, ToolResult], None]):
        a = inv.args
        key = (a.get("token"), a.get("object"))
        other = self._waiting.get(key)
        if other is not None:
            o_inv, o_deliver, handle = other
            if o_inv.args.get("role") != a.get("role") and o_inv.robot_id == a.get("partner") \
                    and o_inv.args.get("partner") == inv.robot_id:
                del self._waiting[key]
                self.queue.cancel(handle)
                give, recv = (inv, o_inv) if a.get("role") == "give" else (o_inv, inv)
                callbacks = {inv.invocation_id: deliver, o_inv.invocation_id: o_deliver}

                def complete():
                    rg, rr = self.skills.finish_rendezvous(give, recv)
                    callbacks[give.invocation_id](give, rg)
                    callbacks[recv.invocation_id](recv, rr)

                self.queue.after(self.skills.duration(inv.tool_id), complete)
                return
            # a mismatched party on the same key: the newer one waits separately
            key = key + (inv.invocation_id,)

        def expire():
            if self._waiting.get(key, (None,))[0] is inv:
                del self._waiting[key]
                deliver(inv, self.skills.abort(inv, "rendezvous_timeout"))

        self._waiting[key] = (inv, deliver, self.queue.after(self.timeout, expire))


# ------------------------------------------------------------------ process


class AgentProcess:
    """Runs one agent on the event queue until it reaches a terminal decision."""

    def __init__(self, state: AgentState, memory: SharedMemory, skills: SkillLibrary,
                 queue: EventQueue, hub: RendezvousHub,
                 on_done: Callable[["AgentProcess", AgentDecision], None] | None = None,
                 policy: RulePolicy | None = None):
        self.state = state
        self.memory = memory
        self.skills = skills
        self.queue = queue
        self.hub = hub
        self.on_done = on_done
        self.policy = policy or RulePolicy()
        self.decisions: list[AgentDecision] = []
        self.outcome: AgentDecision | None = None

    def _log(self, payload: dict) -> None:
        payload = dict(payload, agent=self.state.agent_id, subtask=self.state.subtask.subtask_id,
                       robot=self.state.robot_id, attempt=self.state.attempt)
        self.memory.log.append("task_feedback", self.state.robot_id, payload)

    def start(self) -> None:
        self._log({"event": "agent_start", "token": self.state.rendezvous})
        self.queue.schedule(self.queue.clock.now, self._step)

    def _step(self) -> None:
        s = self.state
        profile = self.memory.registry.profile(s.robot_id)
        decision = self.policy.select_tool(s, self.memory.scene, profile)
        self.decisions.append(decision)
        if decision.terminal:
            self._finish(decision)
            return
        inv = self.skills.new_invocation(decision.tool, s.robot_id, decision.args,
                                         s.subtask.subtask_id, s.agent_id)
        rejected = self.skills.begin(inv)
        if rejected is not None:
            self._result(inv, rejected)
        elif self.skills.catalog.get(decision.tool).rendezvous:
            self.hub.arrive(inv, self._result)
        else:
            self.queue.after(self.skills.duration(decision.tool),
                             lambda: self._result(inv, self.skills.finish(inv)))

    def _result(self, inv: ToolInvocation, res: ToolResult) -> None:
        self.state.record(inv, res)
        self.queue.schedule(self.queue.clock.now, self._step)

    def _finish(self, decision: AgentDecision) -> None:
        self.outcome = decision
        goal = self.state.subtask.role_goal(self.state.robot_id)
        self._log({"event": "agent_end", "decision": decision.to_dict(),
                   "goal_held": goals.evaluate(goal, self.memory.scene),
                   "calls": len(self.state.history)})
        if self.on_done is not None:
            self.on_done(self, decision)

    def trace(self) -> dict:
        d = self.state.to_dict()
        d["decisions"] = [x.to_dict() for x in self.decisions]
        return d


def run_agents(states: list[AgentState], memory: SharedMemory, skills: SkillLibrary,
               queue: EventQueue, timeout: float = DEFAULT_RENDEZVOUS_TIMEOUT
               ) -> list[AgentProcess]:
    """Run agents to completion on ``queue`` (which must share the skills' clock)."""
    hub = RendezvousHub(skills, queue, timeout)
    procs = [AgentProcess(s, memory, skills, queue, hub) for s in states]
    for p in procs:
        p.start()
    while queue.step():
        pass
    return procs


def run_agent(state: AgentState, memory: SharedMemory, skills: SkillLibrary,
              queue: EventQueue, timeout: float = DEFAULT_RENDEZVOUS_TIMEOUT) -> AgentDecision:
    return run_agents([state], memory, skills, queue, timeout)[0].outcome
