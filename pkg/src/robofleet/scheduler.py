"""The Monitor: admits subtask graphs, dispatches ready subtasks, tracks their
lifecycle and escalates repeated failures to replanning.

Lifecycle::

    pending -> ready -> dispatched -> running -> succeeded | failed
    failed -> ready          (retry, while attempt < retry_limit)
    pending | ready -> cancelled   (graph escalated)

Feedback levels: agents retry a tool (level 1) and re-select tools (level 2)
on their own; the Monitor retries whole subtasks and, once ``retry_limit``
attempts have failed, asks for a replacement plan (level 3).
"""

from __future__ import annotations

import collections
import logging
import threading
from dataclasses import dataclass
from typing import Callable, Mapping

from .errors import (
    AssigneeOfflineError,
    DuplicateGraphError,
    InvalidTransitionError,
    NotReadyError,
    UnknownSubtaskError,
)
from .memory.shared import SharedMemory
from .planner.types import Subtask, SubtaskGraph

log = logging.getLogger(__name__)

STATES = ("pending", "ready", "dispatched", "running", "succeeded", "failed", "cancelled")
TRANSITIONS = {
    "pending": {"ready", "cancelled"},
    "ready": {"dispatched", "cancelled"},
    "dispatched": {"running", "failed"},
    "running": {"succeeded", "failed"},
    "failed": {"ready"},
    "succeeded": set(),
    "cancelled": set(),
}
IN_FLIGHT = ("dispatched", "running")

DEFAULT_RETRY_LIMIT = 2
DEFAULT_MAX_REPLANS = 2


@dataclass
class SubtaskLifecycle:
    subtask_id: str
    state: str = "pending"
    attempt: int = 1
    assigned_agents: tuple = ()
    started: float | None = None
    ended: float | None = None
    reason: str | None = None

    def to_dict(self) -> dict:
        return {"id": self.subtask_id, "state": self.state, "attempt": self.attempt,
                "agents": list(self.assigned_agents), "started": self.started,
                "ended": self.ended, "reason": self.reason}


@dataclass(frozen=True)
class Assignment:
    graph_id: str
    subtask_id: str
    robot_id: str
    agent_id: str
    attempt: int
    token: str | None = None

    def to_dict(self) -> dict:
        return {"graph": self.graph_id, "subtask": self.subtask_id, "robot": self.robot_id,
                "agent": self.agent_id, "attempt": self.attempt, "token": self.token}


@dataclass(frozen=True)
class Outcome:
    status: str
    reason: str | None = None
    escalate: bool = False

    def __post_init__(self):
        if self.status not in ("succeeded", "failed"):
            raise ValueError(f"outcome must be succeeded or failed, not {self.status!r}")

    @classmethod
    def success(cls) -> "Outcome":
        return cls("succeeded")

    @classmethod
    def failure(cls, reason: str, escalate: bool = False) -> "Outcome":
        return cls("failed", reason, escalate)


@dataclass(frozen=True)
class Escalation:
    graph_id: str
    subtask_id: str
    reason: str | None


@dataclass
class GraphRecord:
    graph: SubtaskGraph
    order: int
    lifecycles: dict[str, SubtaskLifecycle]
    status: str = "active"
    generation: int = 0
    root: str = ""
    replaces: str | None = None
    replaced_by: str | None = None
    escalation: Escalation | None = None

    def in_flight(self) -> list[str]:
        return sorted(s for s, lc in self.lifecycles.items() if lc.state in IN_FLIGHT)


class Monitor:
    """Scheduler state plus the transitions that act on it.

    ``replanner(record, escalation)`` returns a replacement graph or None.
    ``verifier(subtask)`` reports whether the subtask's goal holds in memory.
    """

    def __init__(self, memory: SharedMemory, retry_limit: int = DEFAULT_RETRY_LIMIT,
                 max_replans: int = DEFAULT_MAX_REPLANS,
                 replanner: Callable[[GraphRecord, Escalation], SubtaskGraph | None] | None = None,
                 verifier: Callable[[Subtask], bool] | None = None):
        if retry_limit < 1:
            raise ValueError("retry_limit must be at least 1")
        self.memory = memory
        self.retry_limit = retry_limit
        self.max_replans = max_replans
        self.replanner = replanner
        self.verifier = verifier
        self.graphs: dict[str, GraphRecord] = {}
        self.robot_queue: dict[str, collections.deque] = {}
        self._owner: dict[str, str] = {}
        self._reports: dict[str, dict[str, Outcome]] = {}
        self._intake: collections.deque = collections.deque()
        self._seen_completions: set[str] = set()
        self._lock = threading.RLock()
        self.replans = 0

    # ---------------------------------------------------------------- helpers

    def _now(self) -> float:
        return self.memory.clock()

    def _record(self, sid: str) -> GraphRecord:
        try:
            return self.graphs[self._owner[sid]]
        except KeyError:
            raise UnknownSubtaskError(sid) from None

    def subtask(self, sid: str) -> Subtask:
        return self._record(sid).graph.subtasks[sid]

    def lifecycle(self, sid: str) -> SubtaskLifecycle:
        return self._record(sid).lifecycles[sid]

    def _set(self, sid: str, state: str, reason: str | None = None, robots=None) -> None:
        rec = self._record(sid)
        lc = rec.lifecycles[sid]
        if state not in TRANSITIONS[lc.state]:
            raise InvalidTransitionError(f"{sid}: {lc.state} -> {state}")
        lc.state = state
        lc.reason = reason
        now = self._now()
        if state == "running":
            lc.started = now
            lc.ended = None
        elif state in ("succeeded", "failed", "cancelled"):
            lc.ended = now
        payload = {"event": "subtask", "subtask": sid, "state": state, "attempt": lc.attempt}
        if robots is not None:
            payload["robots"] = list(robots)
        if reason is not None:
            payload["reason"] = reason
        self.memory.log.append("task_feedback", rec.graph.graph_id, payload, now)

    def _free(self, sid: str) -> None:
        reg = self.memory.registry
        for rid in self.subtask(sid).assignees:
            q = self.robot_queue.get(rid)
            if q and sid in q:
                q.remove(sid)
            if rid in reg and reg.state(rid).current_subtask == sid:
                status = reg.state(rid).status
                if status == "busy":
                    reg.update_robot_state(rid, status="idle")
                else:
                    reg.update_robot_state(rid, current_subtask=None)

    # -------------------------------------------------------------- admission

    def admit(self, graph: SubtaskGraph, replaces: str | None = None) -> str:
        """Track ``graph``; prerequisite-free subtasks become ready."""
        with self._lock:
            gid = graph.graph_id
            if gid in self.graphs:
                raise DuplicateGraphError(gid)
            for sid in graph.subtasks:
                if sid in self._owner:
                    raise DuplicateGraphError(f"subtask id {sid} already tracked")
            generation, root = 0, gid
            if replaces is not None and replaces in self.graphs:
                old = self.graphs[replaces]
                generation, root = old.generation + 1, old.root
                old.replaced_by = gid
            rec = GraphRecord(graph, len(self.graphs),
                              {sid: SubtaskLifecycle(sid) for sid in sorted(graph.subtasks)},
                              generation=generation, root=root, replaces=replaces)
            self.graphs[gid] = rec
            for sid in graph.subtasks:
                self._owner[sid] = gid
            self.memory.log.append("plan_issued", gid,
                                   {"graph": graph.to_dict(), "replaces": replaces},
                                   self._now())
            for s in graph.order():
                if not s.prerequisites:
                    self._set(s.subtask_id, "ready")
            self._check_complete(rec)
            return gid

    def _check_complete(self, rec: GraphRecord) -> None:
        if rec.status == "active" and all(lc.state == "succeeded"
                                          for lc in rec.lifecycles.values()):
            rec.status = "completed"
            self.memory.log.append("task_feedback", rec.graph.graph_id,
                                   {"event": "graph", "status": "completed"}, self._now())

    # ---------------------------------------------------------------- readiness

    def ready_set(self) -> list[str]:
        """Ready subtasks whose prerequisites all succeeded, admission order then id."""
        with self._lock:
            out = []
            for rec in sorted(self.graphs.values(), key=lambda r: r.order):
                for sid in sorted(rec.lifecycles):
                    lc = rec.lifecycles[sid]
                    if lc.state != "ready":
                        continue
                    pre = rec.graph.subtasks[sid].prerequisites
                    if all(rec.lifecycles[p].state == "succeeded" for p in pre):
                        out.append(sid)
            return out

    # ---------------------------------------------------------------- dispatch

    def dispatch(self, sid: str) -> list[Assignment]:
        """Start ``sid`` on all its assignees at once, or not at all.

        Returns an empty list when some assignee is busy. Raises
        AssigneeOfflineError (after logging) when one is offline.
        """
        with self._lock:
            rec = self._record(sid)
            lc = rec.lifecycles[sid]
            if lc.state != "ready" or sid not in self.ready_set():
                raise NotReadyError(f"{sid} is {lc.state}")
            sub = rec.graph.subtasks[sid]
            reg = self.memory.registry
            for rid in sub.assignees:
                if reg.state(rid).status == "offline":
                    self.memory.log.append("state_change", rid,
                                           {"change": "dispatch_blocked", "subtask": sid,
                                            "reason": "offline"}, self._now())
                    raise AssigneeOfflineError(f"{rid} is offline; {sid} stays ready")
            if any(reg.state(rid).status != "idle" for rid in sub.assignees):
                return []
            token = f"rdv:{sid}#{lc.attempt}" if sub.kind == "collaboration" else None
            out = []
            for rid in sub.assignees:
                reg.update_robot_state(rid, status="busy", current_subtask=sid)
                self.robot_queue.setdefault(rid, collections.deque()).append(sid)
                out.append(Assignment(rec.graph.graph_id, sid, rid, f"{sid}#{lc.attempt}@{rid}",
                                      lc.attempt, token))
            lc.assigned_agents = tuple(a.agent_id for a in out)
            self._reports[sid] = {}
            self._set(sid, "dispatched", robots=sub.assignees)
            return out

    def mark_running(self, sid: str) -> None:
        with self._lock:
            self._set(sid, "running", robots=self.subtask(sid).assignees)

    # -------------------------------------------------------------- completion

    def report(self, sid: str, robot_id: str, outcome: Outcome, attempt: int | None = None):
        """One assignee's result. Completes the subtask once every assignee reported.

        Returns what :meth:`on_completion` returns, or None while waiting.
        """
        with self._lock:
            lc = self.lifecycle(sid)
            sub = self.subtask(sid)
            if lc.state != "running" or (attempt is not None and attempt != lc.attempt):
                log.debug("ignoring stale report for %s from %s", sid, robot_id)
                return None
            if robot_id not in sub.assignees:
                raise UnknownSubtaskError(f"{robot_id} is not assigned to {sid}")
            reports = self._reports.setdefault(sid, {})
            reports[robot_id] = outcome
            if set(reports) != set(sub.assignees):
                return None
            failed = [reports[r] for r in sub.assignees if reports[r].status == "failed"]
            if failed:
                combined = Outcome.failure(failed[0].reason or "failed",
                                           any(o.escalate for o in failed))
            elif self.verifier is not None and not self.verifier(sub):
                combined = Outcome.failure("goal_unmet")
            else:
                combined = Outcome.success()
            return self.on_completion(sid, combined)

    def on_completion(self, sid: str, outcome: Outcome):
        """Apply a subtask result.

        Success returns the newly ready subtask ids. Failure returns ``[]``
        when the subtask will be retried and an :class:`Escalation` when the
        retry limit is reached (or the agent escalated).
        """
        with self._lock:
            rec = self._record(sid)
            lc = rec.lifecycles[sid]
            if lc.state != "running":
                raise InvalidTransitionError(f"completion for {sid} in state {lc.state}")
            self._reports.pop(sid, None)
            robots = self.subtask(sid).assignees
            if outcome.status == "succeeded":
                self._set(sid, "succeeded", robots=robots)
                self._free(sid)
                newly = []
                if rec.status == "active":
                    for dep in rec.graph.dependents(sid):
                        dlc = rec.lifecycles[dep]
                        pre = rec.graph.subtasks[dep].prerequisites
                        if dlc.state == "pending" and all(
                                rec.lifecycles[p].state == "succeeded" for p in pre):
                            self._set(dep, "ready")
                            newly.append(dep)
                    self._check_complete(rec)
                self._maybe_replan(rec)
                return newly

            self._set(sid, "failed", outcome.reason, robots=robots)
            self._free(sid)
            if rec.status == "active" and lc.attempt < self.retry_limit and not outcome.escalate:
                lc.attempt += 1
                self._set(sid, "ready")
                return []
            if rec.status != "active":
                self._maybe_replan(rec)
                return []
            return self._escalate(rec, sid, outcome.reason)

    def robot_offline(self, robot_id: str):
        """Fail the subtask a robot was running when it dropped off."""
        with self._lock:
            reg = self.memory.registry
            if robot_id in reg and reg.state(robot_id).status != "offline":
                reg.update_robot_state(robot_id, status="offline")
            for sid in list(self.robot_queue.get(robot_id, ())):
                lc = self.lifecycle(sid)
                if lc.state == "dispatched":
                    self._set(sid, "running", robots=self.subtask(sid).assignees)
                if lc.state == "running":
                    return self.on_completion(sid, Outcome.failure("offline"))
            return None

    # -------------------------------------------------------------- escalation

    def _escalate(self, rec: GraphRecord, sid: str, reason: str | None) -> Escalation:
        esc = Escalation(rec.graph.graph_id, sid, reason)
        rec.status = "escalated"
        rec.escalation = esc
        self.memory.log.append("escalation", rec.graph.graph_id,
                               {"level": 3, "subtask": sid, "reason": reason,
                                "attempts": rec.lifecycles[sid].attempt}, self._now())
        for other, lc in sorted(rec.lifecycles.items()):
            if lc.state in ("pending", "ready"):
                self._set(other, "cancelled", "escalated")
        self._maybe_replan(rec)
        return esc

    def _maybe_replan(self, rec: GraphRecord) -> None:
        """Replan an escalated graph once nothing of it is still in flight."""
        if rec.status != "escalated" or rec.in_flight():
            return
        gid = rec.graph.graph_id
        if rec.generation >= self.max_replans or self.replanner is None:
            rec.status = "failed"
            self.memory.log.append("escalation", gid,
                                   {"level": 3, "replan": False,
                                    "reason": "replan limit reached" if self.replanner
                                    else "no replanner"}, self._now())
            return
        rec.status = "replanning"
        try:
            new = self.replanner(rec, rec.escalation)
        except Exception as exc:  # planner errors end the chain, they do not crash the kernel
            log.warning("replanning %s failed: %s", gid, exc)
            new = None
            self.memory.log.append("escalation", gid, {"level": 3, "replan": False,
                                                       "reason": f"{type(exc).__name__}: {exc}"},
                                   self._now())
        if new is None:
            rec.status = "failed"
            return
        self.replans += 1
        rec.status = "replanned"
        self.admit(new, replaces=gid)

    # ------------------------------------------------------------------ intake

    def submit(self, message: Mapping) -> None:
        """Queue a completion message; safe to call from any thread."""
        self._intake.append(dict(message))

    def process_intake(self) -> list:
        """Apply queued completion messages in arrival order, once each."""
        results = []
        while True:
            try:
                msg = self._intake.popleft()
            except IndexError:
                return results
            cid = msg.get("completion_id")
            with self._lock:
                if cid is not None:
                    if cid in self._seen_completions:
                        continue
                    self._seen_completions.add(cid)
                outcome = Outcome(msg["status"], msg.get("reason"), bool(msg.get("escalate")))
                results.append(self.report(msg["subtask"], msg["robot"], outcome,
                                           msg.get("attempt")))

    # ----------------------------------------------------------------- status

    def graph_status(self, gid: str) -> str:
        return self.graphs[gid].status

    def final_status(self, gid: str) -> str:
        """Status at the end of the replan chain starting at ``gid``."""
        rec = self.graphs[gid]
        while rec.replaced_by is not None:
            rec = self.graphs[rec.replaced_by]
        return rec.status

    def quiescent(self) -> bool:
        return not any(rec.in_flight() for rec in self.graphs.values())

    def status(self) -> dict:
        with self._lock:
            return {"graphs": [
                {"graph_id": gid, "status": rec.status, "replaces": rec.replaces,
                 "replaced_by": rec.replaced_by,
                 "subtasks": [dict(rec.lifecycles[s.subtask_id].to_dict(), label=s.label,
                                   description=s.description)
                              for s in rec.graph.order()]}
                for gid, rec in sorted(self.graphs.items(), key=lambda kv: kv[1].order)],
                "robots": {rid: list(q) for rid, q in sorted(self.robot_queue.items()) if q}}
