"""Trace audit: checks a run's event log against the scheduler's safety rules.

The audit reads only events, so it can grade traces from the simulator, from a
live kernel's saved log, or from a scheduler fuzz run that has no agents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..scheduler import TRANSITIONS

TERMINAL = ("succeeded", "failed", "cancelled")
CATEGORIES = ("prerequisite", "exclusivity", "partial_collaboration", "transition", "honesty")


@dataclass
class AuditReport:
    violations: dict[str, list[str]] = field(
        default_factory=lambda: {c: [] for c in CATEGORIES})
    subtasks: int = 0
    dispatches: int = 0

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    def add(self, category: str, message: str) -> None:
        self.violations[category].append(message)

    def counts(self) -> dict[str, int]:
        return {c: len(v) for c, v in self.violations.items()}

    def to_dict(self) -> dict:
        return {"ok": self.ok, "subtasks": self.subtasks, "dispatches": self.dispatches,
                "violations": {c: list(v) for c, v in self.violations.items()}}


def _as_dicts(events: Iterable) -> list[dict]:
    out = []
    for e in events:
        out.append(e if isinstance(e, Mapping) else e.to_dict())
    return sorted(out, key=lambda e: e["seq"])


def audit_events(events: Iterable) -> AuditReport:
    """Check prerequisite order, robot exclusivity, barrier dispatch and honesty."""
    report = AuditReport()
    subtasks: dict[str, dict] = {}
    state: dict[str, str] = {}
    running_on: dict[str, str] = {}  # robot -> subtask in flight
    dispatched_at: dict[tuple, tuple] = {}  # (sid, attempt) -> (time, robots)
    starts: dict[tuple, list] = {}

    for e in _as_dicts(events):
        kind, p = e["kind"], e["payload"]
        if kind == "plan_issued":
            for s in p["graph"]["subtasks"]:
                subtasks[s["id"]] = s
                state[s["id"]] = "pending"
            continue
        if kind != "task_feedback":
            continue
        ev = p.get("event")
        if ev == "subtask":
            sid, new = p["subtask"], p["state"]
            old = state.get(sid)
            if sid not in subtasks:
                report.add("transition", f"{sid}: event for an unknown subtask")
                continue
            if new not in TRANSITIONS.get(old, ()):
                report.add("transition", f"{sid}: {old} -> {new} at seq {e['seq']}")
            state[sid] = new
            sub = subtasks[sid]
            if new == "dispatched":
                report.dispatches += 1
                for pre in sub["prerequisites"]:
                    if state.get(pre) != "succeeded":
                        report.add("prerequisite",
                                   f"{sid} dispatched while {pre} was {state.get(pre)}")
                robots = sorted(p.get("robots") or ())
                if robots != sorted(sub["assignees"]):
                    report.add("partial_collaboration",
                               f"{sid} dispatched to {robots}, assignees {sub['assignees']}")
                for rid in robots:
                    other = running_on.get(rid)
                    if other is not None and other != sid:
                        report.add("exclusivity", f"{rid} given {sid} while running {other}")
                    running_on[rid] = sid
                dispatched_at[(sid, p["attempt"])] = (e["time"], robots)
            elif new in TERMINAL:
                for rid, cur in list(running_on.items()):
                    if cur == sid:
                        del running_on[rid]
        elif ev == "agent_start":
            starts.setdefault((p["subtask"], p["attempt"]), []).append((e["time"], p["robot"]))
        elif ev == "agent_end":
            decision = p.get("decision", {})
            if decision.get("kind") == "declare_success" and not p.get("goal_held"):
                report.add("honesty", f"{p.get('agent')} declared success without its goal")

    for (sid, attempt), arrivals in sorted(starts.items()):
        d = dispatched_at.get((sid, attempt))
        if d is None:
            report.add("partial_collaboration", f"agent started for {sid}#{attempt} "
                                                "without a dispatch")
            continue
        times = {t for t, _ in arrivals}
        robots = sorted(r for _, r in arrivals)
        if robots != d[1] or len(times) != 1:
            report.add("partial_collaboration",
                       f"{sid}#{attempt} agents {robots} at {sorted(times)}, dispatched {d[1]}")
    report.subtasks = len(subtasks)
    return report


def audit_trace(trace) -> AuditReport:
    """Audit a :class:`RunTrace` (or its dict form)."""
    events = trace["events"] if isinstance(trace, Mapping) else trace.events
    return audit_events(events)
