"""Shared memory facade: scene graph, temporal log and robot registry."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .registry import RobotProfile, RobotRegistry, RobotState
from .scene import SceneGraph, LogicalClock
from .temporal import TemporalEvent, TemporalLog

DEFAULT_RECENT_EVENTS = 64


@dataclass(frozen=True)
class MemorySnapshot:
    scene: SceneGraph
    recent_events: tuple[TemporalEvent, ...]
    profiles: dict[str, RobotProfile]
    states: dict[str, RobotState]
    taken_at: float

    def dangling_references(self) -> list[str]:
        """Ids mentioned by the snapshot that do not resolve inside it."""
        problems = []
        nodes = self.scene.nodes
        for e in self.scene.edges:
            for end in (e.src, e.dst):
                if end not in nodes:
                    problems.append(f"edge endpoint {end}")
        if set(self.profiles) != set(self.states):
            problems.append("profiles and states disagree")
        for rid, prof in self.profiles.items():
            for room in prof.motion_domain:
                if nodes and room not in nodes:
                    problems.append(f"{rid} motion domain room {room}")
        return problems

    def to_dict(self) -> dict:
        return {
            "taken_at": self.taken_at,
            "scene": self.scene.to_dict(),
            "recent_events": [e.to_dict() for e in self.recent_events],
            "robots": [{"profile": self.profiles[r].to_dict(), "state": self.states[r].to_dict()}
                       for r in sorted(self.profiles)],
        }


class SharedMemory:
    """In-process store. All mutation goes through the three components."""

    def __init__(self, clock: Callable[[], float] | None = None):
        self.clock = clock or LogicalClock()
        self.log = TemporalLog(self.clock)
        self.scene = SceneGraph(self.clock)
        self.registry = RobotRegistry(self.log)

    def snapshot(self, recent: int = DEFAULT_RECENT_EVENTS) -> MemorySnapshot:
        # registry first: robots referenced by newer events may be absent from
        # older copies, never the reverse
        with self.registry._lock:
            profiles = self.registry.profiles()
            states = self.registry.states()
        return MemorySnapshot(self.scene.copy(), tuple(self.log.tail(recent)),
                              profiles, states, self.clock())

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        snap = self.snapshot(recent=0)
        (directory / "scene.json").write_text(
            json.dumps(snap.scene.to_dict(), indent=2, sort_keys=True))
        (directory / "registry.json").write_text(json.dumps(
            [{"profile": snap.profiles[r].to_dict(), "state": snap.states[r].to_dict()}
             for r in sorted(snap.profiles)], indent=2, sort_keys=True))
        self.log.dump(directory / "events.jsonl")
