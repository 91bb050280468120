"""Append-only temporal log of feedback, tool calls and state changes."""

from __future__ import annotations

import copy
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Iterable, Iterator, Mapping

EVENT_KINDS = ("task_feedback", "tool_call", "tool_result", "state_change",
               "plan_issued", "escalation")


def _freeze(value):
    if isinstance(value, Mapping):
        return MappingProxyType({k: _freeze(v) for k, v in value.items()})
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    return value


def thaw(value):
    """Turn a frozen payload back into plain dicts and lists."""
    if isinstance(value, Mapping):
        return {k: thaw(v) for k, v in value.items()}
    if isinstance(value, tuple):
        return [thaw(v) for v in value]
    return value


@dataclass(frozen=True)
class TemporalEvent:
    seq: int
    time: float
    kind: str
    subject: str
    payload: Mapping[str, Any]

    def to_dict(self) -> dict:
        return {"seq": self.seq, "time": self.time, "kind": self.kind,
                "subject": self.subject, "payload": thaw(self.payload)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "TemporalEvent":
        return cls(data["seq"], data["time"], data["kind"], data["subject"],
                   _freeze(copy.deepcopy(dict(data["payload"]))))


def dumps_event(event: TemporalEvent) -> str:
    return json.dumps(event.to_dict(), sort_keys=True, separators=(",", ":"))


class TemporalLog:
    """Gapless, totally ordered event log. Safe for concurrent appenders."""

    def __init__(self, clock: Callable[[], float] | None = None):
        self._events: list[TemporalEvent] = []
        self._lock = threading.Lock()
        self.clock = clock or (lambda: float(len(self._events) + 1))
        self._listeners: list[Callable[[TemporalEvent], None]] = []

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[TemporalEvent]:
        return iter(list(self._events))

    @property
    def last_seq(self) -> int:
        return len(self._events)

    def append(self, kind: str, subject: str, payload: Mapping | None = None,
               time: float | None = None) -> int:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        frozen = _freeze(copy.deepcopy(dict(payload or {})))
        with self._lock:
            seq = len(self._events) + 1
            event = TemporalEvent(seq, self.clock() if time is None else time,
                                  kind, str(subject), frozen)
            self._events.append(event)
        for listener in list(self._listeners):
            listener(event)
        return seq

    def subscribe(self, listener: Callable[[TemporalEvent], None]) -> None:
        self._listeners.append(listener)

    def events(self, kind: str | None = None, subject: str | None = None,
               since: int = 0) -> list[TemporalEvent]:
        return [e for e in self._events[since:]
                if (kind is None or e.kind == kind) and (subject is None or e.subject == subject)]

    def tail(self, n: int) -> list[TemporalEvent]:
        return list(self._events[-n:]) if n > 0 else []

    def invocation_pair(self, invocation_id: str) -> tuple[TemporalEvent | None, TemporalEvent | None]:
        call = result = None
        for e in self._events:
            if e.payload.get("invocation_id") == invocation_id:
                if e.kind == "tool_call":
                    call = e
                elif e.kind == "tool_result":
                    result = e
        return call, result

    # persistence: one JSON object per line

    def dump(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for event in self._events:
                fh.write(dumps_event(event) + "\n")

    def dumps(self) -> str:
        return "".join(dumps_event(e) + "\n" for e in self._events)

    @classmethod
    def load(cls, path: str | Path) -> "TemporalLog":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.replay(json.loads(line) for line in fh if line.strip())

    @classmethod
    def replay(cls, records: Iterable[Mapping]) -> "TemporalLog":
        log = cls()
        for rec in records:
            event = TemporalEvent.from_dict(rec)
            if event.seq != len(log._events) + 1:
                raise ValueError(f"gap in temporal log at seq {event.seq}")
            log._events.append(event)
        return log
