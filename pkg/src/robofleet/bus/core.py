"""In-process publish-subscribe bus with registration sessions and heartbeats.

Topic grammar (see ``docs/topics.md``)::

    robot/<robot_id>/cmd      kernel -> robot commands
    robot/<robot_id>/status   robot -> kernel replies and status
    monitor/events            completions and liveness notices
    kernel/submit             task submissions

Delivery is at-least-once: a forced duplicate carries the same ``msg_id``,
so subscribers created with ``dedupe=True`` see each message once.
"""

from __future__ import annotations

import itertools
import logging
import queue
import re
import statistics
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping

from ..errors import BusError, EndpointUnavailableError, NoSessionError
from ..memory.registry import RobotProfile, RobotRegistry

log = logging.getLogger(__name__)

TOPIC_RE = re.compile(r"^[A-Za-z0-9_.\-]+(/[A-Za-z0-9_.\-]+)*$")
ROBOT_TOPIC_RE = re.compile(r"^robot/([^/]+)/(cmd|status)$")
MONITOR_TOPIC = "monitor/events"
SUBMIT_TOPIC = "kernel/submit"

HEARTBEAT_INTERVAL = 1.0
MISSED_BEATS = 3


def cmd_topic(robot_id: str) -> str:
    return f"robot/{robot_id}/cmd"


def status_topic(robot_id: str) -> str:
    return f"robot/{robot_id}/status"


def check_topic(topic: str) -> str:
    if not isinstance(topic, str) or not topic or not TOPIC_RE.match(topic):
        raise BusError(f"invalid topic {topic!r}")
    return topic


@dataclass(frozen=True)
class Envelope:
    msg_id: str
    topic: str
    sender: str
    sent_at: float
    payload: Mapping[str, Any] = field(default_factory=dict)
    correlation: str | None = None

    def __post_init__(self):
        if not self.msg_id:
            raise BusError("msg_id must be non-empty")
        check_topic(self.topic)

    def to_dict(self) -> dict:
        return {"msg_id": self.msg_id, "topic": self.topic, "sender": self.sender,
                "sent_at": self.sent_at, "payload": dict(self.payload),
                "correlation": self.correlation}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Envelope":
        return cls(data["msg_id"], data["topic"], data.get("sender", ""),
                   data.get("sent_at", 0.0), data.get("payload", {}), data.get("correlation"))


class Subscription:
    """One ordered consumer stream for one topic."""

    def __init__(self, topic: str, subscriber: str, dedupe: bool = False,
                 callback: Callable[[Envelope], None] | None = None):
        self.topic = topic
        self.subscriber = subscriber
        self.dedupe = dedupe
        self.callback = callback
        self._q: queue.Queue = queue.Queue()
        self._seen: set[str] = set()
        self._lock = threading.Lock()
        self.received = 0

    def deliver(self, env: Envelope) -> None:
        with self._lock:
            self.received += 1
            if self.dedupe:
                if env.msg_id in self._seen:
                    return
                self._seen.add(env.msg_id)
            if self.callback is not None:
                self.callback(env)
            else:
                self._q.put(env)

    def get(self, timeout: float | None = None) -> Envelope:
        try:
            return self._q.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"no message on {self.topic} within {timeout}s") from None

    def drain(self) -> list[Envelope]:
        out = []
        while True:
            try:
                out.append(self._q.get_nowait())
            except queue.Empty:
                return out

    def __iter__(self) -> Iterator[Envelope]:
        return iter(self.drain())


@dataclass
class Session:
    robot_id: str
    subscriptions: frozenset
    liveness: float
    profile: RobotProfile
    online: bool = True


class InProcessBus:
    """Topic bus shared by the kernel and robot endpoints in one process."""

    def __init__(self, clock: Callable[[], float] | None = None,
                 registry: RobotRegistry | None = None,
                 heartbeat_interval: float = HEARTBEAT_INTERVAL, missed_beats: int = MISSED_BEATS):
        self.clock = clock or time.monotonic
        self.registry = registry
        self.heartbeat_interval = heartbeat_interval
        self.missed_beats = missed_beats
        self.sessions: dict[str, Session] = {}
        self._subs: dict[str, list[Subscription]] = {}
        self._ids = itertools.count(1)
        self._lock = threading.RLock()
        self._duplicate_next = 0
        self.on_offline: list[Callable[[str], None]] = []
        self.kernel_status: dict[str, Subscription] = {}

    # ------------------------------------------------------------ sessions

    @property
    def window(self) -> float:
        return self.heartbeat_interval * self.missed_beats

    def register(self, profile: RobotProfile, battery: float = 1.0, position=None) -> Session:
        """Registration handshake: session, topic wiring and registry entry."""
        rid = profile.robot_id
        with self._lock:
            if self.registry is not None:
                self.registry.register_robot(profile, battery, position)
            old = self.sessions.get(rid)
            if old is not None:
                if old.profile != profile:
                    raise BusError(f"{rid} re-registered with a different profile")
                old.liveness = self.clock()
                if not old.online:
                    old.online = True
                    if self.registry is not None:
                        self.registry.update_robot_state(rid, status="idle")
                return old
            session = Session(rid, frozenset({cmd_topic(rid)}), self.clock(), profile)
            self.sessions[rid] = session
            if rid not in self.kernel_status:
                self.kernel_status[rid] = self._subscribe(status_topic(rid), "kernel")
            return session

    def heartbeat(self, robot_id: str) -> None:
        with self._lock:
            session = self.sessions.get(robot_id)
            if session is None:
                raise NoSessionError(robot_id)
            session.liveness = self.clock()

    def liveness_sweep(self, now: float | None = None) -> list[str]:
        """Mark robots whose heartbeats stopped for a full window as offline."""
        now = self.clock() if now is None else now
        dropped = []
        with self._lock:
            for rid, session in sorted(self.sessions.items()):
                if session.online and now - session.liveness > self.window:
                    session.online = False
                    dropped.append(rid)
        for rid in dropped:
            log.info("robot %s missed %d heartbeats, marking offline", rid, self.missed_beats)
            if self.registry is not None and rid in self.registry:
                self.registry.update_robot_state(rid, status="offline")
            self.publish(MONITOR_TOPIC, {"type": "offline", "robot": rid}, sender="bus")
            for cb in self.on_offline:
                cb(rid)
        return dropped

    # ------------------------------------------------------------ pub/sub

    def _subscribe(self, topic, subscriber, dedupe=False, callback=None) -> Subscription:
        sub = Subscription(check_topic(topic), subscriber, dedupe, callback)
        self._subs.setdefault(topic, []).append(sub)
        return sub

    def subscribe(self, topic: str, subscriber: str = "kernel", dedupe: bool = False,
                  callback: Callable[[Envelope], None] | None = None) -> Subscription:
        """Subscribe to ``topic``. Robot command topics need a registered session."""
        with self._lock:
            m = ROBOT_TOPIC_RE.match(topic)
            if m and m.group(2) == "cmd":
                session = self.sessions.get(m.group(1))
                if session is None:
                    raise NoSessionError(f"no session for {m.group(1)}")
            return self._subscribe(topic, subscriber, dedupe, callback)

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            subs = self._subs.get(sub.topic, [])
            if sub in subs:
                subs.remove(sub)

    def force_duplicates(self, count: int = 1) -> None:
        """Deliver the next ``count`` messages twice (at-least-once testing)."""
        self._duplicate_next += count

    def publish(self, topic: str, payload: Mapping | None = None, sender: str = "kernel",
                correlation: str | None = None, msg_id: str | None = None) -> str:
        check_topic(topic)
        with self._lock:
            mid = msg_id or f"m{next(self._ids):08d}"
            env = Envelope(mid, topic, sender, self.clock(), dict(payload or {}), correlation)
            m = ROBOT_TOPIC_RE.match(topic)
            if m and m.group(2) == "cmd" and m.group(1) not in self.sessions:
                subs = []
            else:
                subs = list(self._subs.get(topic, ()))
            copies = 1
            if self._duplicate_next > 0:
                self._duplicate_next -= 1
                copies = 2
            # deliver under the lock so concurrent publishers keep per-sender order
            for _ in range(copies):
                for sub in subs:
                    sub.deliver(env)
        return mid

    # ------------------------------------------------------------ latency

    def measure_latency(self, n: int, robot_id: str | None = None, timeout: float = 1.0
                        ) -> dict[str, float]:
        """Time ``n`` command -> ack round trips to a registered echo endpoint."""
        if n <= 0:
            raise ValueError("measure_latency needs n >= 1")
        with self._lock:
            candidates = [r for r, s in sorted(self.sessions.items())
                          if s.online and (robot_id is None or r == robot_id)]
        if not candidates:
            raise EndpointUnavailableError(robot_id or "no registered endpoint")
        rid = candidates[0]
        inbox = self.subscribe(status_topic(rid), "latency-probe")
        samples = []
        try:
            for i in range(n):
                t0 = time.perf_counter()
                mid = self.publish(cmd_topic(rid), {"op": "echo", "i": i}, sender="latency-probe")
                while True:
                    try:
                        env = inbox.get(timeout=timeout)
                    except TimeoutError:
                        raise EndpointUnavailableError(f"{rid} did not answer") from None
                    if env.correlation == mid:
                        break
                samples.append(time.perf_counter() - t0)
        finally:
            self.unsubscribe(inbox)
        return latency_stats(samples)


def latency_stats(samples: list[float]) -> dict[str, float]:
    ordered = sorted(samples)
    p99 = ordered[min(len(ordered) - 1, max(0, int(round(0.99 * len(ordered))) - 1))]
    return {"n": len(samples), "mean": statistics.fmean(samples),
            "median": statistics.median(samples), "p99": p99, "max": ordered[-1]}


class EchoEndpoint:
    """Robot endpoint that acknowledges every command on its status topic."""

    def __init__(self, bus: InProcessBus, profile: RobotProfile, threaded: bool = True):
        self.bus = bus
        self.robot_id = profile.robot_id
        self.session = bus.register(profile)
        self._stop = threading.Event()
        self.handled = 0
        if threaded:
            self.inbox = bus.subscribe(cmd_topic(self.robot_id), self.robot_id)
            self._thread = threading.Thread(target=self._run, daemon=True,
                                            name=f"echo-{self.robot_id}")
            self._thread.start()
        else:
            self.inbox = bus.subscribe(cmd_topic(self.robot_id), self.robot_id,
                                       callback=self._ack)
            self._thread = None

    def _ack(self, env: Envelope) -> None:
        self.handled += 1
        self.bus.publish(status_topic(self.robot_id), {"ack": env.msg_id}, sender=self.robot_id,
                         correlation=env.msg_id)

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                env = self.inbox.get(timeout=0.05)
            except TimeoutError:
                continue
            self._ack(env)

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=1.0)
