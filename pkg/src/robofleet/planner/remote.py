"""Remote planner client and the fallback wrapper used by the kernel.

The transport is one request per connection: the client writes the rendered
prompt as UTF-8, half-closes the socket and reads the response until EOF.
"""

from __future__ import annotations

import logging
import socket
import threading

from ..errors import MalformedResponseError, PlanValidationError, PlannerError, \
    PlannerUnavailableError
from .prompts import render_prompt
from .response import parse_plan_response
from .types import PlannerInput, ReasoningTrace, SubtaskGraph

log = logging.getLogger(__name__)


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


def request(endpoint: str, text: str, timeout: float) -> str:
    """Send ``text`` and return the full reply. Raises PlannerUnavailableError."""
    host, port = parse_endpoint(endpoint)
    try:
        with socket.create_connection((host, port), timeout=timeout) as sock:
            sock.settimeout(timeout)
            sock.sendall(text.encode())
            sock.shutdown(socket.SHUT_WR)
            chunks = []
            while True:
                chunk = sock.recv(65536)
                if not chunk:
                    break
                chunks.append(chunk)
    except (OSError, socket.timeout) as exc:
        raise PlannerUnavailableError(f"{endpoint}: {exc}") from None
    return b"".join(chunks).decode(errors="replace")


class RemotePlanner:
    """Planner contract over a text socket. Reads only the given input."""

    def __init__(self, endpoint: str, timeout: float = 5.0, registry=None):
        parse_endpoint(endpoint)
        self.endpoint = endpoint
        self.timeout = timeout
        self.registry = registry
        self._inflight: set[str] = set()
        self._lock = threading.Lock()

    def plan(self, inp: PlannerInput, graph_id: str | None = None
             ) -> tuple[ReasoningTrace, SubtaskGraph]:
        task_id = inp.task.task_id
        with self._lock:
            if task_id in self._inflight:
                raise PlannerError(f"a request for {task_id} is already in flight")
            self._inflight.add(task_id)
        try:
            reply = request(self.endpoint, render_prompt(inp, "decomposition"), self.timeout)
            registry = self.registry if self.registry is not None else inp.robot_states
            return parse_plan_response(reply, inp.task, registry, inp.skill_catalog, graph_id)
        finally:
            with self._lock:
                self._inflight.discard(task_id)


class FallbackPlanner:
    """Try ``primary``; on an unreachable endpoint or a bad reply use ``fallback``.

    Each fallback appends an ``escalation`` event to ``log``.
    """

    def __init__(self, primary, fallback, log_=None):
        self.primary = primary
        self.fallback = fallback
        self.log = log_

    def plan(self, inp: PlannerInput, graph_id: str | None = None):
        try:
            return self.primary.plan(inp, graph_id)
        except (PlannerUnavailableError, MalformedResponseError, PlanValidationError) as exc:
            log.warning("remote planner failed for %s, using fallback: %s", inp.task.task_id, exc)
            if self.log is not None:
                self.log.append("escalation", inp.task.task_id,
                                {"level": "planner", "reason": type(exc).__name__,
                                 "detail": str(exc)})
            return self.fallback.plan(inp, graph_id)
