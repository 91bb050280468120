"""TCP transport for the bus: 4-byte big-endian length prefix, then a JSON object.

Client frames carry an ``op``: ``register``, ``publish``, ``subscribe``,
``heartbeat`` or any kernel request op the server was given a handler for.
The server pushes ``{"op": "deliver", "envelope": ...}`` for subscriptions and
answers requests with ``{"op": "reply", "rid": ..., "ok": bool, ...}``.
"""

from __future__ import annotations

import itertools
import json
import logging
import queue
import socket
import socketserver
import struct
import threading
from typing import Any, Callable, Mapping

from ..errors import BusError, EndpointUnavailableError, RobofleetError
from ..memory.registry import RobotProfile
from .core import Envelope, InProcessBus, cmd_topic, latency_stats, status_topic

log = logging.getLogger(__name__)

HEADER = struct.Struct(">I")
MAX_FRAME = 16 * 1024 * 1024


def send_frame(sock: socket.socket, obj: Mapping) -> None:
    data = json.dumps(obj, sort_keys=True).encode()
    sock.sendall(HEADER.pack(len(data)) + data)


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed")
        buf.extend(chunk)
    return bytes(buf)


def recv_frame(sock: socket.socket) -> dict:
    (size,) = HEADER.unpack(_read_exact(sock, HEADER.size))
    if size > MAX_FRAME:
        raise BusError(f"frame of {size} bytes exceeds limit")
    return json.loads(_read_exact(sock, size))


class _Handler(socketserver.BaseRequestHandler):
    def setup(self):
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.send_lock = threading.Lock()
        self.subs = []

    def push(self, obj):
        with self.send_lock:
            send_frame(self.request, obj)

    def handle(self):
        server: BusServer = self.server.owner
        while True:
            try:
                frame = recv_frame(self.request)
            except (ConnectionError, OSError, ValueError):
                break
            rid = frame.get("rid")
            try:
                result = server.dispatch(frame, self)
                reply = {"op": "reply", "rid": rid, "ok": True}
                reply.update(result or {})
            except RobofleetError as exc:
                reply = {"op": "reply", "rid": rid, "ok": False,
                         "error": type(exc).__name__, "detail": str(exc)}
            except (KeyError, TypeError, ValueError) as exc:
                reply = {"op": "reply", "rid": rid, "ok": False,
                         "error": "BadRequest", "detail": str(exc)}
            try:
                self.push(reply)
            except OSError:
                break

    def finish(self):
        for sub in self.subs:
            self.server.owner.bus.unsubscribe(sub)


class _Server(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True


class BusServer:
    """Expose an :class:`InProcessBus` and kernel request handlers over TCP."""

    def __init__(self, bus: InProcessBus, host: str = "127.0.0.1", port: int = 0,
                 handlers: Mapping[str, Callable[[dict], dict]] | None = None):
        self.bus = bus
        self.handlers = dict(handlers or {})
        try:
            self._server = _Server((host, port), _Handler)
        except OSError as exc:
            raise EndpointUnavailableError(f"cannot bind {host}:{port}: {exc}") from None
        self._server.owner = self
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def dispatch(self, frame: dict, conn: _Handler) -> dict | None:
        op = frame["op"]
        if op == "register":
            profile = RobotProfile.from_dict(frame["profile"])
            self.bus.register(profile, frame.get("battery", 1.0))
            return {"robot_id": profile.robot_id}
        if op == "heartbeat":
            self.bus.heartbeat(frame["robot_id"])
            return None
        if op == "publish":
            mid = self.bus.publish(frame["topic"], frame.get("payload"),
                                   sender=frame.get("sender", "remote"),
                                   correlation=frame.get("correlation"),
                                   msg_id=frame.get("msg_id"))
            return {"msg_id": mid}
        if op == "subscribe":
            sub = self.bus.subscribe(
                frame["topic"], frame.get("subscriber", "remote"),
                callback=lambda env: conn.push({"op": "deliver", "envelope": env.to_dict()}))
            conn.subs.append(sub)
            return None
        handler = self.handlers.get(op)
        if handler is None:
            raise BusError(f"unknown op {op!r}")
        return handler(frame)

    def start(self) -> "BusServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True,
                                        name="bus-server")
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._thread = threading.current_thread()
        self._server.serve_forever()

    def stop(self) -> None:
        if self._thread is not None:
            self._server.shutdown()
            self._thread = None
        self._server.server_close()


class BusClient:
    """Blocking client with a reader thread that splits replies from deliveries."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise EndpointUnavailableError(f"{host}:{port}: {exc}") from None
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock.settimeout(None)
        self.timeout = timeout
        self.deliveries: queue.Queue = queue.Queue()
        self._replies: dict[int, queue.Queue] = {}
        self._rids = itertools.count(1)
        self._lock = threading.Lock()
        self._reader = threading.Thread(target=self._read, daemon=True, name="bus-client")
        self._reader.start()

    def _read(self):
        while True:
            try:
                frame = recv_frame(self.sock)
            except (ConnectionError, OSError, ValueError):
                for q in list(self._replies.values()):
                    q.put(None)
                self.deliveries.put(None)
                return
            if frame.get("op") == "deliver":
                self.deliveries.put(Envelope.from_dict(frame["envelope"]))
            else:
                q = self._replies.get(frame.get("rid"))
                if q is not None:
                    q.put(frame)

    def call(self, op: str, **fields: Any) -> dict:
        rid = next(self._rids)
        q: queue.Queue = queue.Queue(maxsize=1)
        self._replies[rid] = q
        try:
            with self._lock:
                send_frame(self.sock, {"op": op, "rid": rid, **fields})
            try:
                reply = q.get(timeout=self.timeout)
            except queue.Empty:
                raise EndpointUnavailableError(f"no reply to {op}") from None
        except OSError as exc:
            raise EndpointUnavailableError(str(exc)) from None
        finally:
            self._replies.pop(rid, None)
        if reply is None:
            raise EndpointUnavailableError("connection closed")
        if not reply.get("ok"):
            raise BusError(f"{reply.get('error')}: {reply.get('detail')}")
        return reply

    def register(self, profile: RobotProfile, battery: float = 1.0) -> dict:
        return self.call("register", profile=profile.to_dict(), battery=battery)

    def publish(self, topic: str, payload: Mapping | None = None, sender: str = "remote",
                correlation: str | None = None) -> str:
        return self.call("publish", topic=topic, payload=dict(payload or {}), sender=sender,
                         correlation=correlation)["msg_id"]

    def subscribe(self, topic: str, subscriber: str = "remote") -> None:
        self.call("subscribe", topic=topic, subscriber=subscriber)

    def heartbeat(self, robot_id: str) -> None:
        self.call("heartbeat", robot_id=robot_id)

    def next_delivery(self, timeout: float | None = None) -> Envelope:
        try:
            env = self.deliveries.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no delivery") from None
        if env is None:
            raise EndpointUnavailableError("connection closed")
        return env

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class RemoteEchoEndpoint:
    """Robot endpoint connected over TCP that acks each command."""

    def __init__(self, host: str, port: int, profile: RobotProfile):
        self.robot_id = profile.robot_id
        self.client = BusClient(host, port)
        self.client.register(profile)
        self.client.subscribe(cmd_topic(self.robot_id), self.robot_id)
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name=f"remote-echo-{self.robot_id}")
        self._thread.start()

    def _run(self):
        while True:
            try:
                env = self.client.next_delivery()
            except EndpointUnavailableError:
                return
            # fire-and-forget frame so the ack does not wait on its own reply
            try:
                with self.client._lock:
                    send_frame(self.client.sock, {
                        "op": "publish", "rid": 0, "topic": status_topic(self.robot_id),
                        "payload": {"ack": env.msg_id}, "sender": self.robot_id,
                        "correlation": env.msg_id})
            except OSError:
                return

    def stop(self):
        self.client.close()


def measure_socket_latency(n: int, host: str, port: int, robot_id: str,
                           timeout: float = 1.0) -> dict[str, float]:
    """Round trips from a TCP kernel client through the server to a TCP endpoint."""
    import time

    if n <= 0:
        raise ValueError("measure_latency needs n >= 1")
    probe = BusClient(host, port, timeout=timeout)
    try:
        probe.subscribe(status_topic(robot_id), "latency-probe")
        samples = []
        for i in range(n):
            t0 = time.perf_counter()
            mid = probe.publish(cmd_topic(robot_id), {"op": "echo", "i": i},
                                sender="latency-probe")
            while True:
                try:
                    env = probe.next_delivery(timeout=timeout)
                except TimeoutError:
                    raise EndpointUnavailableError(f"{robot_id} did not answer") from None
                if env.correlation == mid:
                    break
            samples.append(time.perf_counter() - t0)
    finally:
        probe.close()
    return latency_stats(samples)
