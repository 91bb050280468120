"""Message bus: in-process pub/sub, robot sessions and a TCP transport."""

from .core import (HEARTBEAT_INTERVAL, MISSED_BEATS, MONITOR_TOPIC, SUBMIT_TOPIC, EchoEndpoint,
                   Envelope, InProcessBus, Session, Subscription, check_topic, cmd_topic,
                   latency_stats, status_topic)
from .wire import (BusClient, BusServer, RemoteEchoEndpoint, measure_socket_latency, recv_frame,
                   send_frame)

__all__ = [
    "HEARTBEAT_INTERVAL", "MISSED_BEATS", "MONITOR_TOPIC", "SUBMIT_TOPIC", "EchoEndpoint",
    "Envelope", "InProcessBus", "Session", "Subscription", "check_topic", "cmd_topic",
    "latency_stats", "status_topic", "BusClient", "BusServer", "RemoteEchoEndpoint",
    "measure_socket_latency", "recv_frame", "send_frame",
]
