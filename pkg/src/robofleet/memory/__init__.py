from .registry import EMBODIMENTS, HAND_CAPACITY, RobotProfile, RobotRegistry, RobotState
from .scene import (
    LogicalClock,
    Match,
    Observation,
    ObservedNode,
    SceneEdge,
    SceneGraph,
    SceneNode,
    check_forest,
    query_spatial,
)
from .shared import MemorySnapshot, SharedMemory
from .temporal import EVENT_KINDS, TemporalEvent, TemporalLog

__all__ = [
    "EMBODIMENTS", "EVENT_KINDS", "HAND_CAPACITY", "LogicalClock", "Match", "MemorySnapshot",
    "Observation", "ObservedNode", "RobotProfile", "RobotRegistry", "RobotState",
    "SceneEdge", "SceneGraph", "SceneNode", "SharedMemory", "TemporalEvent", "TemporalLog",
    "check_forest", "query_spatial",
]
