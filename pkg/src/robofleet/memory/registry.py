"""Robot profiles (static capabilities) and live robot state."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from ..errors import RegistrationConflictError, RobotStateError, UnknownRobotError
from .scene import _as_position
from .temporal import TemporalLog

EMBODIMENTS = ("single_arm", "dual_arm", "wheeled", "humanoid")
STATUSES = ("idle", "busy", "offline")

# how many objects each embodiment can carry at once
HAND_CAPACITY = {"single_arm": 1, "dual_arm": 2, "humanoid": 2, "wheeled": 0}


@dataclass(frozen=True)
class RobotProfile:
    robot_id: str
    embodiment: str
    skills: frozenset
    motion_domain: frozenset
    home_position: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.embodiment not in EMBODIMENTS:
            raise ValueError(f"unknown embodiment {self.embodiment!r}")
        object.__setattr__(self, "skills", frozenset(self.skills))
        object.__setattr__(self, "motion_domain", frozenset(self.motion_domain))
        object.__setattr__(self, "home_position", _as_position(self.home_position))
        if not self.skills:
            raise ValueError(f"robot {self.robot_id!r} has no skills")
        if not self.motion_domain:
            raise ValueError(f"robot {self.robot_id!r} has an empty motion domain")

    @property
    def capacity(self) -> int:
        return HAND_CAPACITY[self.embodiment]

    def to_dict(self) -> dict:
        return {"robot_id": self.robot_id, "embodiment": self.embodiment,
                "skills": sorted(self.skills), "motion_domain": sorted(self.motion_domain),
                "home_position": list(self.home_position)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "RobotProfile":
        return cls(data["robot_id"], data["embodiment"], frozenset(data["skills"]),
                   frozenset(data["motion_domain"]),
                   tuple(data.get("home_position", (0.0, 0.0, 0.0))))


@dataclass(frozen=True)
class RobotState:
    robot_id: str
    status: str = "idle"
    battery: float = 1.0
    joint_summary: Mapping[str, float] = field(default_factory=dict)
    current_subtask: str | None = None
    position: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise RobotStateError(f"unknown status {self.status!r}")
        if not 0.0 <= self.battery <= 1.0:
            raise RobotStateError(f"battery {self.battery} outside [0, 1]")
        if (self.status == "busy") != (self.current_subtask is not None):
            raise RobotStateError("status=busy requires current_subtask and vice versa")
        object.__setattr__(self, "position", _as_position(self.position))
        object.__setattr__(self, "joint_summary", dict(self.joint_summary))

    def to_dict(self) -> dict:
        return {"robot_id": self.robot_id, "status": self.status, "battery": self.battery,
                "joint_summary": dict(sorted(self.joint_summary.items())),
                "current_subtask": self.current_subtask, "position": list(self.position)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "RobotState":
        return cls(data["robot_id"], data.get("status", "idle"), data.get("battery", 1.0),
                   data.get("joint_summary", {}), data.get("current_subtask"),
                   tuple(data.get("position", (0.0, 0.0, 0.0))))


class RobotRegistry:
    def __init__(self, log: TemporalLog | None = None):
        self._profiles: dict[str, RobotProfile] = {}
        self._states: dict[str, RobotState] = {}
        self._lock = threading.RLock()
        self.log = log

    def __contains__(self, robot_id) -> bool:
        return robot_id in self._profiles

    def __len__(self) -> int:
        return len(self._profiles)

    def ids(self) -> list[str]:
        return sorted(self._profiles)

    def profile(self, robot_id: str) -> RobotProfile:
        try:
            return self._profiles[robot_id]
        except KeyError:
            raise UnknownRobotError(robot_id) from None

    def state(self, robot_id: str) -> RobotState:
        try:
            return self._states[robot_id]
        except KeyError:
            raise UnknownRobotError(robot_id) from None

    def profiles(self) -> dict[str, RobotProfile]:
        with self._lock:
            return dict(self._profiles)

    def states(self) -> dict[str, RobotState]:
        with self._lock:
            return dict(self._states)

    def register_robot(self, profile: RobotProfile, battery: float = 1.0,
                       position=None) -> str:
        """Add a robot. Re-registering an identical profile is a no-op."""
        with self._lock:
            old = self._profiles.get(profile.robot_id)
            if old is not None:
                if old == profile:
                    return profile.robot_id
                if old.embodiment != profile.embodiment:
                    raise RegistrationConflictError(
                        f"{profile.robot_id} already registered as {old.embodiment}")
                raise RegistrationConflictError(
                    f"{profile.robot_id} already registered with a different profile")
            state = RobotState(profile.robot_id, "idle", battery,
                               position=position if position is not None else profile.home_position)
            self._profiles[profile.robot_id] = profile
            self._states[profile.robot_id] = state
        if self.log is not None:
            self.log.append("state_change", profile.robot_id,
                            {"change": "registered", "profile": profile.to_dict(),
                             "status": "idle"})
        return profile.robot_id

    def update_robot_state(self, robot_id: str, **patch: Any) -> RobotState:
        with self._lock:
            old = self.state(robot_id)
            if patch.get("status") in ("idle", "offline") and "current_subtask" not in patch:
                patch["current_subtask"] = None
            new = replace(old, **patch)
            self._states[robot_id] = new
        if self.log is not None and new.status != old.status:
            self.log.append("state_change", robot_id,
                            {"change": "status", "from": old.status, "to": new.status,
                             "subtask": new.current_subtask})
        return new
