"""Robot endpoint process for a live kernel.

Usage::

    python -m robofleet.endpoint --scenario restaurant --robot G1 --endpoint 127.0.0.1:7411

The endpoint registers its scenario profile, heartbeats, and runs one agent per
assignment with the same decision policy the simulator uses.
"""

from __future__ import annotations

import argparse
import logging
import sys
import threading

from .agent import ESCALATE, SUCCESS, AgentState, RulePolicy
from .bus import MONITOR_TOPIC, BusClient, cmd_topic
from .errors import EndpointUnavailableError, RobofleetError
from .memory.scene import SceneGraph
from .planner import Subtask, goals
from .planner.remote import parse_endpoint
from .sim.scenario import load_scenario
from .skills.executor import ToolInvocation, ToolResult

log = logging.getLogger(__name__)


class RobotEndpoint:
    def __init__(self, host: str, port: int, profile, battery: float = 1.0,
                 heartbeat_interval: float = 1.0, budget: int = 16):
        self.profile = profile
        self.robot_id = profile.robot_id
        self.client = BusClient(host, port, timeout=30.0)
        self.client.register(profile, battery)
        self.client.subscribe(cmd_topic(self.robot_id), self.robot_id)
        self.heartbeat_interval = heartbeat_interval
        self.budget = budget
        self.policy = RulePolicy()
        self._stop = threading.Event()
        self._seen: set[str] = set()
        threading.Thread(target=self._beat, daemon=True, name="heartbeat").start()

    def _beat(self) -> None:
        while not self._stop.wait(self.heartbeat_interval):
            try:
                self.client.heartbeat(self.robot_id)
            except RobofleetError:
                return

    def _scene(self) -> SceneGraph:
        return SceneGraph.from_dict(self.client.call("scene")["scene"])

    def run_assignment(self, a: dict) -> dict:
        sub = Subtask.from_dict(self.client.call("subtask", subtask=a["subtask"])["subtask"])
        state = AgentState(a["agent"], sub, self.robot_id, budget=self.budget,
                           rendezvous=a.get("token"), attempt=a["attempt"])
        base = {"agent": state.agent_id, "subtask": sub.subtask_id, "robot": self.robot_id,
                "attempt": state.attempt}
        self.client.call("log", robot=self.robot_id,
                         payload=dict(base, event="agent_start", token=state.rendezvous))
        while True:
            scene = self._scene()
            decision = self.policy.select_tool(state, scene, self.profile)
            if decision.terminal:
                break
            reply = self.client.call("invoke", robot=self.robot_id, tool=decision.tool,
                                     args=decision.args, subtask=sub.subtask_id,
                                     agent=state.agent_id)
            state.record(ToolInvocation.from_dict(reply["call"]),
                         ToolResult.from_dict(reply["result"]))
        scene = self._scene()
        self.client.call("log", robot=self.robot_id, payload=dict(
            base, event="agent_end", decision=decision.to_dict(), calls=len(state.history),
            goal_held=goals.evaluate(sub.role_goal(self.robot_id), scene)))
        return dict(base, type="completion", completion_id=state.agent_id,
                    status="succeeded" if decision.kind == SUCCESS else "failed",
                    reason=decision.reason, escalate=decision.kind == ESCALATE)

    def serve(self) -> None:
        while not self._stop.is_set():
            try:
                env = self.client.next_delivery(timeout=0.5)
            except TimeoutError:
                continue
            except EndpointUnavailableError:
                log.warning("%s lost the kernel connection", self.robot_id)
                return
            if env.payload.get("type") != "assignment" or env.msg_id in self._seen:
                continue
            self._seen.add(env.msg_id)
            done = self.run_assignment(dict(env.payload))
            self.client.publish(MONITOR_TOPIC, done, sender=self.robot_id)

    def stop(self) -> None:
        self._stop.set()
        self.client.close()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m robofleet.endpoint",
                                 description="Run one simulated robot endpoint.")
    ap.add_argument("--scenario", required=True, help="bundled scenario name or file path")
    ap.add_argument("--robot", required=True, help="robot id from the scenario")
    ap.add_argument("--endpoint", default="127.0.0.1:7411", help="kernel host:port")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        scenario = load_scenario(args.scenario)
        spec = scenario.robots[args.robot]
    except KeyError:
        print(f"error: robot {args.robot!r} is not in the scenario", file=sys.stderr)
        return 2
    except RobofleetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    host, port = parse_endpoint(args.endpoint)
    try:
        ep = RobotEndpoint(host, port, spec.profile, spec.battery)
    except RobofleetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    try:
        ep.serve()
    except KeyboardInterrupt:
        pass
    finally:
        ep.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
