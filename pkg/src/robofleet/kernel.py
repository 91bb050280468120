"""Live kernel: memory, planner and scheduler behind the TCP bus.

Robot endpoint processes (``python -m robofleet.endpoint``) register over the
socket transport, receive assignments on ``robot/<id>/cmd`` and run their agent
loop locally. Tool calls come back to the kernel as ``invoke`` requests because
the kernel owns the simulated world. Completions arrive on ``monitor/events``.
"""

from __future__ import annotations

import logging
import threading
import time
from typing import Mapping

from .bus import MONITOR_TOPIC, BusServer, InProcessBus, cmd_topic
from .config import Config
from .errors import AssigneeOfflineError, SchemaError
from .memory import SharedMemory
from .planner import FallbackPlanner, GlobalTask, RemotePlanner, RuleBasedPlanner, \
    compose_context, goals
from .scheduler import Monitor
from .sim.clock import WallClock
from .sim.harness import prune_satisfied
from .sim.scenario import Scenario
from .skills import SkillLibrary

log = logging.getLogger(__name__)

PUMP_INTERVAL = 0.02
MIN_RENDEZVOUS_WAIT = 5.0  # real seconds, covers network round trips


class _Meeting:
    def __init__(self, inv):
        self.inv = inv
        self.done = threading.Event()
        self.result = None


class Kernel:
    """Long-running kernel serving one scenario's world."""

    def __init__(self, scenario: Scenario, config: Config | None = None,
                 time_scale: float = 0.0):
        self.scenario = scenario
        self.config = config or Config()
        self.time_scale = time_scale
        self.clock = WallClock()
        self.memory = SharedMemory(self.clock)
        self.world = scenario.build_world()
        scenario.seed_memory(self.memory, self.world)
        self.skills = SkillLibrary(scenario.catalog, self.world, self.memory,
                                   scenario.injections, self.clock)
        self.bus = InProcessBus(self.clock, self.memory.registry,
                                self.config.heartbeat_interval, self.config.missed_beats)
        rules = RuleBasedPlanner(scenario.templates, scenario.object_defaults)
        if self.config.planner_endpoint:
            self.planner = FallbackPlanner(
                RemotePlanner(self.config.planner_endpoint, self.config.planner_timeout,
                              self.memory.registry), rules, self.memory.log)
        else:
            self.planner = rules
        self.monitor = Monitor(self.memory, self.config.retry_limit, self.config.max_replans,
                               replanner=self._replan, verifier=self._verify)
        self.bus.on_offline.append(self.monitor.robot_offline)
        self.bus.subscribe(MONITOR_TOPIC, "kernel", callback=self._on_event)
        self._world_lock = threading.RLock()
        self._meetings: dict[tuple, _Meeting] = {}
        self._tasks = 0
        self._stop = threading.Event()
        self.server: BusServer | None = None

    # ---------------------------------------------------------------- planning

    def _verify(self, subtask) -> bool:
        return goals.evaluate(subtask.goal, self.memory.scene)

    def _replan(self, rec, esc):
        if rec.graph.task is None:
            return None
        inp = compose_context(self.memory.snapshot(), rec.graph.task, self.config.context_scope)
        _, graph = self.planner.plan(inp, f"{rec.root}-r{rec.generation + 1}")
        return prune_satisfied(graph, self.memory.scene)

    def submit(self, instruction: str) -> str:
        if not isinstance(instruction, str) or not instruction.strip():
            raise SchemaError("instruction must be a non-empty string", "instruction")
        with self._world_lock:
            self._tasks += 1
            task = GlobalTask(f"k{self._tasks}", instruction, self.clock())
            inp = compose_context(self.memory.snapshot(), task, self.config.context_scope)
            _, graph = self.planner.plan(inp)
            return self.monitor.admit(graph)

    # ------------------------------------------------------------ bus handlers

    def _on_event(self, env) -> None:
        if env.payload.get("type") == "completion":
            self.monitor.submit(env.payload)

    def _h_submit(self, frame: Mapping) -> dict:
        # planner errors travel by class name so clients can map them to exit codes
        return {"graph_id": self.submit(frame.get("instruction", ""))}

    def _h_status(self, frame: Mapping) -> dict:
        with self._world_lock:
            status = self.monitor.status()
            status["registry"] = {rid: st.to_dict()
                                  for rid, st in sorted(self.memory.registry.states().items())}
            return {"status": status}

    def _h_scene(self, frame: Mapping) -> dict:
        with self._world_lock:
            return {"scene": self.memory.scene.to_dict()}

    def _h_subtask(self, frame: Mapping) -> dict:
        return {"subtask": self.monitor.subtask(frame["subtask"]).to_dict()}

    def _h_log(self, frame: Mapping) -> dict:
        self.memory.log.append("task_feedback", frame["robot"], dict(frame["payload"]))
        return {}

    def _h_invoke(self, frame: Mapping) -> dict:
        robot, tool, args = frame["robot"], frame["tool"], dict(frame["args"])
        with self._world_lock:
            inv = self.skills.new_invocation(tool, robot, args, frame.get("subtask"),
                                             frame.get("agent"))
            rejected = self.skills.begin(inv)
            if rejected is not None:
                return {"call": inv.to_dict(), "result": rejected.to_dict()}
            rendezvous = self.skills.catalog.get(tool).rendezvous
        if rendezvous:
            return self._meet(inv)
        if self.time_scale:
            time.sleep(self.skills.duration(tool) * self.time_scale)
        with self._world_lock:
            res = self.skills.finish(inv)
        return {"call": inv.to_dict(), "result": res.to_dict()}

    def _meet(self, inv) -> dict:
        key = (inv.args.get("token"), inv.args.get("object"))
        with self._world_lock:
            other = self._meetings.pop(key, None)
            if other is None:
                mine = self._meetings[key] = _Meeting(inv)
            else:
                give, recv = (inv, other.inv) if inv.args.get("role") == "give" \
                    else (other.inv, inv)
                rg, rr = self.skills.finish_rendezvous(give, recv)
                results = {give.invocation_id: rg, recv.invocation_id: rr}
                other.result = results[other.inv.invocation_id]
                other.done.set()
                return {"call": inv.to_dict(), "result": results[inv.invocation_id].to_dict()}
        if not mine.done.wait(max(self.config.rendezvous_timeout * self.time_scale,
                                  MIN_RENDEZVOUS_WAIT)):
            with self._world_lock:
                if self._meetings.get(key) is mine:
                    del self._meetings[key]
                    res = self.skills.abort(inv, "rendezvous_timeout")
                    return {"call": inv.to_dict(), "result": res.to_dict()}
            mine.done.wait()
        return {"call": inv.to_dict(), "result": mine.result.to_dict()}

    # ------------------------------------------------------------------ loop

    def pump(self) -> None:
        with self._world_lock:
            self.bus.liveness_sweep()
            self.monitor.process_intake()
            for sid in self.monitor.ready_set():
                try:
                    assignments = self.monitor.dispatch(sid)
                except AssigneeOfflineError:
                    continue
                if not assignments:
                    continue
                self.monitor.mark_running(sid)
                for a in assignments:
                    self.bus.publish(cmd_topic(a.robot_id), dict(a.to_dict(), type="assignment"))

    def start(self, host: str, port: int) -> tuple[str, int]:
        handlers = {"submit": self._h_submit, "status": self._h_status, "scene": self._h_scene,
                    "subtask": self._h_subtask, "invoke": self._h_invoke, "log": self._h_log}
        self.server = BusServer(self.bus, host, port, handlers).start()
        self._thread = threading.Thread(target=self._loop, daemon=True, name="kernel-pump")
        self._thread.start()
        log.info("kernel serving %s on %s:%d", self.scenario.name, *self.server.address)
        return self.server.address

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                self.pump()
            except Exception:  # keep serving; the error is in the log
                log.exception("kernel pump failed")
            self._stop.wait(PUMP_INTERVAL)

    def stop(self) -> None:
        self._stop.set()
        if self.server is not None:
            self.server.stop()
