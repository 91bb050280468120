"""Discrete-event simulation of the full pipeline: plan, admit, schedule, act.

All components share one :class:`VirtualClock`. Robot endpoints are bus
subscribers on ``robot/<id>/cmd``; a command starts an agent process, and the
agent's terminal decision travels back on ``monitor/events`` into the
scheduler's intake, so duplicates are filtered exactly as in a live kernel.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from ..agent import (DEFAULT_BUDGET, DEFAULT_RENDEZVOUS_TIMEOUT, ESCALATE, SUCCESS,
                     AgentDecision, AgentProcess,
                     AgentState, RendezvousHub)
from ..bus import MONITOR_TOPIC, InProcessBus, cmd_topic
from ..errors import AssigneeOfflineError, PlannerError, SchemaError
from ..memory import SharedMemory
from ..planner import GlobalTask, RuleBasedPlanner, SubtaskGraph, compose_context, goals
from ..planner.types import compute_depths
from ..scheduler import DEFAULT_MAX_REPLANS, DEFAULT_RETRY_LIMIT, Escalation, GraphRecord, \
    Monitor
from ..skills import FailureInjection, SkillLibrary
from ..skills.executor import call_signature
from .clock import EventQueue, VirtualClock
from .scenario import Scenario, parse_scenario

log = logging.getLogger(__name__)

TRACE_FORMAT = 1


@dataclass
class RunOptions:
    seed: int | None = None
    retry_limit: int = DEFAULT_RETRY_LIMIT
    max_replans: int = DEFAULT_MAX_REPLANS
    budget: int = DEFAULT_BUDGET
    rendezvous_timeout: float = DEFAULT_RENDEZVOUS_TIMEOUT
    context_scope: str = "reachable"
    duplicate_completions: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunTrace:
    """Everything needed to audit, grade and byte-exactly replay a run."""

    scenario: dict
    tasks: list[dict]
    seed: int
    options: dict
    injections: list[dict]
    events: list[dict]
    outcomes: dict[str, dict]
    task_outcomes: list[dict]
    makespan: float
    final_world: dict
    final_memory: dict
    agents: list[dict]
    format: int = TRACE_FORMAT

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunTrace":
        names = {f.name for f in dataclasses.fields(cls)}
        missing = names - set(data) - {"format"}
        if missing:
            raise SchemaError(f"trace is missing {sorted(missing)}", "trace")
        return cls(**{k: data[k] for k in names if k in data})

    @classmethod
    def load(cls, path: str | Path) -> "RunTrace":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise SchemaError(f"cannot read trace: {exc}", str(path)) from None
        if not isinstance(data, dict):
            raise SchemaError("trace must be an object", str(path))
        return cls.from_dict(data)

    # convenience views

    def succeeded(self) -> bool:
        return bool(self.task_outcomes) and all(t["status"] == "completed"
                                                for t in self.task_outcomes)

    def tool_calls(self, task_id: str | None = None) -> list[dict]:
        """Tool calls in start order as ``{robot, tool, signature, status}``."""
        graphs = None
        if task_id is not None:
            graphs = set()
            for t in self.task_outcomes:
                if t["task_id"] == task_id:
                    graphs.update(t["graphs"])
        calls = []
        for a in self.agents:
            if graphs is not None and a["subtask"].rsplit("/", 1)[0] not in graphs:
                continue
            for h in a["history"]:
                c = h["call"]
                calls.append({"robot": c["robot"], "tool": c["tool"],
                              "signature": c["signature"], "status": h["result"]["status"],
                              "started": c["started"], "id": c["invocation_id"]})
        calls.sort(key=lambda c: (c["started"], c["id"]))
        return [{k: c[k] for k in ("robot", "tool", "signature", "status")} for c in calls]


def _mix_seed(run_seed: int, inj: FailureInjection) -> FailureInjection:
    return dataclasses.replace(inj, seed=(run_seed * 1_000_003 + inj.seed) % (2 ** 31))


def prune_satisfied(graph: SubtaskGraph, scene) -> SubtaskGraph:
    """Drop subtasks whose goals already hold and relabel depths."""
    keep = {sid: s for sid, s in graph.subtasks.items() if not goals.evaluate(s.goal, scene)}
    prereqs = {sid: [p for p in s.prerequisites if p in keep] for sid, s in keep.items()}
    depths = compute_depths(prereqs)
    subs = {sid: dataclasses.replace(s, prerequisites=frozenset(prereqs[sid]), depth=depths[sid])
            for sid, s in keep.items()}
    return SubtaskGraph(graph.graph_id, subs, graph.task)


class Simulation:
    """One scenario instance: world, memory, bus, scheduler and robot endpoints."""

    def __init__(self, scenario: Scenario, options: RunOptions | None = None,
                 injections: Iterable[FailureInjection] | None = None, planner=None):
        self.scenario = scenario
        self.options = options or RunOptions()
        self.seed = scenario.seed if self.options.seed is None else self.options.seed
        base = scenario.injections if injections is None else list(injections)
        self.injections = [_mix_seed(self.seed, inj) for inj in base]

        self.clock = VirtualClock()
        self.queue = EventQueue(self.clock)
        self.world = scenario.build_world()
        self.memory = SharedMemory(self.clock)
        self.bus = InProcessBus(self.clock, self.memory.registry)
        self.skills = SkillLibrary(scenario.catalog, self.world, self.memory, self.injections,
                                   self.clock)
        self.hub = RendezvousHub(self.skills, self.queue, self.options.rendezvous_timeout)
        self.planner = planner or RuleBasedPlanner(scenario.templates, scenario.object_defaults)
        self.monitor = Monitor(self.memory, self.options.retry_limit, self.options.max_replans,
                               replanner=self._replan, verifier=self._verify)
        self.bus.on_offline.append(self.monitor.robot_offline)
        self.tasks: dict[str, GlobalTask] = {}
        self.task_graph: dict[str, str] = {}
        self.infeasible: dict[str, str] = {}
        self.processes: list[AgentProcess] = []

        for rid, spec in sorted(scenario.robots.items()):
            self.bus.register(spec.profile, spec.battery)
            self.bus.subscribe(cmd_topic(rid), rid, dedupe=True, callback=self._on_command)
        self.bus.subscribe(MONITOR_TOPIC, "kernel", callback=self._on_monitor_event)
        scenario.seed_memory(self.memory, self.world)

    # ------------------------------------------------------------ kernel side

    def _verify(self, subtask) -> bool:
        return goals.evaluate(subtask.goal, self.memory.scene)

    def _replan(self, rec: GraphRecord, esc: Escalation) -> SubtaskGraph | None:
        task = rec.graph.task
        if task is None:
            return None
        inp = compose_context(self.memory.snapshot(), task, self.options.context_scope)
        gid = f"{rec.root}-r{rec.generation + 1}"
        _, graph = self.planner.plan(inp, gid)
        return prune_satisfied(graph, self.memory.scene)

    def submit(self, task: GlobalTask) -> str:
        """Plan and admit ``task``. Raises PlannerError when it cannot be planned."""
        self.tasks[task.task_id] = task
        inp = compose_context(self.memory.snapshot(), task, self.options.context_scope)
        _, graph = self.planner.plan(inp)
        gid = self.monitor.admit(graph)
        self.task_graph[task.task_id] = gid
        return gid

    def _on_monitor_event(self, env) -> None:
        if env.payload.get("type") == "completion":
            self.monitor.submit(env.payload)

    def _pump(self) -> None:
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

    # ------------------------------------------------------------- robot side

    def _on_command(self, env) -> None:
        p = env.payload
        if p.get("type") != "assignment":
            return
        robot = env.topic.split("/")[1]
        state = AgentState(p["agent"], self.monitor.subtask(p["subtask"]), robot,
                           budget=self.options.budget, rendezvous=p.get("token"),
                           attempt=p["attempt"])
        proc = AgentProcess(state, self.memory, self.skills, self.queue, self.hub,
                            on_done=self._on_agent_done)
        self.processes.append(proc)
        proc.start()

    def _on_agent_done(self, proc: AgentProcess, decision: AgentDecision) -> None:
        s = proc.state
        payload = {"type": "completion", "completion_id": s.agent_id,
                   "subtask": s.subtask.subtask_id, "robot": s.robot_id, "attempt": s.attempt,
                   "status": "succeeded" if decision.kind == SUCCESS else "failed",
                   "reason": decision.reason, "escalate": decision.kind == ESCALATE}
        if self.options.duplicate_completions:
            self.bus.force_duplicates(1)
        self.bus.publish(MONITOR_TOPIC, payload, sender=s.robot_id, msg_id=f"done:{s.agent_id}")

    # ------------------------------------------------------------------ drive

    def run_until_quiescent(self) -> None:
        while True:
            self._pump()
            if not self.queue.step():
                self._pump()
                if not len(self.queue):
                    return

    def run(self, tasks: Iterable[GlobalTask]) -> RunTrace:
        tasks = list(tasks)
        for task in tasks:
            try:
                self.submit(task)
            except PlannerError as exc:
                self.infeasible[task.task_id] = f"{type(exc).__name__}: {exc}"
                log.info("task %s is infeasible: %s", task.task_id, exc)
                self.memory.log.append("task_feedback", task.task_id,
                                       {"event": "task", "status": "infeasible",
                                        "error": type(exc).__name__, "detail": str(exc)})
        self.run_until_quiescent()
        return self.trace(tasks)

    # ------------------------------------------------------------------ trace

    def _chain(self, gid: str) -> list[str]:
        out = [gid]
        while self.monitor.graphs[out[-1]].replaced_by is not None:
            out.append(self.monitor.graphs[out[-1]].replaced_by)
        return out

    def trace(self, tasks: list[GlobalTask]) -> RunTrace:
        outcomes = {}
        for gid, rec in sorted(self.monitor.graphs.items()):
            for sid, lc in sorted(rec.lifecycles.items()):
                outcomes[sid] = lc.to_dict()
        task_outcomes = []
        for task in tasks:
            entry: dict[str, Any] = {"task_id": task.task_id, "instruction": task.instruction}
            if task.task_id in self.infeasible:
                entry.update(status="infeasible", error=self.infeasible[task.task_id],
                             graphs=[], replans=0)
            else:
                chain = self._chain(self.task_graph[task.task_id])
                entry.update(status=self.monitor.graphs[chain[-1]].status, graphs=chain,
                             replans=len(chain) - 1)
            task_outcomes.append(entry)
        ends = [lc["ended"] for lc in outcomes.values() if lc.get("ended") is not None]
        return RunTrace(
            scenario=self.scenario.raw,
            tasks=[t.to_dict() for t in tasks],
            seed=self.seed,
            options=self.options.to_dict(),
            injections=[inj.to_dict() for inj in self.injections],
            events=[e.to_dict() for e in self.memory.log],
            outcomes=outcomes,
            task_outcomes=task_outcomes,
            makespan=max(ends, default=0.0),
            final_world=self.world.graph.to_dict(),
            final_memory=self.memory.scene.to_dict(),
            agents=[_agent_record(p) for p in self.processes],
        )


def _agent_record(proc: AgentProcess) -> dict:
    d = proc.trace()
    for h in d["history"]:
        h["call"]["signature"] = call_signature(h["call"]["tool"], h["call"]["args"])
    d["outcome"] = proc.outcome.to_dict() if proc.outcome else None
    return d


def run(scenario: Scenario, tasks: Iterable[GlobalTask | str], options: RunOptions | None = None,
        injections: Iterable[FailureInjection] | None = None, planner=None) -> RunTrace:
    """Run ``tasks`` on a fresh instance of ``scenario`` until quiescence."""
    ts = []
    for i, t in enumerate(tasks, 1):
        ts.append(t if isinstance(t, GlobalTask) else GlobalTask(f"t{i}", t))
    return Simulation(scenario, options, injections, planner).run(ts)


def replay(trace: RunTrace) -> RunTrace:
    """Re-execute a trace's inputs. The result is byte-identical for a valid trace."""
    scenario = parse_scenario(trace.scenario)
    opts = RunOptions(**trace.options)
    # the stored injections already carry mixed seeds; undo nothing, bypass mixing
    sim = Simulation(scenario, opts, [])
    sim.injections = [FailureInjection.from_dict(d) for d in trace.injections]
    sim.skills = SkillLibrary(scenario.catalog, sim.world, sim.memory, sim.injections, sim.clock)
    sim.hub = RendezvousHub(sim.skills, sim.queue, opts.rendezvous_timeout)
    return sim.run([GlobalTask.from_dict(t) for t in trace.tasks])
