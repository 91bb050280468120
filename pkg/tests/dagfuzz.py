"""Random subtask DAGs and a driver that runs them through the Monitor.

The driver keeps its own bookkeeping of what it reported, which gives an
independent readiness oracle to compare against ``Monitor.ready_set``.
"""

import random

from robofleet.memory import LogicalClock, RobotProfile, SharedMemory
from robofleet.planner import Subtask, SubtaskGraph
from robofleet.scheduler import Escalation, Monitor, Outcome

ROBOTS = ("R1", "R2", "R3", "R4")


def random_dag(rng: random.Random, gid: str, max_nodes: int = 12) -> SubtaskGraph:
    n = rng.randint(1, max_nodes)
    prereqs = {}
    for i in range(n):
        earlier = list(range(i))
        k = rng.randint(0, min(3, len(earlier)))
        prereqs[i] = set(rng.sample(earlier, k))
    depth = {}
    for i in range(n):
        depth[i] = 1 + max((depth[p] for p in prereqs[i]), default=0)
    subs = {}
    for i in range(n):
        collab = rng.random() < 0.25
        assignees = tuple(sorted(rng.sample(ROBOTS, rng.randint(2, 3)))) if collab \
            else (rng.choice(ROBOTS),)
        sid = f"{gid}/s{i}"
        subs[sid] = Subtask(sid, f"step {i}", depth[i], assignees,
                            "collaboration" if collab else "single",
                            {f"{gid}/s{p}" for p in prereqs[i]})
    return SubtaskGraph(gid, subs)


def make_monitor(retry_limit: int = 2) -> Monitor:
    mem = SharedMemory(LogicalClock())
    for rid in ROBOTS:
        mem.registry.register_robot(RobotProfile(rid, "dual_arm", {"grasp"}, {"kitchen"}))
    return Monitor(mem, retry_limit=retry_limit, max_replans=0)


class Driver:
    def __init__(self, monitor: Monitor, rng: random.Random, fail_prob: float = 0.2):
        self.m = monitor
        self.rng = rng
        self.fail_prob = fail_prob
        self.graphs: dict[str, SubtaskGraph] = {}
        self.succeeded: set[str] = set()
        self.in_flight: set[str] = set()
        self.failures: dict[str, int] = {}
        self.dead: set[str] = set()
        self.mismatches: list[str] = []

    def admit(self, graph: SubtaskGraph) -> None:
        self.graphs[graph.graph_id] = graph
        self.m.admit(graph)

    def oracle_ready(self) -> list[str]:
        out = []
        for gid, g in self.graphs.items():
            if gid in self.dead:
                continue
            for sid, s in g.subtasks.items():
                if sid in self.succeeded or sid in self.in_flight:
                    continue
                if all(p in self.succeeded for p in s.prerequisites):
                    out.append(sid)
        return sorted(out)

    def check(self) -> None:
        got = sorted(self.m.ready_set())
        want = self.oracle_ready()
        if got != want:
            self.mismatches.append(f"ready {got} != oracle {want}")

    def step(self) -> bool:
        """Dispatch what can start, then finish one running subtask."""
        self.check()
        ready = self.m.ready_set()
        self.rng.shuffle(ready)
        for sid in ready:
            if self.m.dispatch(sid):
                self.m.mark_running(sid)
                self.in_flight.add(sid)
        self.check()
        if not self.in_flight:
            return False
        sid = self.rng.choice(sorted(self.in_flight))
        sub = self.m.subtask(sid)
        robots = list(sub.assignees)
        self.rng.shuffle(robots)
        result = None
        failed = False
        for rid in robots:
            if self.rng.random() < self.fail_prob:
                failed = True
                result = self.m.report(sid, rid, Outcome.failure("injected"))
            else:
                result = self.m.report(sid, rid, Outcome.success())
        self.in_flight.discard(sid)
        gid = self.m._owner[sid]
        if failed:
            self.failures[sid] = self.failures.get(sid, 0) + 1
            if self.failures[sid] >= self.m.retry_limit and gid not in self.dead:
                # a graph escalates once; later sibling failures add nothing
                self.dead.add(gid)
                if not isinstance(result, Escalation):
                    self.mismatches.append(f"{sid} should have escalated")
        else:
            self.succeeded.add(sid)
        return True

    def run(self, max_steps: int = 10_000) -> int:
        steps = 0
        while self.step():
            steps += 1
            if steps > max_steps:
                raise AssertionError("scheduler did not quiesce")
        self.check()
        return steps


def fuzz_once(seed: int, graphs: int = 2, fail_prob: float = 0.2):
    """Run ``graphs`` random DAGs sharing four robots. Returns (driver, events)."""
    rng = random.Random(seed)
    driver = Driver(make_monitor(), rng, fail_prob)
    for k in range(graphs):
        driver.admit(random_dag(rng, f"g{seed}_{k}"))
    driver.run()
    return driver, [e.to_dict() for e in driver.m.memory.log]
