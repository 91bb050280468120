"""Shared fixtures: a small kitchen scene and bundled scenarios."""

import sys

import pytest

from robofleet.memory import SharedMemory
from robofleet.memory.registry import RobotProfile
from robofleet.memory.scene import LogicalClock, SceneGraph, SceneNode
from robofleet.sim import bundled_scenario


def obj(node_id, label=None, affordances=(), **attributes):
    return SceneNode(node_id, "object", label or node_id, affordances=frozenset(affordances),
                     attributes=attributes)


def build_kitchen(clock=None) -> SceneGraph:
    """floor_1 > kitchen (counter, fridge > egg, shelf) and dining_room (table)."""
    g = SceneGraph(clock or LogicalClock())
    g.upsert_node(SceneNode("floor_1", "floor", "ground floor"))
    g.upsert_node(SceneNode("kitchen", "room", "kitchen", (0, 0, 0)), "floor_1")
    g.upsert_node(SceneNode("dining_room", "room", "dining room", (5, 0, 0)), "floor_1")
    g.upsert_node(obj("counter", "kitchen counter", ["support"]), "kitchen")
    g.upsert_node(obj("fridge", "fridge", ["openable", "container"], open=False), "kitchen")
    g.upsert_node(obj("egg", "egg", ["graspable"]), "fridge", "contains")
    g.upsert_node(obj("shelf", "shelf", ["support"]), "kitchen")
    g.upsert_node(obj("cup", "cup", ["graspable"]), "counter", "supports")
    g.upsert_node(obj("table", "table", ["support"]), "dining_room")
    g.set_edge("kitchen", "dining_room", "adjacent")
    return g


@pytest.fixture
def kitchen():
    return build_kitchen()


@pytest.fixture
def memory():
    return SharedMemory(LogicalClock())


@pytest.fixture
def profiles():
    return {
        "R1": RobotProfile("R1", "dual_arm", {"navigate", "grasp", "place", "detect"},
                           {"kitchen", "dining_room"}),
        "R2": RobotProfile("R2", "humanoid", {"navigate", "grasp", "place", "detect"},
                           {"kitchen"}),
    }


@pytest.fixture(scope="session")
def household():
    return bundled_scenario("household")


@pytest.fixture(scope="session")
def restaurant():
    return bundled_scenario("restaurant")


@pytest.fixture(scope="session")
def supermarket():
    return bundled_scenario("supermarket")


def seeded(scenario, clock=None):
    """Memory and world for ``scenario`` with all robots registered."""
    world = scenario.build_world()
    mem = SharedMemory(clock or LogicalClock())
    for spec in scenario.robots.values():
        mem.registry.register_robot(spec.profile, spec.battery)
    scenario.seed_memory(mem, world)
    return mem, world


def planner_input(scenario, instruction, task_id="t1", scope="reachable", mem=None):
    from robofleet.planner import GlobalTask, compose_context
    mem = mem or seeded(scenario)[0]
    return compose_context(mem.snapshot(), GlobalTask(task_id, instruction), scope)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
