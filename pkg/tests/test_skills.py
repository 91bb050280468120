import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robofleet.errors import EmbodimentMismatchError, InvalidProfileError, SkillError
from robofleet.memory import RobotProfile
from robofleet.sim import bundled_scenario
from robofleet.sim.clock import VirtualClock
from robofleet.skills import (
    FAILURE,
    REJECTED,
    SUCCESS,
    FailureInjection,
    SkillLibrary,
    ToolCatalog,
    ToolProfile,
    baseline_catalog,
    bind_skills,
    call_signature,
    divergent_nodes,
)

from conftest import seeded

HOUSEHOLD = bundled_scenario("household")


def library(injections=(), scenario=HOUSEHOLD):
    clock = VirtualClock()
    mem, world = seeded(scenario, clock)
    return SkillLibrary(scenario.catalog, world, mem, injections, clock)


def state_of(lib):
    return (json.dumps(lib.world.graph.to_dict(), sort_keys=True),
            json.dumps(lib.memory.scene.to_dict(), sort_keys=True))


def coherent(lib):
    return divergent_nodes(lib.world.graph, lib.memory.scene) == []


# ----------------------------------------------------------------- catalog


def test_baseline_catalog_has_seven_tools():
    assert list(baseline_catalog()) == ["detect", "grasp", "handover", "navigate",
                                        "open_container", "place", "pour"]


def test_wheeled_robot_cannot_bind_grasp():
    robot = RobotProfile("W1", "wheeled", {"navigate", "grasp"}, {"kitchen"})
    with pytest.raises(EmbodimentMismatchError):
        bind_skills(robot, baseline_catalog())


def test_empty_catalog_binding_is_invalid():
    robot = RobotProfile("W1", "wheeled", {"navigate"}, {"kitchen"})
    with pytest.raises(InvalidProfileError):
        bind_skills(robot, ToolCatalog())


def test_binding_returns_named_skills():
    robot = RobotProfile("A", "dual_arm", {"navigate", "pour"}, {"kitchen"})
    assert bind_skills(robot, baseline_catalog()) == {"navigate", "pour"}


@pytest.mark.parametrize("kwargs", [
    {"params_schema": (("x", "node"), ("x", "node"))},
    {"params_schema": (("x", "colour"),)},
    {"effects": ({"op": "teleport"},)},
    {"effects": ({"op": "set_attr", "node": "$missing", "key": "k", "value": 1},)},
    {"category": "magic"},
    {"duration": -1.0},
])
def test_invalid_tool_profiles(kwargs):
    base = dict(tool_id="t", category="special")
    base.update(kwargs)
    with pytest.raises(InvalidProfileError):
        ToolProfile(**base)


def test_conflicting_reregistration():
    cat = baseline_catalog()
    nav = cat.get("navigate")
    assert cat.register_tool(nav) == "navigate"
    with pytest.raises(InvalidProfileError):
        cat.register_tool(ToolProfile("navigate", "navigation", duration=9.0))


def test_injection_parameters_validated():
    with pytest.raises(ValueError):
        FailureInjection("grasp", "fail_prob", 1.5)
    with pytest.raises(ValueError):
        FailureInjection("grasp", "fail_first_k", 0.5)
    with pytest.raises(ValueError):
        FailureInjection("grasp", "explode", 1)


def test_call_signatures():
    assert call_signature("detect", {"label": "egg"}) == "egg"
    assert call_signature("place", {"object": "egg", "target": "dining_table"}) == \
        "egg->dining_table"
    assert call_signature("pour", {"source": "bottle", "target": "cup"}) == "bottle->cup"
    assert call_signature("handover", {"object": "orange", "role": "give"}) == "orange:give"
    assert call_signature("navigate", {"target": "fridge"}) == "fridge"


# ---------------------------------------------------------------- execution


def test_detect_egg_in_kitchen_not_found():
    lib = library()
    res = lib.invoke("detect", "R1", {"label": "egg"})
    assert (res.status, res.reason) == (FAILURE, "not_found")


def test_fridge_then_detect_finds_egg():
    lib = library()
    assert lib.invoke("navigate", "R1", {"target": "fridge"}).ok
    assert lib.invoke("open_container", "R1", {"target": "fridge"}).ok
    res = lib.invoke("detect", "R1", {"label": "egg"})
    assert res.status == SUCCESS
    assert res.observation["found"] == ["egg"]
    assert lib.memory.scene.node("egg").visibility == "visible"
    assert lib.memory.scene.parent("egg") == "fridge"
    assert coherent(lib)


def test_navigate_outside_domain_rejected():
    lib = library()
    before = state_of(lib)
    res = lib.invoke("navigate", "R1", {"target": "nightstand"})
    assert (res.status, res.reason) == (REJECTED, "outside_motion_domain")
    assert res.observation["diagnosis"] == "outside_motion_domain"
    assert state_of(lib) == before


def test_open_table_rejected():
    lib = library()
    lib.invoke("navigate", "R1", {"target": "dining_table"})
    res = lib.invoke("open_container", "R1", {"target": "dining_table"})
    assert (res.status, res.reason) == (REJECTED, "no_affordance")


def test_open_is_idempotent():
    lib = library()
    lib.invoke("navigate", "R1", {"target": "fridge"})
    assert lib.invoke("open_container", "R1", {"target": "fridge"}).ok
    assert lib.invoke("open_container", "R1", {"target": "fridge"}).ok
    assert lib.world.graph.node("fridge").attributes["open"] is True


def test_fetch_and_place_egg():
    lib = library()
    for tool, args in [("navigate", {"target": "fridge"}),
                       ("open_container", {"target": "fridge"}),
                       ("detect", {"label": "egg"}),
                       ("grasp", {"object": "egg"}),
                       ("navigate", {"target": "dining_table"}),
                       ("place", {"object": "egg", "target": "dining_table"})]:
        res = lib.invoke(tool, "R1", args)
        assert res.ok, (tool, res.reason)
        assert coherent(lib)
    assert lib.world.graph.parent("egg") == "dining_table"
    assert lib.memory.scene.parent("egg") == "dining_table"
    assert lib.world.graph.node("egg").position == lib.world.graph.node("dining_table").position


def test_failed_and_rejected_calls_are_atomic():
    lib = library([FailureInjection("grasp", "fail_first_k", 1)])
    before = state_of(lib)
    battery = lib.memory.registry.state("R1").battery
    assert lib.invoke("grasp", "R1", {"object": "orange"}).reason == "injected"
    assert lib.invoke("place", "R1", {"object": "orange", "target": "kitchen_counter"}).status \
        == REJECTED
    assert state_of(lib) == before
    assert lib.memory.registry.state("R1").battery == battery
    assert lib.invoke("grasp", "R1", {"object": "orange"}).ok
    assert lib.memory.registry.state("R1").battery < battery


def test_capacity_limit():
    lib = library()
    assert lib.invoke("grasp", "R1", {"object": "orange"}).ok
    assert lib.invoke("grasp", "R1", {"object": "knife"}).reason == "hands_full"
    assert lib.invoke("grasp", "R2", {"object": "knife"}).ok
    assert lib.invoke("grasp", "R2", {"object": "apple"}).ok


def test_unknown_tool_and_unbound_skill():
    lib = library()
    with pytest.raises(SkillError):
        lib.invoke("fly", "R1", {})
    assert lib.invoke("pour", "R1", {"source": "cup", "target": "cup"}).reason == "not_bound"


def test_missing_argument_rejected():
    assert library().invoke("grasp", "R1", {}).reason == "missing_arg:object"


def test_spoofed_precondition_is_rejection():
    lib = library([FailureInjection("detect", "precondition_spoof", 1.0)])
    res = lib.invoke("detect", "R1", {"label": "orange"})
    assert (res.status, res.reason) == (REJECTED, "spoofed_precondition")


def test_tool_events_are_paired():
    lib = library()
    res = lib.invoke("detect", "R1", {"label": "orange"})
    call, result = lib.memory.log.invocation_pair(res.invocation_id)
    assert call.payload["tool"] == "detect" and result.payload["status"] == SUCCESS
    assert call.seq < result.seq


def test_handover_needs_rendezvous_path():
    lib = library()
    lib.invoke("grasp", "R1", {"object": "orange"})
    args = {"object": "orange", "partner": "R2", "role": "give", "token": "t"}
    assert lib.invoke("handover", "R1", args).reason == "needs_rendezvous"
    give = lib.new_invocation("handover", "R1", args)
    recv = lib.new_invocation("handover", "R2", dict(args, partner="R1", role="receive"))
    assert lib.begin(give) is None and lib.begin(recv) is None
    with pytest.raises(SkillError):
        lib.finish(give)
    rg, rr = lib.finish_rendezvous(give, recv)
    assert rg.ok and rr.ok
    assert lib.world.graph.parent("orange") == "R2"
    assert coherent(lib)


def test_handover_in_different_rooms_fails():
    lib = library()
    lib.invoke("grasp", "R1", {"object": "orange"})
    lib.invoke("navigate", "R2", {"target": "coffee_table"})
    args = {"object": "orange", "partner": "R2", "role": "give", "token": "t"}
    give = lib.new_invocation("handover", "R1", args)
    recv = lib.new_invocation("handover", "R2", dict(args, partner="R1", role="receive"))
    lib.begin(give)
    lib.begin(recv)
    rg, rr = lib.finish_rendezvous(give, recv)
    assert rg.reason == rr.reason == "rendezvous_mismatch"
    assert lib.world.graph.parent("orange") == "R1"


def test_busy_robot_rejects_second_call():
    lib = library()
    inv = lib.new_invocation("navigate", "R1", {"target": "fridge"})
    assert lib.begin(inv) is None
    assert lib.invoke("detect", "R1", {"label": "orange"}).reason == "busy"
    lib.finish(inv)
    assert lib.invoke("detect", "R1", {"label": "orange"}).ok


def test_pour_fills_target():
    scenario = bundled_scenario("restaurant")
    lib = library(scenario=scenario)
    g = lib.world.graph
    bottle = next(n for n in g.nodes if g.node(n).label == "apple juice bottle")
    assert lib.invoke("navigate", "A2", {"target": lib.world.station(bottle)}).ok
    if lib.world.hidden(bottle):
        assert lib.invoke("open_container", "A2", {"target": g.parent(bottle)}).ok
    assert lib.invoke("grasp", "A2", {"object": bottle}).ok
    glass = next(n for n in g.nodes if g.node(n).label == "glass")
    assert lib.invoke("navigate", "A2", {"target": lib.world.station(glass)}).ok
    res = lib.invoke("pour", "A2", {"source": bottle, "target": glass})
    assert res.ok, res.reason
    assert g.node(glass).attributes["filled"] is True
    assert coherent(lib)


# ----------------------------------------------------------------- property

TARGETS = ["fridge", "kitchen_counter", "dining_table", "kitchen_cabinet", "coffee_table",
           "sideboard", "kitchen", "dining_room", "living_room"]
OBJECTS = ["egg", "orange", "knife", "apple", "cup", "bowl", "milk", "spoon"]
CALL = st.one_of(
    st.tuples(st.just("navigate"), st.sampled_from(["R1", "R2"]),
              st.builds(lambda t: {"target": t}, st.sampled_from(TARGETS))),
    st.tuples(st.just("open_container"), st.sampled_from(["R1", "R2"]),
              st.builds(lambda t: {"target": t}, st.sampled_from(TARGETS))),
    st.tuples(st.just("detect"), st.sampled_from(["R1", "R2"]),
              st.builds(lambda o: {"label": o}, st.sampled_from(OBJECTS))),
    st.tuples(st.just("grasp"), st.sampled_from(["R1", "R2"]),
              st.builds(lambda o: {"object": o}, st.sampled_from(OBJECTS))),
    st.tuples(st.just("place"), st.sampled_from(["R1", "R2"]),
              st.builds(lambda o, t: {"object": o, "target": t},
                        st.sampled_from(OBJECTS), st.sampled_from(TARGETS))),
)


def _run_calls(calls, seed):
    lib = library([FailureInjection("*", "fail_prob", 0.2, seed)])
    results = []
    for tool, rid, args in calls:
        before = state_of(lib)
        res = lib.invoke(tool, rid, args)
        if not res.ok:
            assert state_of(lib) == before, (tool, args, res.reason)
        assert coherent(lib), (tool, args)
        results.append(res.to_dict())
    return results


@settings(max_examples=60, deadline=None)
@given(st.lists(CALL, max_size=25), st.integers(0, 1000))
def test_coherence_atomicity_and_determinism(calls, seed):
    assert _run_calls(calls, seed) == _run_calls(calls, seed)
