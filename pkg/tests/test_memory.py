import json
import threading
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robofleet.errors import (
    CycleError,
    EmptyQueryError,
    HierarchyError,
    KindMismatchError,
    RegistrationConflictError,
    RobotStateError,
    UnknownNodeError,
    UnknownRoomError,
)
from robofleet.memory import (
    LogicalClock,
    Observation,
    ObservedNode,
    RobotProfile,
    RobotRegistry,
    SceneGraph,
    SceneNode,
    SharedMemory,
    TemporalLog,
    check_forest,
    query_spatial,
)

from conftest import build_kitchen, obj

PARENT = ("contains", "supports")


def dfs_has_cycle_or_multiparent(graph):
    """Test-local oracle: explicit DFS over parent edges."""
    children, parents = {}, {}
    for e in graph.edges:
        if e.relation in PARENT:
            children.setdefault(e.src, []).append(e.dst)
            parents.setdefault(e.dst, []).append(e.src)
    if any(len(p) > 1 for p in parents.values()):
        return True
    colour = {}

    def visit(n):
        colour[n] = "grey"
        for c in children.get(n, []):
            if colour.get(c) == "grey":
                return True
            if c not in colour and visit(c):
                return True
        colour[n] = "black"
        return False

    return any(n not in colour and visit(n) for n in graph.nodes)


def linear_scan(graph, label=None, room=None, affordance=None):
    out = []
    for nid, node in graph.nodes.items():
        if node.visibility == "removed":
            continue
        if label is not None and node.label != label:
            continue
        if affordance is not None and affordance not in node.affordances:
            continue
        if room is not None:
            cur, found = graph.parent(nid), False
            while cur is not None:
                if graph.node(cur).kind == "room":
                    found = cur == room
                    break
                cur = graph.parent(cur)
            if not found:
                continue
        out.append(nid)
    return sorted(out)


# ------------------------------------------------------------------ upsert


def test_insert_object_increments_revision_and_count(kitchen):
    rev, count = kitchen.revision, len(kitchen)
    delta = kitchen.upsert_node(obj("mug", "mug", ["graspable"]), "kitchen")
    assert kitchen.revision == rev + 1
    assert len(kitchen) == count + 1
    assert delta.revision == kitchen.revision
    assert "created" in delta.changes


def test_reupsert_identical_node_gives_empty_delta(kitchen):
    rev = kitchen.revision
    delta = kitchen.upsert_node(kitchen.node("cup"))
    assert not delta
    assert kitchen.revision == rev + 1


def test_update_records_old_and_new(kitchen):
    delta = kitchen.update_node("fridge", attributes={"open": True})
    assert delta.changes["attributes"] == ({"open": False}, {"open": True})


def test_new_object_needs_parent(kitchen):
    with pytest.raises(HierarchyError):
        kitchen.upsert_node(obj("orphan"))


def test_kind_change_rejected(kitchen):
    with pytest.raises(KindMismatchError):
        kitchen.upsert_node(SceneNode("cup", "room", "cup"), "floor_1")


def test_object_cannot_parent_room(kitchen):
    with pytest.raises(HierarchyError):
        kitchen.upsert_node(SceneNode("pantry", "room", "pantry"), "counter")


def test_bad_node_fields_rejected():
    with pytest.raises(ValueError):
        SceneNode("x", "planet", "x")
    with pytest.raises(ValueError):
        SceneNode("x", "object", "x", visibility="hidden")
    with pytest.raises(ValueError):
        SceneNode("x", "object", "x", position=(0, float("nan"), 0))


# ------------------------------------------------------------------- edges


def test_single_parent_rule():
    g = build_kitchen()
    g.upsert_node(obj("plate"), "kitchen")
    g.set_edge("table", "plate", "supports")
    g.set_edge("shelf", "plate", "supports")
    parents = [e.src for e in g.edges if e.dst == "plate" and e.relation in PARENT]
    assert parents == ["shelf"]
    assert g.room_of("plate") == "kitchen"


def test_self_loop_is_cycle(kitchen):
    with pytest.raises(CycleError):
        kitchen.set_edge("kitchen", "kitchen", "contains")
    with pytest.raises(CycleError):
        kitchen.set_edge("cup", "cup", "functional")


def test_ancestor_loop_is_cycle(kitchen):
    kitchen.set_edge("counter", "shelf", "supports")
    with pytest.raises(CycleError):
        kitchen.set_edge("shelf", "counter", "supports")


def test_unknown_endpoint(kitchen):
    with pytest.raises(UnknownNodeError):
        kitchen.set_edge("ghost", "cup", "supports")


def test_lateral_edge_is_idempotent(kitchen):
    rev = kitchen.revision
    first = kitchen.set_edge("cup", "shelf", "functional")
    second = kitchen.set_edge("cup", "shelf", "functional")
    assert first and not second
    assert kitchen.revision == rev + 2


OBJECTS = ["counter", "fridge", "egg", "shelf", "cup", "table", "box", "tray"]
HOSTS = OBJECTS + ["kitchen", "dining_room"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(HOSTS), st.sampled_from(OBJECTS),
                          st.sampled_from(PARENT)), min_size=100, max_size=100))
def test_forest_invariant_over_random_edge_ops(ops):
    g = build_kitchen()
    g.upsert_node(obj("box", affordances=["container"]), "kitchen")
    g.upsert_node(obj("tray", affordances=["support"]), "dining_room")
    for src, dst, rel in ops:
        rev = g.revision
        try:
            g.set_edge(src, dst, rel)
        except (CycleError, HierarchyError):
            assert g.revision == rev
        else:
            assert g.revision == rev + 1
        assert not dfs_has_cycle_or_multiparent(g)
        assert check_forest(g) == []
        for nid, node in g.nodes.items():
            if node.kind == "object":
                assert g.room_of(nid) is not None


# ------------------------------------------------------------- observation


def test_omitted_egg_becomes_occluded_with_position_kept():
    g = build_kitchen()
    g.set_edge("kitchen", "egg", "contains")
    before = g.node("egg")
    seen = [ObservedNode(g.node(n), "kitchen") for n in ("counter", "fridge", "shelf")]
    g.apply_observation(Observation("R1", "kitchen", tuple(seen)))
    egg = g.node("egg")
    assert egg.visibility == "occluded"
    assert egg.position == before.position
    assert g.parent("egg") == "kitchen"


def test_occlusion_is_viewpoint_scoped(kitchen):
    kitchen.apply_observation(Observation("R1", "kitchen", ()))
    assert kitchen.node("table").visibility == "visible"
    assert kitchen.node("cup").visibility == "occluded"


def test_reseen_node_becomes_visible_again(kitchen):
    kitchen.apply_observation(Observation("R1", "kitchen", (), time=5.0))
    assert kitchen.node("egg").visibility == "occluded"
    kitchen.apply_observation(Observation(
        "R1", "kitchen", (ObservedNode(kitchen.node("egg"), "fridge"),), time=9.0))
    assert kitchen.node("egg").visibility == "visible"
    assert kitchen.node("egg").last_observed == 9.0


def test_removal_is_explicit(kitchen):
    kitchen.apply_observation(Observation("R1", "kitchen", removed=("cup",)))
    assert kitchen.node("cup").visibility == "removed"
    assert kitchen.query(labels=["cup"]) == []
    assert [m.id for m in kitchen.query(labels=["cup"], include_removed=True)] == ["cup"]


def test_observation_of_unknown_room(kitchen):
    with pytest.raises(UnknownRoomError):
        kitchen.apply_observation(Observation("R1", "garage"))


def test_robot_nodes_never_occluded(kitchen):
    kitchen.upsert_node(obj("R1", "robot R1", robot=True), "kitchen")
    kitchen.apply_observation(Observation("R1", "kitchen"))
    assert kitchen.node("R1").visibility == "visible"


def test_last_writer_wins_for_conflicting_observations(kitchen):
    cup = kitchen.node("cup")
    kitchen.apply_observation(Observation(
        "R1", "kitchen", (ObservedNode(cup, "counter", "supports"),), time=3.0))
    kitchen.apply_observation(Observation(
        "R2", "kitchen", (ObservedNode(cup, "shelf", "supports"),), time=3.0))
    assert kitchen.parent("cup") == "shelf"


STEP = st.tuples(st.sampled_from(["observe", "hide", "remove"]),
                 st.sets(st.sampled_from(["cup", "egg", "counter", "shelf", "fridge"])))


def _continuity_run(steps):
    g = build_kitchen()
    removed = set()
    for kind, ids in steps:
        prev = {nid: (n.position, g.parent(nid)) for nid, n in g.nodes.items()}
        count = len(g)
        if kind == "remove":
            victim = sorted(ids)[:1]
            g.apply_observation(Observation("R1", "kitchen",
                                            seen=(), removed=tuple(victim)))
            removed.update(victim)
        else:
            keep = ids if kind == "observe" else set()
            seen = tuple(ObservedNode(g.node(n), g.parent(n), g.parent_edge(n).relation)
                         for n in sorted(keep) if n not in removed)
            g.apply_observation(Observation("R1", "kitchen", seen))
        assert len(g) >= count
        for nid, (pos, parent) in prev.items():
            if nid not in removed:
                assert g.node(nid).position == pos
                assert g.parent(nid) == parent
                assert g.node(nid).visibility != "removed"


@settings(max_examples=50, deadline=None)
@given(st.lists(STEP, min_size=20, max_size=20))
def test_occlusion_continuity_property(steps):
    _continuity_run(steps)


# ------------------------------------------------------------------ queries


def test_query_egg_missing_from_kitchen():
    g = build_kitchen()
    g.update_node("egg", visibility="removed")
    assert query_spatial(g, {"label": "egg"}) == []


def test_query_openable_in_kitchen_matches_scan(kitchen):
    got = [m.id for m in query_spatial(kitchen, {"affordance": "openable", "room": "kitchen"})]
    assert got == linear_scan(kitchen, room="kitchen", affordance="openable") == ["fridge"]


def test_query_reports_ancestry(kitchen):
    (m,) = kitchen.query(labels=["egg"])
    assert m.ancestry == ("fridge", "kitchen", "floor_1")


def test_empty_query_rejected_unless_full_scan(kitchen):
    with pytest.raises(EmptyQueryError):
        kitchen.query()
    assert len(kitchen.query(allow_full_scan=True)) == len(kitchen)


def test_relation_query(kitchen):
    assert [m.id for m in kitchen.query(relation={"relation": "supports", "parent": "counter"})] \
        == ["cup"]
    assert [m.id for m in kitchen.query(relation={"relation": "adjacent", "other": "kitchen"})] \
        == ["dining_room", "kitchen"]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["mug", "fork", "egg", "bowl"]),
                          st.sampled_from(["kitchen", "dining_room", "counter", "fridge", "table"]),
                          st.sets(st.sampled_from(["graspable", "openable", "container"]))),
                max_size=60),
       st.sampled_from([None, "mug", "egg"]), st.sampled_from([None, "kitchen", "dining_room"]),
       st.sampled_from([None, "graspable", "openable"]))
def test_query_equals_linear_scan(items, label, room, affordance):
    g = build_kitchen()
    for i, (lab, parent, aff) in enumerate(items):
        g.upsert_node(obj(f"{lab}_{i}", lab, aff), parent)
    if label is None and room is None and affordance is None:
        return
    got = [m.id for m in g.query(labels=None if label is None else [label], room=room,
                                 affordance=affordance)]
    assert got == linear_scan(g, label, room, affordance)
    assert got == [m.id for m in g.query(labels=None if label is None else [label], room=room,
                                         affordance=affordance)]


# ------------------------------------------------------------ serialization


def test_scene_round_trip(kitchen):
    data = kitchen.to_dict()
    again = SceneGraph.from_dict(json.loads(json.dumps(data)))
    assert again.to_dict() == data


def test_from_dict_rejects_cycles(kitchen):
    data = kitchen.to_dict()
    data["edges"].append({"src": "cup", "dst": "counter", "relation": "supports", "since": 0})
    data["edges"] = [e for e in data["edges"]
                     if not (e["dst"] == "counter" and e["src"] == "kitchen")]
    with pytest.raises(CycleError):
        SceneGraph.from_dict(data)


# ----------------------------------------------------------------- temporal


def test_first_event_seq_is_one():
    log = TemporalLog()
    assert log.append("task_feedback", "R1", {}) == 1


def test_concurrent_appends_are_gapless():
    log = TemporalLog()

    def worker(k):
        for i in range(200):
            log.append("task_feedback", f"w{k}", {"i": i})

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    seqs = sorted(e.seq for e in log)
    assert seqs == list(range(1, 1601))
    for k in range(8):
        assert [e.payload["i"] for e in log.events(subject=f"w{k}")] == list(range(200))


def test_invocation_pair_lookup():
    log = TemporalLog()
    log.append("tool_call", "R1", {"invocation_id": "i1", "tool": "grasp"})
    log.append("tool_call", "R2", {"invocation_id": "i2", "tool": "detect"})
    log.append("tool_result", "R1", {"invocation_id": "i1", "status": "success"})
    call, result = log.invocation_pair("i1")
    assert (call.seq, result.seq) == (1, 3)
    assert log.invocation_pair("i2")[1] is None


def test_events_are_immutable():
    log = TemporalLog()
    payload = {"nested": {"a": 1}}
    log.append("task_feedback", "R1", payload)
    payload["nested"]["a"] = 2
    event = log.events()[0]
    assert event.payload["nested"]["a"] == 1
    with pytest.raises(Exception):
        event.seq = 5
    with pytest.raises(TypeError):
        event.payload["x"] = 1


def test_unknown_event_kind():
    with pytest.raises(ValueError):
        TemporalLog().append("gossip", "R1")


def test_log_dump_and_replay(tmp_path):
    log = TemporalLog(LogicalClock())
    log.append("task_feedback", "R1", {"room": "kitchen"})
    log.append("escalation", "g1", {"reason": "not_found"})
    path = tmp_path / "events.jsonl"
    log.dump(path)
    again = TemporalLog.load(path)
    assert again.dumps() == log.dumps()
    assert len(path.read_text().splitlines()) == 2


def test_replay_rejects_gaps(tmp_path):
    log = TemporalLog()
    log.append("task_feedback", "R1")
    log.append("task_feedback", "R1")
    records = [e.to_dict() for e in log][1:]
    with pytest.raises(ValueError):
        TemporalLog.replay(records)


# ----------------------------------------------------------------- registry


def test_register_two_robots(profiles):
    reg = RobotRegistry()
    reg.register_robot(profiles["R1"])
    reg.register_robot(profiles["R2"])
    assert len(reg) == 2
    assert {s.status for s in reg.states().values()} == {"idle"}


def test_reregister_identical_is_noop_and_conflict_raises(profiles):
    reg = RobotRegistry()
    reg.register_robot(profiles["R1"])
    reg.register_robot(profiles["R1"])
    assert len(reg) == 1
    with pytest.raises(RegistrationConflictError):
        reg.register_robot(replace(profiles["R1"], embodiment="humanoid"))


def test_battery_out_of_range(profiles):
    reg = RobotRegistry()
    reg.register_robot(profiles["R1"])
    with pytest.raises(RobotStateError):
        reg.update_robot_state("R1", battery=1.2)
    assert reg.state("R1").battery == 1.0


def test_busy_requires_subtask(profiles):
    reg = RobotRegistry()
    reg.register_robot(profiles["R1"])
    with pytest.raises(RobotStateError):
        reg.update_robot_state("R1", status="busy")
    reg.update_robot_state("R1", status="busy", current_subtask="s1")
    assert reg.update_robot_state("R1", status="idle").current_subtask is None


def test_profile_invariants():
    with pytest.raises(ValueError):
        RobotProfile("R9", "dual_arm", set(), {"kitchen"})
    with pytest.raises(ValueError):
        RobotProfile("R9", "dual_arm", {"grasp"}, set())
    with pytest.raises(ValueError):
        RobotProfile("R9", "tripod", {"grasp"}, {"kitchen"})


# ----------------------------------------------------------------- snapshot


def test_snapshot_isolated_from_later_writes(memory):
    memory.scene.upsert_node(SceneNode("floor_1", "floor", "floor"))
    snap = memory.snapshot()
    memory.scene.upsert_node(SceneNode("kitchen", "room", "kitchen"), "floor_1")
    assert "kitchen" not in snap.scene
    assert "kitchen" in memory.scene


def test_empty_snapshot_is_valid(memory):
    snap = memory.snapshot()
    assert len(snap.scene) == 0
    assert snap.dangling_references() == []
    assert snap.to_dict()["robots"] == []


def test_snapshot_under_concurrent_writers(profiles):
    mem = SharedMemory(LogicalClock())
    mem.scene = SceneGraph.from_dict(build_kitchen().to_dict(), mem.clock)
    stop = threading.Event()
    errors = []

    def writer(k):
        i = 0
        while not stop.is_set() and i < 300:
            try:
                mem.scene.upsert_node(obj(f"w{k}_{i}"), "kitchen" if i % 2 else "counter",
                                      "contains" if i % 2 else "supports")
                mem.registry.register_robot(RobotProfile(
                    f"X{k}_{i}", "wheeled", {"navigate"}, {"kitchen"}))
                mem.log.append("task_feedback", f"w{k}", {"i": i})
            except Exception as exc:  # pragma: no cover - surfaced below
                errors.append(exc)
            i += 1

    threads = [threading.Thread(target=writer, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    snaps = [mem.snapshot() for _ in range(50)]
    stop.set()
    for t in threads:
        t.join()
    assert not errors
    for snap in snaps:
        assert snap.dangling_references() == []
        assert check_forest(snap.scene) == []


def test_memory_save(tmp_path, memory, profiles):
    memory.registry.register_robot(profiles["R1"])
    memory.save(tmp_path)
    assert json.loads((tmp_path / "registry.json").read_text())[0]["state"]["status"] == "idle"
    assert (tmp_path / "events.jsonl").read_text().count("\n") == 1
