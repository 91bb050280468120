import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robofleet.errors import (
    AssigneeOfflineError,
    DuplicateGraphError,
    InvalidTransitionError,
    NotReadyError,
)
from robofleet.planner import Subtask, SubtaskGraph, goals
from robofleet.scheduler import Escalation, Monitor, Outcome
from robofleet.sim.audit import audit_events

from dagfuzz import fuzz_once, make_monitor


def fetch_then_handover(gid="g"):
    subs = {
        f"{gid}/s1": Subtask(f"{gid}/s1", "fetch orange", 1, ("R1",)),
        f"{gid}/s2": Subtask(f"{gid}/s2", "fetch knife", 1, ("R2",)),
        f"{gid}/s3": Subtask(f"{gid}/s3", "deliver", 2, ("R1", "R2"), "collaboration",
                             {f"{gid}/s1", f"{gid}/s2"}),
    }
    return SubtaskGraph(gid, subs)


def run_to_running(m, sid):
    assignments = m.dispatch(sid)
    m.mark_running(sid)
    return assignments


def finish(m, sid, outcome=None):
    result = None
    for rid in m.subtask(sid).assignees:
        result = m.report(sid, rid, outcome or Outcome.success())
    return result


def states(m, gid):
    return {sid: lc.state for sid, lc in m.graphs[gid].lifecycles.items()}


# ------------------------------------------------------------------ admit


def test_admit_fetch_then_handover_graph():
    m = make_monitor()
    m.admit(fetch_then_handover())
    assert states(m, "g") == {"g/s1": "ready", "g/s2": "ready", "g/s3": "pending"}
    assert m.ready_set() == ["g/s1", "g/s2"]


def test_admit_empty_graph_completes():
    m = make_monitor()
    m.admit(SubtaskGraph("empty", {}))
    assert m.graph_status("empty") == "completed"


def test_two_graphs_tracked_independently():
    m = make_monitor()
    m.admit(fetch_then_handover("a"))
    m.admit(fetch_then_handover("b"))
    run_to_running(m, "a/s1")
    finish(m, "a/s1")
    assert states(m, "b") == {"b/s1": "ready", "b/s2": "ready", "b/s3": "pending"}
    assert m.lifecycle("a/s1").state == "succeeded"


def test_duplicate_graph_rejected():
    m = make_monitor()
    m.admit(fetch_then_handover())
    with pytest.raises(DuplicateGraphError):
        m.admit(fetch_then_handover())


# -------------------------------------------------------------- readiness


def test_collaboration_blocked_until_both_prerequisites_succeed():
    m = make_monitor()
    m.admit(fetch_then_handover())
    run_to_running(m, "g/s1")
    run_to_running(m, "g/s2")
    assert finish(m, "g/s1") == []
    assert "g/s3" not in m.ready_set()
    with pytest.raises(NotReadyError):
        m.dispatch("g/s3")
    assert finish(m, "g/s2") == ["g/s3"]
    assert m.ready_set() == ["g/s3"]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_ready_set_matches_bruteforce(seed):
    driver, events = fuzz_once(seed, graphs=1, fail_prob=0.15)
    assert driver.mismatches == []
    assert audit_events(events).ok


# --------------------------------------------------------------- dispatch


def test_single_dispatch_marks_robot_busy():
    m = make_monitor()
    m.admit(fetch_then_handover())
    (a,) = m.dispatch("g/s1")
    assert (a.robot_id, a.attempt, a.token) == ("R1", 1, None)
    st_ = m.memory.registry.state("R1")
    assert (st_.status, st_.current_subtask) == ("busy", "g/s1")
    assert m.lifecycle("g/s1").state == "dispatched"


def test_collaboration_not_dispatched_while_partner_busy():
    m = make_monitor()
    m.admit(fetch_then_handover())
    other = SubtaskGraph("h", {"h/x": Subtask("h/x", "busy work", 1, ("R2",))})
    m.admit(other)
    for sid in ("g/s1", "g/s2"):
        run_to_running(m, sid)
        finish(m, sid)
    run_to_running(m, "h/x")
    assert m.dispatch("g/s3") == []
    assert m.lifecycle("g/s3").state == "ready"
    assert m.memory.registry.state("R1").status == "idle"
    finish(m, "h/x")
    assignments = m.dispatch("g/s3")
    assert {a.robot_id for a in assignments} == {"R1", "R2"}
    assert len({a.token for a in assignments}) == 1
    assert assignments[0].token is not None


def test_offline_assignee_keeps_subtask_ready():
    m = make_monitor()
    m.admit(fetch_then_handover())
    m.memory.registry.update_robot_state("R1", status="offline")
    with pytest.raises(AssigneeOfflineError):
        m.dispatch("g/s1")
    assert m.lifecycle("g/s1").state == "ready"
    blocked = m.memory.log.events("state_change", "R1")[-1]
    assert blocked.payload["change"] == "dispatch_blocked"


def test_depth1_dispatched_to_distinct_robots():
    m = make_monitor()
    m.admit(fetch_then_handover())
    robots = {a.robot_id for sid in m.ready_set() for a in run_to_running(m, sid)}
    assert robots == {"R1", "R2"}
    assert m.lifecycle("g/s1").state == m.lifecycle("g/s2").state == "running"


# ------------------------------------------------------------- completion


def test_retry_then_escalation():
    m = make_monitor(retry_limit=2)
    m.admit(fetch_then_handover())
    run_to_running(m, "g/s1")
    assert finish(m, "g/s1", Outcome.failure("grasp_failed")) == []
    assert (m.lifecycle("g/s1").state, m.lifecycle("g/s1").attempt) == ("ready", 2)
    run_to_running(m, "g/s1")
    esc = finish(m, "g/s1", Outcome.failure("grasp_failed"))
    assert isinstance(esc, Escalation) and esc.subtask_id == "g/s1"
    assert states(m, "g") == {"g/s1": "failed", "g/s2": "cancelled", "g/s3": "cancelled"}
    (event,) = [e for e in m.memory.log.events("escalation") if e.payload.get("subtask")]
    assert event.payload["level"] == 3
    assert m.graph_status("g") == "failed"


def test_escalation_triggers_replan_and_replacement():
    calls = []

    def replanner(rec, esc):
        calls.append(esc)
        return SubtaskGraph("g-r1", {"g-r1/s1": Subtask("g-r1/s1", "retry", 1, ("R2",))})

    m = make_monitor(retry_limit=1)
    m.replanner = replanner
    m.max_replans = 1
    m.admit(fetch_then_handover())
    run_to_running(m, "g/s1")
    finish(m, "g/s1", Outcome.failure("not_found"))
    assert len(calls) == 1 and m.replans == 1
    assert m.graphs["g-r1"].replaces == "g"
    run_to_running(m, "g-r1/s1")
    finish(m, "g-r1/s1")
    assert m.final_status("g") == "completed"


def test_replan_waits_for_in_flight_siblings():
    calls = []
    m = make_monitor(retry_limit=1)
    m.replanner = lambda rec, esc: calls.append(esc)
    m.max_replans = 1
    m.admit(fetch_then_handover())
    run_to_running(m, "g/s1")
    run_to_running(m, "g/s2")
    finish(m, "g/s1", Outcome.failure("x"))
    assert calls == []
    finish(m, "g/s2")
    assert len(calls) == 1


def test_agent_escalation_skips_retries():
    m = make_monitor(retry_limit=3)
    m.admit(fetch_then_handover())
    run_to_running(m, "g/s1")
    assert isinstance(finish(m, "g/s1", Outcome.failure("no_candidates", escalate=True)),
                      Escalation)


def test_verifier_can_veto_success():
    m = make_monitor()
    m.verifier = lambda sub: False
    m.admit(fetch_then_handover())
    run_to_running(m, "g/s1")
    finish(m, "g/s1")
    lc = m.lifecycle("g/s1")
    assert (lc.state, lc.attempt) == ("ready", 2)
    assert m.memory.log.events("task_feedback")[-2].payload["reason"] == "goal_unmet"


def test_collaboration_waits_for_every_report():
    m = make_monitor()
    m.admit(fetch_then_handover())
    for sid in ("g/s1", "g/s2"):
        run_to_running(m, sid)
        finish(m, sid)
    run_to_running(m, "g/s3")
    assert m.report("g/s3", "R1", Outcome.success()) is None
    assert m.lifecycle("g/s3").state == "running"
    m.report("g/s3", "R2", Outcome.success())
    assert m.graph_status("g") == "completed"


def test_robot_offline_fails_running_subtask():
    m = make_monitor()
    m.admit(fetch_then_handover())
    run_to_running(m, "g/s1")
    m.robot_offline("R1")
    lc = m.lifecycle("g/s1")
    assert (lc.state, lc.attempt) == ("ready", 2)
    failed = [e.payload for e in m.memory.log.events("task_feedback")
              if e.payload.get("state") == "failed"]
    assert failed[-1]["reason"] == "offline"
    assert m.memory.registry.state("R1").status == "offline"


def test_illegal_transition():
    m = make_monitor()
    m.admit(fetch_then_handover())
    with pytest.raises(InvalidTransitionError):
        m.on_completion("g/s1", Outcome.success())
    with pytest.raises(ValueError):
        Outcome("maybe")
    with pytest.raises(ValueError):
        Monitor(m.memory, retry_limit=0)


def test_duplicate_completion_applied_once():
    m = make_monitor()
    m.admit(fetch_then_handover())
    run_to_running(m, "g/s1")
    msg = {"completion_id": "c1", "subtask": "g/s1", "robot": "R1", "status": "failed",
           "reason": "x", "attempt": 1}
    for _ in range(3):
        m.submit(msg)
    m.process_intake()
    transitions = [e for e in m.memory.log.events("task_feedback")
                   if e.payload.get("subtask") == "g/s1"]
    assert [e.payload["state"] for e in transitions] == \
        ["ready", "dispatched", "running", "failed", "ready"]


def test_stale_attempt_report_ignored():
    m = make_monitor()
    m.admit(fetch_then_handover())
    run_to_running(m, "g/s1")
    assert m.report("g/s1", "R1", Outcome.success(), attempt=7) is None
    assert m.lifecycle("g/s1").state == "running"


def test_status_dump_lists_labels():
    m = make_monitor()
    m.admit(fetch_then_handover())
    run_to_running(m, "g/s1")
    dump = m.status()
    labels = [s["label"] for s in dump["graphs"][0]["subtasks"]]
    assert labels == ["(1, R1)", "(1, R2)", "(2, R1+R2)"]
    assert dump["robots"] == {"R1": ["g/s1"]}


# --------------------------------------------------------------- property


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9), st.floats(0.0, 0.5))
def test_fuzzed_runs_pass_audit(seed, fail_prob):
    driver, events = fuzz_once(seed, graphs=3, fail_prob=fail_prob)
    report = audit_events(events)
    assert report.ok, report.violations
    assert driver.mismatches == []
    assert driver.m.quiescent()


def test_failure_free_liveness():
    for seed in range(30):
        driver, _ = fuzz_once(seed, graphs=2, fail_prob=0.0)
        for gid in driver.graphs:
            assert driver.m.graph_status(gid) == "completed"


def test_audit_catches_prerequisite_violation():
    events = [
        {"seq": 1, "time": 0, "kind": "plan_issued", "subject": "g", "payload": {
            "graph": fetch_then_handover().to_dict()}},
        {"seq": 2, "time": 0, "kind": "task_feedback", "subject": "g", "payload": {
            "event": "subtask", "subtask": "g/s3", "state": "ready", "attempt": 1}},
        {"seq": 3, "time": 0, "kind": "task_feedback", "subject": "g", "payload": {
            "event": "subtask", "subtask": "g/s3", "state": "dispatched", "attempt": 1,
            "robots": ["R1"]}},
    ]
    report = audit_events(events)
    assert report.violations["prerequisite"]
    assert report.violations["partial_collaboration"]
    assert not report.ok


def test_goal_helpers_are_used_by_verifier(kitchen):
    sub = Subtask("v", "cup on counter", 1, ("R1",), goal=goals.on("cup", "counter"))
    assert goals.evaluate(sub.goal, kitchen)
