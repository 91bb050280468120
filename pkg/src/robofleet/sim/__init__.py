"""Scenarios, the discrete-event harness, trace audit and metrics."""

from .audit import AuditReport, audit_events, audit_trace
from .clock import EventQueue, VirtualClock, WallClock
from .harness import RunOptions, RunTrace, Simulation, prune_satisfied, replay, run
from .metrics import ar_report, compute_ar, lcs_length, tool_calls_by_robot
from .scenario import (BUNDLED, SUITE_SCENARIOS, RobotSpec, Scenario, bundled_path,
                       bundled_scenario, load_scenario, parse_scenario)
from .suite import (SuiteTask, dump_suite, generate_task_suite, gold_calls, instantiations,
                    load_suite)

__all__ = [
    "AuditReport", "audit_events", "audit_trace", "EventQueue", "VirtualClock", "WallClock",
    "RunOptions", "RunTrace", "Simulation", "prune_satisfied", "replay", "run", "ar_report",
    "compute_ar", "lcs_length", "tool_calls_by_robot", "BUNDLED", "SUITE_SCENARIOS",
    "RobotSpec", "Scenario", "bundled_path", "bundled_scenario", "load_scenario",
    "parse_scenario", "SuiteTask", "dump_suite", "generate_task_suite", "gold_calls",
    "instantiations", "load_suite",
]
