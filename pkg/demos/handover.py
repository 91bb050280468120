"""Two robots fetch an orange and a knife, then meet for a handover.

Prints each subtask's lifecycle with virtual timestamps.
"""

from robofleet.sim import bundled_scenario, run


def main() -> None:
    trace = run(bundled_scenario("household"), ["Give me an orange and a knife"])
    for e in trace.events:
        p = e["payload"]
        if e["kind"] == "task_feedback" and p.get("event") == "subtask":
            robots = ",".join(p.get("robots") or [])
            print(f"t={e['time']:5.1f}  {p['subtask']:<10} {p['state']:<11} {robots}")
    print(trace.task_outcomes[0]["status"])


if __name__ == "__main__":
    main()
