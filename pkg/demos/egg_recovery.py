"""Fetch an egg that is hidden in a closed fridge and print each tool call."""

from robofleet.sim import bundled_scenario, run


def main() -> None:
    trace = run(bundled_scenario("household"), ["Search for an egg and place it on the table"])
    for call in trace.tool_calls():
        mark = "ok " if call["status"] == "success" else "ERR"
        print(f"{mark} {call['robot']} {call['tool']}({call['signature']})")
    print(trace.task_outcomes[0]["status"], f"in {trace.makespan:g} simulated seconds")


if __name__ == "__main__":
    main()
