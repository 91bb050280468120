"""Live kernel with two robot processes serving a burger order over TCP."""

import subprocess
import sys
import time

from robofleet.bus import BusClient
from robofleet.kernel import Kernel
from robofleet.sim import bundled_scenario


def main() -> int:
    kernel = Kernel(bundled_scenario("restaurant"))
    host, port = kernel.start("127.0.0.1", 0)
    robots = [subprocess.Popen([sys.executable, "-m", "robofleet.endpoint", "--scenario",
                                "restaurant", "--robot", rid, "--endpoint", f"{host}:{port}"])
              for rid in ("G1", "A2")]
    client = BusClient(host, port)
    try:
        while len(client.call("status")["status"]["registry"]) < 2:
            time.sleep(0.05)
        gid = client.call("submit",
                          instruction="I'm hungry and order a normal burger at table 2")["graph_id"]
        print("submitted", gid)
        deadline = time.monotonic() + 30
        while time.monotonic() < deadline:
            graph = client.call("status")["status"]["graphs"][0]
            if graph["status"] != "active":
                break
            time.sleep(0.1)
        for s in graph["subtasks"]:
            print(f"  {s['label']:<14} {s['state']}")
        print(graph["status"])
        return 0 if graph["status"] == "completed" else 1
    finally:
        client.close()
        for p in robots:
            p.terminate()
        kernel.stop()


if __name__ == "__main__":
    sys.exit(main())
