"""Command-line entry point: ``robofleet <verb> ...``.

Exit codes (see ``docs/cli.md``):

    0  success
    1  audit or validation failure, task not completed, replay mismatch
    2  usage, path or schema error
    3  infeasible task (planner could not decompose it)
    4  unreachable endpoint or bind failure
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any

from . import __version__
from .config import load_config
from .errors import (BusError, EndpointUnavailableError, InfeasibleTaskError, MissingGoldError,
                     NoRobotsError, PlannerError, RobofleetError, ScenarioError,
                     TemplateExhaustionError, UnmatchedTemplateError)
from .planner import GlobalTask, SubtaskGraph, validate_graph
from .planner.remote import parse_endpoint
from .skills import FailureInjection

log = logging.getLogger("robofleet")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_UNREACHABLE = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class Output:
    """Collects a result dict and prints it as text or JSON."""

    def __init__(self, fmt: str):
        self.fmt = fmt

    def emit(self, data: dict, text: str | None = None) -> None:
        if self.fmt == "json":
            print(json.dumps(data, sort_keys=True))
        else:
            print(text if text is not None else json.dumps(data, indent=2, sort_keys=True))


# ------------------------------------------------------------------ helpers


def _scenario(ref: str):
    from .sim import load_scenario
    return load_scenario(ref)


def parse_injection(spec: str) -> FailureInjection:
    """``tool:mode:parameter[:robot[:seed]]``, e.g. ``grasp:fail_first_k:1``."""
    parts = spec.split(":")
    if len(parts) < 3:
        raise CliError(EXIT_USAGE, f"bad --inject {spec!r}; expected tool:mode:parameter")
    try:
        return FailureInjection(parts[0], parts[1], float(parts[2]),
                                int(parts[4]) if len(parts) > 4 else 0,
                                parts[3] or None if len(parts) > 3 else None)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"bad --inject {spec!r}: {exc}") from None


def _config(args, **flags):
    return load_config(getattr(args, "config", None), flags)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ------------------------------------------------------------------ verbs


def cmd_run(args, out: Output) -> int:
    from .sim import RunOptions, ar_report, audit_trace, compute_ar, generate_task_suite, run
    from .sim.suite import dump_suite

    cfg = _config(args, seed=args.seed, retry_limit=args.retry_limit,
                  max_replans=args.max_replans)
    scenario = _scenario(args.scenario)
    seed = scenario.seed if cfg.seed is None else cfg.seed
    opts = RunOptions(seed, cfg.retry_limit, cfg.max_replans, cfg.budget,
                      cfg.rendezvous_timeout, cfg.context_scope)
    injections = list(scenario.injections) + [parse_injection(s) for s in args.inject or ()]
    outdir = Path(args.out)

    if args.suite is not None:
        suite = generate_task_suite(scenario, args.suite, seed)
        outdir.mkdir(parents=True, exist_ok=True)
        dump_suite(suite, outdir / "suite.json")
        rows, audits_ok = [], True
        for item in suite:
            trace = run(scenario, [item.task], opts, injections)
            _write(outdir / "traces" / f"{item.task.task_id}.json", trace.dumps())
            rep = audit_trace(trace)
            audits_ok &= rep.ok
            rows.append({"task_id": item.task.task_id, "instruction": item.task.instruction,
                         "ar": compute_ar(trace, item.gold), "calls": len(trace.tool_calls()),
                         "status": trace.task_outcomes[0]["status"], "audit_ok": rep.ok})
        report = ar_report(rows)
        report.update(scenario=scenario.name, seed=seed, audit_ok=audits_ok)
        _write(outdir / "ar_report.json", json.dumps(report, indent=1, sort_keys=True) + "\n")
        out.emit({k: v for k, v in report.items() if k != "rows"},
                 f"{scenario.name}: {report['tasks']} tasks, mean AR {report['mean_ar']:.4f}, "
                 f"mean calls {report['mean_calls']:.2f}, audit "
                 f"{'ok' if audits_ok else 'FAILED'}")
        return EXIT_OK if audits_ok else EXIT_FAILED

    if not args.task:
        raise CliError(EXIT_USAGE, "run needs --task or --suite")
    tasks = [GlobalTask(f"t{i}", t) for i, t in enumerate(args.task, 1)]
    trace = run(scenario, tasks, opts, injections)
    rep = audit_trace(trace)
    _write(outdir / "trace.json", trace.dumps())
    _write(outdir / "memory.json", json.dumps(trace.final_memory, indent=1, sort_keys=True) + "\n")
    result = {"scenario": scenario.name, "seed": seed, "makespan": trace.makespan,
              "tasks": trace.task_outcomes, "audit": rep.to_dict(),
              "trace": str(outdir / "trace.json")}
    if args.gold:
        gold = json.loads(Path(args.gold).read_text())
        result["ar"] = {t.task_id: compute_ar(trace, gold, t.task_id) for t in tasks}
        _write(outdir / "ar_report.json", json.dumps(result["ar"], indent=1, sort_keys=True))
    lines = [f"{t['task_id']}: {t['status']}  {t['instruction']}"
             + (f"  (replans: {t['replans']})" if t.get("replans") else "")
             + (f"  [{t['error']}]" if t.get("error") else "")
             for t in trace.task_outcomes]
    lines.append(f"makespan {trace.makespan:g}s, audit {'ok' if rep.ok else 'FAILED'}, "
                 f"trace {outdir / 'trace.json'}")
    out.emit(result, "\n".join(lines))
    if not rep.ok:
        return EXIT_FAILED
    statuses = {t["status"] for t in trace.task_outcomes}
    if "infeasible" in statuses:
        return EXIT_INFEASIBLE
    return EXIT_OK if statuses == {"completed"} else EXIT_FAILED


def cmd_serve(args, out: Output) -> int:
    from .kernel import Kernel

    cfg = _config(args, endpoint=args.endpoint, planner_endpoint=args.planner_endpoint)
    host, port = parse_endpoint(cfg.endpoint)
    kernel = Kernel(_scenario(args.scenario), cfg, args.time_scale)
    try:
        addr = kernel.start(host, port)
    except EndpointUnavailableError as exc:
        raise CliError(EXIT_UNREACHABLE, str(exc)) from None
    out.emit({"serving": f"{addr[0]}:{addr[1]}", "scenario": kernel.scenario.name},
             f"kernel for {kernel.scenario.name} listening on {addr[0]}:{addr[1]}")
    sys.stdout.flush()
    try:
        deadline = time.monotonic() + args.duration if args.duration else None
        while deadline is None or time.monotonic() < deadline:
            time.sleep(0.2)
    except KeyboardInterrupt:
        pass
    finally:
        kernel.stop()
    return EXIT_OK


def _client(endpoint: str):
    from .bus import BusClient
    host, port = parse_endpoint(endpoint)
    try:
        return BusClient(host, port)
    except EndpointUnavailableError as exc:
        raise CliError(EXIT_UNREACHABLE, f"kernel unreachable: {exc}") from None


def _kernel_call(client, op: str, **fields):
    try:
        return client.call(op, **fields)
    except EndpointUnavailableError as exc:
        raise CliError(EXIT_UNREACHABLE, f"kernel unreachable: {exc}") from None
    except BusError as exc:
        text = str(exc)
        if text.startswith("SchemaError"):
            raise CliError(EXIT_USAGE, text) from None
        if any(text.startswith(n) for n in ("InfeasibleTaskError", "UnmatchedTemplateError",
                                            "NoRobotsError", "PlanValidationError")):
            raise CliError(EXIT_INFEASIBLE, text) from None
        raise CliError(EXIT_FAILED, text) from None


def cmd_submit(args, out: Output) -> int:
    if not args.instruction.strip():
        raise CliError(EXIT_USAGE, "instruction must be non-empty")
    cfg = _config(args, endpoint=args.endpoint)
    client = _client(cfg.endpoint)
    try:
        gid = _kernel_call(client, "submit", instruction=args.instruction)["graph_id"]
        result: dict[str, Any] = {"graph_id": gid}
        if args.wait:
            deadline = time.monotonic() + args.wait
            status = "active"
            while time.monotonic() < deadline:
                st = _kernel_call(client, "status")["status"]
                chain = {g["graph_id"]: g for g in st["graphs"]}
                g = chain[gid]
                while g.get("replaced_by"):
                    g = chain[g["replaced_by"]]
                status = g["status"]
                if status not in ("active", "escalated", "replanning"):
                    break
                time.sleep(0.1)
            result["status"] = status
    finally:
        client.close()
    out.emit(result, " ".join(f"{k}={v}" for k, v in result.items()))
    if args.wait and result["status"] != "completed":
        return EXIT_FAILED
    return EXIT_OK


def cmd_inspect(args, out: Output) -> int:
    if args.endpoint:
        client = _client(args.endpoint)
        try:
            op = "scene" if args.what in ("memory", "world") else "status"
            data = _kernel_call(client, op)
        finally:
            client.close()
        out.emit({k: v for k, v in data.items() if k not in ("rid", "op", "ok")})
        return EXIT_OK
    if not args.trace:
        raise CliError(EXIT_USAGE, "inspect needs a trace file or --endpoint")
    from .sim import RunTrace, audit_trace
    trace = RunTrace.load(args.trace)
    if args.what == "summary":
        rep = audit_trace(trace)
        data = {"scenario": trace.scenario.get("name"), "seed": trace.seed,
                "makespan": trace.makespan, "tasks": trace.task_outcomes,
                "events": len(trace.events), "tool_calls": len(trace.tool_calls()),
                "audit": rep.to_dict()}
        lines = [f"scenario {data['scenario']} seed {trace.seed} makespan {trace.makespan:g}s"]
        lines += [f"  {t['task_id']}: {t['status']}  {t['instruction']}"
                  for t in trace.task_outcomes]
        lines += [f"  {sid}: {o['state']} (attempt {o['attempt']})"
                  for sid, o in sorted(trace.outcomes.items())]
        lines.append(f"audit {'ok' if rep.ok else 'FAILED'}; {data['tool_calls']} tool calls")
        out.emit(data, "\n".join(lines))
    else:
        key = {"events": "events", "outcomes": "outcomes", "memory": "final_memory",
               "world": "final_world", "calls": None}[args.what]
        data = trace.tool_calls() if key is None else getattr(trace, key)
        out.emit({args.what: data})
    return EXIT_OK


def cmd_metrics(args, out: Output) -> int:
    from .sim import RunTrace, compute_ar, tool_calls_by_robot
    trace = RunTrace.load(args.trace)
    try:
        gold = json.loads(Path(args.gold).read_text())
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_USAGE, f"cannot read gold file: {exc}") from None
    if isinstance(gold, list) and gold and isinstance(gold[0], dict) and "task" in gold[0]:
        gold = {g["task"]["task_id"]: g["gold"] for g in gold}  # a saved suite
    task_ids = [args.task] if args.task else [t["task_id"] for t in trace.task_outcomes]
    rows = {}
    for tid in task_ids:
        rows[tid] = {"ar": compute_ar(trace, gold, tid),
                     "calls_by_robot": tool_calls_by_robot(trace, tid)}
    out.emit({"ar": rows}, "\n".join(f"{tid}: AR {r['ar']:.4f}  calls {r['calls_by_robot']}"
                                     for tid, r in rows.items()))
    return EXIT_OK


def cmd_replay(args, out: Output) -> int:
    from .sim import RunTrace, replay
    original = Path(args.trace).read_text() if Path(args.trace).exists() else None
    if original is None:
        raise CliError(EXIT_USAGE, f"no such trace {args.trace}")
    again = replay(RunTrace.load(args.trace)).dumps()
    same = again == original
    if args.out:
        _write(Path(args.out), again)
    out.emit({"identical": same, "bytes": len(again)},
             "replay identical" if same else "replay DIFFERS from the stored trace")
    return EXIT_OK if same else EXIT_FAILED


def cmd_latency(args, out: Output) -> int:
    from .bus import EchoEndpoint, InProcessBus, measure_socket_latency
    from .bus.wire import BusServer, RemoteEchoEndpoint
    from .memory.registry import RobotProfile

    if args.n <= 0:
        raise CliError(EXIT_USAGE, "latency needs -n >= 1")
    profile = RobotProfile("echo", "single_arm", {"navigate"}, {"lab"})
    bus = InProcessBus()
    if args.transport == "inproc":
        ep = EchoEndpoint(bus, profile)
        try:
            stats = bus.measure_latency(args.n)
        finally:
            ep.stop()
    else:
        try:
            server = BusServer(bus).start()
        except EndpointUnavailableError as exc:
            raise CliError(EXIT_UNREACHABLE, str(exc)) from None
        host, port = server.address
        ep = RemoteEchoEndpoint(host, port, profile)
        try:
            stats = measure_socket_latency(args.n, host, port, "echo")
        finally:
            ep.stop()
            server.stop()
    stats["transport"] = args.transport
    out.emit(stats, f"{args.transport}: n={stats['n']} mean={stats['mean'] * 1e3:.4f} ms "
                    f"median={stats['median'] * 1e3:.4f} ms p99={stats['p99'] * 1e3:.4f} ms")
    return EXIT_OK


def cmd_validate(args, out: Output) -> int:
    try:
        data = json.loads(Path(args.plan).read_text())
        graph = SubtaskGraph.from_dict(data.get("graph", data))
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot read plan: {exc}") from None
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise CliError(EXIT_USAGE, f"plan does not match the graph schema: {exc}") from None
    registry = skills = None
    if args.scenario:
        scenario = _scenario(args.scenario)
        registry = set(scenario.robots)
        skills = {rid: p.skills for rid, p in scenario.profiles.items()}
    violations = validate_graph(graph, registry, skills)
    out.emit({"valid": not violations, "violations": [str(v) for v in violations]},
             "valid" if not violations else "\n".join(str(v) for v in violations))
    return EXIT_OK if not violations else EXIT_FAILED


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("text", "json"), default="text",
                        help="output format (default: text)")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="robofleet", description="Multi-robot task orchestration.")
    ap.add_argument("--version", action="version", version=f"robofleet {__version__}")
    sub = ap.add_subparsers(dest="verb", metavar="VERB")
    sub.required = True

    p = sub.add_parser("run", parents=[common], help="simulate a scenario")
    p.add_argument("scenario", help="bundled scenario name or scenario file")
    p.add_argument("--task", action="append", help="instruction (repeatable)")
    p.add_argument("--suite", type=int, metavar="N", help="generate and run N suite tasks")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs", help="output directory (default: runs)")
    p.add_argument("--inject", action="append", metavar="SPEC",
                   help="failure injection tool:mode:parameter[:robot[:seed]]")
    p.add_argument("--gold", help="gold calls file for an AR report")
    p.add_argument("--retry-limit", type=int)
    p.add_argument("--max-replans", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", parents=[common], help="run a live kernel")
    p.add_argument("scenario")
    p.add_argument("--endpoint", help="host:port to bind")
    p.add_argument("--planner-endpoint", help="remote planner host:port")
    p.add_argument("--time-scale", type=float, default=0.0,
                   help="real seconds per simulated tool second (default: 0)")
    p.add_argument("--duration", type=float, help="stop after this many seconds")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("submit", parents=[common], help="submit a task to a live kernel")
    p.add_argument("instruction")
    p.add_argument("--endpoint")
    p.add_argument("--wait", type=float, metavar="SECONDS",
                   help="poll until the graph finishes")
    p.set_defaults(func=cmd_submit)

    p = sub.add_parser("inspect", parents=[common], help="inspect a trace or a live kernel")
    p.add_argument("trace", nargs="?")
    p.add_argument("--endpoint")
    p.add_argument("--what", default="summary",
                   choices=("summary", "events", "outcomes", "memory", "world", "calls"))
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("metrics", parents=[common], help="AR of a trace against gold calls")
    p.add_argument("trace")
    p.add_argument("--gold", required=True)
    p.add_argument("--task")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("replay", parents=[common], help="re-execute a trace and compare")
    p.add_argument("trace")
    p.add_argument("--out", help="write the regenerated trace here")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("latency", parents=[common], help="bus round-trip latency probe")
    p.add_argument("-n", type=int, default=1000)
    p.add_argument("--transport", choices=("inproc", "socket"), default="inproc")
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("validate", parents=[common], help="validate a plan file")
    p.add_argument("plan")
    p.add_argument("--scenario", help="check assignees and skills against a scenario")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    out = Output(args.format)
    try:
        return args.func(args, out)
    except CliError as exc:
        code, message = exc.code, str(exc)
    except (InfeasibleTaskError, UnmatchedTemplateError, NoRobotsError) as exc:
        code, message = EXIT_INFEASIBLE, f"{type(exc).__name__}: {exc}"
    except (ScenarioError, MissingGoldError, TemplateExhaustionError) as exc:
        code, message = EXIT_USAGE, f"{type(exc).__name__}: {exc}"
    except EndpointUnavailableError as exc:
        code, message = EXIT_UNREACHABLE, f"{type(exc).__name__}: {exc}"
    except PlannerError as exc:
        code, message = EXIT_INFEASIBLE, f"{type(exc).__name__}: {exc}"
    except RobofleetError as exc:
        code, message = EXIT_FAILED, f"{type(exc).__name__}: {exc}"
    except OSError as exc:
        code, message = EXIT_USAGE, f"{type(exc).__name__}: {exc}"
    if args.format == "json":
        print(json.dumps({"error": message, "exit_code": code}, sort_keys=True))
    else:
        print(f"error: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
