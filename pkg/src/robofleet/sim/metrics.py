"""Tool-calling accuracy rate (AR) against gold traces.

A call is identified by ``(tool, signature)``, where the signature names the
call's object or target. Calls are grouped per robot and aligned with the
gold calls for the same robot by longest common subsequence, so retries and
other extra calls count as insertions rather than errors. AR is the total
number of aligned matches divided by the gold length.
"""

from __future__ import annotations

from typing import Any, Mapping, Sequence

from ..errors import MissingGoldError


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Classic dynamic-programming LCS length, O(len(a) * len(b))."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def _key(call: Mapping[str, Any]) -> tuple[str, str]:
    return call["tool"], call.get("signature", "")


def by_robot(calls: Sequence[Mapping]) -> dict[str, list[tuple[str, str]]]:
    out: dict[str, list] = {}
    for c in calls:
        out.setdefault(c.get("robot", ""), []).append(_key(c))
    return out


def _calls_of(trace, task_id: str | None) -> list[Mapping]:
    if hasattr(trace, "tool_calls"):
        return trace.tool_calls(task_id)
    return list(trace)


def _gold_of(gold, task_id: str | None) -> list[Mapping]:
    if gold is None:
        raise MissingGoldError(task_id or "no gold trace given")
    if isinstance(gold, Mapping):
        if "calls" in gold:
            return list(gold["calls"])
        if task_id is None or task_id not in gold:
            raise MissingGoldError(task_id or "gold mapping needs a task id")
        return _gold_of(gold[task_id], task_id)
    return list(gold)


def compute_ar(trace, gold, task_id: str | None = None) -> float:
    """AR in [0, 1] for ``trace`` (a RunTrace or a list of calls) against ``gold``.

    ``gold`` may be a call list, a ``{"calls": [...]}`` record or a mapping of
    task id to either. An empty gold trace scores 1.0 only for an empty trace.
    """
    calls = _calls_of(trace, task_id)
    ref = _gold_of(gold, task_id)
    if not ref:
        return 1.0 if not calls else 0.0
    got = by_robot(calls)
    matched = sum(lcs_length(got.get(rid, []), seq) for rid, seq in by_robot(ref).items())
    return matched / len(ref)


def tool_calls_by_robot(trace, task_id: str | None = None) -> dict[str, int]:
    counts: dict[str, int] = {}
    for c in _calls_of(trace, task_id):
        counts[c["robot"]] = counts.get(c["robot"], 0) + 1
    return dict(sorted(counts.items()))


def ar_report(results: Sequence[Mapping]) -> dict:
    """Summarize ``[{task_id, ar, calls}]`` rows into a report dict."""
    rows = sorted(results, key=lambda r: r["task_id"])
    n = len(rows)
    return {
        "tasks": n,
        "mean_ar": sum(r["ar"] for r in rows) / n if n else 0.0,
        "min_ar": min((r["ar"] for r in rows), default=0.0),
        "mean_calls": sum(r["calls"] for r in rows) / n if n else 0.0,
        "rows": rows,
    }
