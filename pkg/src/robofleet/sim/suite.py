"""Seeded task suites with gold traces taken from failure-free runs."""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from ..errors import SchemaError, TemplateExhaustionError
from ..planner import GlobalTask, TaskTemplate
from .harness import RunOptions, run
from .scenario import Scenario

VOWELS = "aeiou"


def with_article(word: str, article) -> str:
    if article is True or article == "a":
        return f"{'an' if word[:1].lower() in VOWELS else 'a'} {word}"
    if article == "the":
        return f"the {word}"
    return word


def _slot_values(spec: Mapping) -> list[str]:
    values = [with_article(v, spec.get("article")) for v in spec["values"]]
    choose = int(spec.get("choose", 1))
    if choose <= 1:
        return values
    return [" and ".join(combo) for combo in itertools.permutations(values, choose)]


def instantiations(template: TaskTemplate) -> list[str]:
    """Every instruction a template's slots can produce, in a stable order."""
    if not template.phrasing:
        return []
    names = sorted(template.slots)
    pools = [_slot_values(template.slots[n]) for n in names]
    return [template.phrasing.format(**dict(zip(names, combo)))
            for combo in itertools.product(*pools)]


def all_instructions(scenario: Scenario) -> list[tuple[str, str]]:
    out = []
    for t in scenario.templates:
        out.extend((t.name, text) for text in instantiations(t))
    return out


@dataclass
class SuiteTask:
    task: GlobalTask
    template: str
    gold: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"task": self.task.to_dict(), "template": self.template, "gold": self.gold}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SuiteTask":
        return cls(GlobalTask.from_dict(data["task"]), data.get("template", ""),
                   list(data.get("gold", [])))


def gold_calls(scenario: Scenario, task: GlobalTask, options: RunOptions | None = None
               ) -> list[dict]:
    """Calls of an ideal (injection-free) run. Raises RuntimeError if it fails."""
    trace = run(scenario, [task], options, injections=[])
    if not trace.succeeded():
        raise RuntimeError(f"ideal run of {task.instruction!r} did not complete: "
                           f"{trace.task_outcomes}")
    return [{k: c[k] for k in ("robot", "tool", "signature")} for c in trace.tool_calls()]


def generate_task_suite(scenario: Scenario, n: int = 50, seed: int = 0,
                        with_gold: bool = True) -> list[SuiteTask]:
    """Sample ``n`` distinct template instantiations and freeze their gold traces."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return []
    pool = all_instructions(scenario)
    if not pool:
        raise TemplateExhaustionError(f"{scenario.name} has no phrasable task templates")
    if n > len(pool):
        raise TemplateExhaustionError(
            f"{scenario.name} has {len(pool)} distinct tasks, {n} requested")
    picked = random.Random(seed).sample(pool, n)
    suite = []
    for i, (template, text) in enumerate(picked, 1):
        task = GlobalTask(f"{scenario.name}-{i:03d}", text)
        gold = gold_calls(scenario, task) if with_gold else []
        suite.append(SuiteTask(task, template, gold))
    return suite


def dump_suite(suite: Iterable[SuiteTask], path: str | Path) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in suite], sort_keys=True, indent=1)
                          + "\n")


def load_suite(path: str | Path) -> list[SuiteTask]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise SchemaError(f"cannot read suite: {exc}", str(path)) from None
    if not isinstance(data, list):
        raise SchemaError("suite must be a list", str(path))
    return [SuiteTask.from_dict(d) for d in data]
