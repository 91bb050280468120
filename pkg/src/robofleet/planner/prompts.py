"""Rendering the decomposition and tool-calling prompts.

Templates are plain text files with ``${name}`` placeholders
(:class:`string.Template` syntax). The five planner operands are serialized
in a fixed order: scene, events, robot states, robot skills, task.
"""

from __future__ import annotations

import json
import string
from importlib import resources
from pathlib import Path
from typing import Mapping

from ..errors import MissingPlaceholderError
from .response import RESPONSE_SCHEMA
from .types import PlannerInput

TEMPLATES = ("decomposition", "tool_calling")


def _dump(value) -> str:
    return json.dumps(value, indent=1, sort_keys=True)


def load_template(name: str, directory: str | Path | None = None) -> str:
    if directory is not None:
        path = Path(directory) / f"{name}.txt"
        if not path.exists():
            raise MissingPlaceholderError(f"no prompt template {name!r} in {directory}")
        return path.read_text()
    if name not in TEMPLATES:
        raise MissingPlaceholderError(f"no prompt template {name!r}")
    return resources.files("robofleet.data.prompts").joinpath(f"{name}.txt").read_text()


def context_values(inp: PlannerInput) -> dict[str, str]:
    """Serialized operands, keyed by placeholder name."""
    return {
        "scene": _dump(inp.spatial.to_dict()),
        "events": "\n".join(json.dumps(e.to_dict(), sort_keys=True) for e in inp.temporal)
                  or "(none)",
        "robot_states": _dump([s.to_dict() for _, s in sorted(inp.robot_states.items())]),
        "robot_skills": _dump({rid: {"skills": sorted(skills),
                                     "motion_domain": sorted(inp.profiles[rid].motion_domain)
                                     if rid in inp.profiles else [],
                                     "embodiment": inp.profiles[rid].embodiment
                                     if rid in inp.profiles else None}
                               for rid, skills in sorted(inp.skill_catalog.items())}),
        "task": _dump(inp.task.to_dict()),
        "response_schema": _dump(RESPONSE_SCHEMA),
    }


def render_text(template: str, values: Mapping[str, str]) -> str:
    try:
        return string.Template(template).substitute(values)
    except KeyError as exc:
        raise MissingPlaceholderError(f"no value for placeholder {exc.args[0]!r}") from None
    except ValueError as exc:
        raise MissingPlaceholderError(f"malformed placeholder: {exc}") from None


def render_prompt(inp: PlannerInput, template: str = "decomposition",
                  extra: Mapping[str, str] | None = None,
                  directory: str | Path | None = None) -> str:
    """Render ``template`` for ``inp``. ``extra`` supplies or overrides placeholders."""
    values = context_values(inp)
    values.update(extra or {})
    return render_text(load_template(template, directory), values)
