from . import goals
from .context import SCOPES, compose_context
from .prompts import TEMPLATES, render_prompt, render_text
from .remote import FallbackPlanner, RemotePlanner
from .response import RESPONSE_SCHEMA, parse_plan_response, render_plan_response
from .rules import RuleBasedPlanner, TaskTemplate, rule_based_plan
from .types import (
    GlobalTask,
    PlannerInput,
    ReasoningTrace,
    Subtask,
    SubtaskGraph,
    Violation,
    compute_depths,
    validate_graph,
)

__all__ = [
    "GlobalTask", "PlannerInput", "RESPONSE_SCHEMA", "ReasoningTrace", "RuleBasedPlanner",
    "SCOPES", "Subtask", "SubtaskGraph", "TEMPLATES", "TaskTemplate", "Violation",
    "FallbackPlanner", "RemotePlanner", "compose_context", "compute_depths", "goals",
    "parse_plan_response", "render_plan_response", "render_prompt", "render_text",
    "rule_based_plan", "validate_graph",
]
