from .catalog import (
    FailureInjection,
    ToolCatalog,
    ToolProfile,
    baseline_catalog,
    bind_skills,
    register_tool,
)
from .executor import (
    FAILURE,
    REJECTED,
    SUCCESS,
    InjectionPolicy,
    SkillLibrary,
    ToolInvocation,
    ToolResult,
    call_signature,
)
from .world import World, divergent_nodes, robot_node

__all__ = [
    "FAILURE", "REJECTED", "SUCCESS", "FailureInjection", "InjectionPolicy", "SkillLibrary",
    "ToolCatalog", "ToolInvocation", "ToolProfile", "ToolResult", "World", "baseline_catalog",
    "bind_skills", "call_signature", "divergent_nodes", "register_tool", "robot_node",
]
