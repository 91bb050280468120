"""Kernel configuration: defaults, a JSON file, ``ROBOFLEET_*`` variables, flags.

Later sources win: defaults < file < environment < command-line flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import SchemaError

ENV_PREFIX = "ROBOFLEET_"


@dataclass(frozen=True)
class Config:
    endpoint: str = "127.0.0.1:7411"
    planner_endpoint: str | None = None
    planner_timeout: float = 5.0
    seed: int | None = None
    retry_limit: int = 2
    max_replans: int = 2
    budget: int = 16
    rendezvous_timeout: float = 30.0
    context_scope: str = "reachable"
    heartbeat_interval: float = 1.0
    missed_beats: int = 3

    def to_dict(self) -> dict:
        return asdict(self)

    def merged(self, overrides: Mapping[str, Any]) -> "Config":
        """Apply non-None overrides, converting strings to each field's type."""
        patch = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in CONVERTERS:
                raise SchemaError(f"unknown config key {key!r}", key)
            try:
                patch[key] = CONVERTERS[key](value)
            except (TypeError, ValueError):
                raise SchemaError(f"{key} has a bad value {value!r}", key) from None
        return replace(self, **patch)


def _optional_str(value: Any) -> str | None:
    return str(value) or None


CONVERTERS = {
    "endpoint": str, "planner_endpoint": _optional_str, "planner_timeout": float,
    "seed": int, "retry_limit": int, "max_replans": int, "budget": int,
    "rendezvous_timeout": float, "context_scope": str, "heartbeat_interval": float,
    "missed_beats": int,
}


def from_file(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise SchemaError(f"cannot read config: {exc}", str(path)) from None
    except ValueError as exc:
        raise SchemaError(f"config is not valid JSON: {exc}", str(path)) from None
    if not isinstance(data, dict):
        raise SchemaError("config must be a JSON object", str(path))
    return data


def from_env(environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    names = {f.name for f in fields(Config)}
    out = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in names:
                out[name] = value
    return out


def load_config(path: str | Path | None = None, flags: Mapping[str, Any] | None = None,
                environ: Mapping[str, str] | None = None) -> Config:
    cfg = Config()
    if path is not None:
        cfg = cfg.merged(from_file(path))
    cfg = cfg.merged(from_env(environ))
    return cfg.merged(flags or {})
