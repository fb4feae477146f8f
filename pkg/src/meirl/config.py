"""Config dataclass <-> JSON plumbing with unknown-key rejection."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .errors import ConfigError


def from_dict(cls, data: dict):
    """Build a config dataclass from a JSON-shaped dict. Unknown keys are errors;
    JSON arrays become tuples so defaults and round-tripped configs compare equal."""
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} config must be a JSON object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {unknown}")
    kwargs = {}
    for name, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def _jsonify(value):
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    return value


def to_dict(cfg) -> dict:
    # JSON-native types throughout, so a round trip through disk compares equal
    return _jsonify(dataclasses.asdict(cfg))


def load_json(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e}") from e


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
