"""Experiment configuration: flat `section.key = value` text files.

Every key has a declared default, so an empty file is a complete full-scale
configuration: 20x20 grid, 4 agents chasing 4 preys with a 7x7 field of
view, two uplink subchannels. Unknown keys are rejected outright;
individually-parsed values that violate module invariants are collected and
reported together.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .codec import CodecConfig
from .gridworld import OBSTACLE_MODES, GridConfig, observation_dim
from .learners import LearnerConfig
from .trainer import SCHEDULER_MODES
from .wireless import WirelessConfig


class ParseError(ValueError):
    """Malformed config text: bad syntax, unknown or duplicate keys."""


class ValidationError(ValueError):
    """Structurally valid config whose values violate invariants."""


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    wireless: WirelessConfig = field(default_factory=WirelessConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    scheduler_mode: str = "learned"
    n_train_episodes: int = 20_000
    n_eval_episodes: int = 1000
    eval_obstacle_mode: str = "dynamic_density"
    seeds: tuple = (0,)
    output_dir: str = "runs"
    checkpoint_period: int = 5000
    export_trajectories: bool = False
    export_channel_trace: bool = False

    def validate(self):
        problems = []
        problems += [f"grid: {p}" for p in self.grid.validate()]
        problems += [f"wireless: {p}" for p in self.wireless.validate()]
        problems += [f"codec: {p}" for p in self.codec.validate(observation_dim(self.grid))]
        problems += [f"learner: {p}" for p in self.learner.validate()]
        if self.scheduler_mode not in SCHEDULER_MODES:
            problems.append(f"scheduler_mode must be one of {SCHEDULER_MODES}")
        if self.eval_obstacle_mode not in OBSTACLE_MODES:
            problems.append(f"eval_obstacle_mode must be one of {OBSTACLE_MODES}")
        if self.n_train_episodes < 0:
            problems.append("n_train_episodes must be >= 0")
        if self.n_eval_episodes < 1:
            problems.append("n_eval_episodes must be >= 1")
        if self.checkpoint_period < 1:
            problems.append("checkpoint_period must be >= 1")
        if not self.seeds:
            problems.append("seeds must not be empty")
        elif any(s < 0 for s in self.seeds):
            problems.append("seeds must be >= 0")
        if self.grid.n_agents < 2:
            problems.append("the uplink schedule needs n_agents >= 2")
        return problems


def _parse_bool(text):
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_seeds(text):
    return tuple(int(part.strip()) for part in text.split(",") if part.strip())


_SECTION_TYPES = {
    "grid": GridConfig,
    "wireless": WirelessConfig,
    "codec": CodecConfig,
    "learner": LearnerConfig,
}

_TOP_LEVEL_CASTERS = {
    "scheduler_mode": str,
    "n_train_episodes": int,
    "n_eval_episodes": int,
    "eval_obstacle_mode": str,
    "seeds": _parse_seeds,
    "output_dir": str,
    "checkpoint_period": int,
    "export_trajectories": _parse_bool,
    "export_channel_trace": _parse_bool,
}


def _schema():
    """key -> caster for every accepted config key."""
    schema = dict(_TOP_LEVEL_CASTERS)
    for section, cls in _SECTION_TYPES.items():
        for f in fields(cls):
            if f.type in ("int", int):
                caster = int
            elif f.type in ("float", float):
                caster = float
            elif f.type in ("bool", bool):
                caster = _parse_bool
            else:
                caster = str
            schema[f"{section}.{f.name}"] = caster
    return schema


_SCHEMA = _schema()


def parse_config_text(text: str) -> ExperimentConfig:
    values = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value', got {rawline!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise ParseError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ParseError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _SCHEMA[key](value)
        except ValueError as exc:
            raise ParseError(f"line {lineno}: bad value for {key!r}: {exc}") from None

    payload_explicit = "wireless.payload_bits" in values
    sections = {}
    for section, cls in _SECTION_TYPES.items():
        kwargs = {
            f.name: values.pop(f"{section}.{f.name}")
            for f in fields(cls)
            if f"{section}.{f.name}" in values
        }
        sections[section] = cls(**kwargs)

    config = ExperimentConfig(**sections, **values)
    if not payload_explicit:
        # payload defaults to the encoded feature size: feature_dim 32-bit words
        config = replace(config, wireless=replace(config.wireless, payload_bits=32 * config.codec.feature_dim))

    problems = config.validate()
    if problems:
        raise ValidationError("invalid config: " + "; ".join(problems))
    return config


def parse_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config_text(handle.read())


def config_to_text(config: ExperimentConfig) -> str:
    """Fully resolved, deterministic key = value dump (diffable provenance)."""
    lines = ["# resolved experiment configuration"]
    for section, cls in _SECTION_TYPES.items():
        obj = getattr(config, section)
        for f in fields(cls):
            lines.append(f"{section}.{f.name} = {getattr(obj, f.name)}")
    for key in _TOP_LEVEL_CASTERS:
        value = getattr(config, key)
        if key == "seeds":
            value = ",".join(str(s) for s in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
