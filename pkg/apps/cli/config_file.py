# apps/cli/config_file.py

"""
Experiment config files.

    # comment
    [experiment baseline]
    architecture = DTS
    pattern = work_sharing_feedback
    consumers = 8
    memory_budget = 512 MiB

    [profile tiny]
    payload_bytes = 4 KiB
    target_rate_bps = 1e9

    [hop node-port]
    latency = 250 us

Durations take ``us``, ``ms`` or ``s`` (seconds when bare), sizes take
``KiB``, ``MiB`` or ``GiB`` (bytes when bare). Unknown sections and keys
are errors.
"""

import configparser
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from pydantic import ValidationError

from apps.core.exception import InvalidRequestException
from apps.streaming.harness.schema import ExperimentConfig
from apps.streaming.netpath.schema import HopOverride
from apps.streaming.workload.schema import WorkloadProfile
from apps.streaming.workload.service import BUILTIN_PROFILES, ProfileRegistry, registry

logger = logging.getLogger(__name__)

EXPERIMENT = "experiment"
PROFILE = "profile"
HOP = "hop"

DURATION_KEYS = {"duration", "processing_time", "latency", "tls_overhead"}
SIZE_KEYS = {"memory_budget", "reply_bytes", "payload_bytes", "per_event_bytes"}

DURATION_UNITS = {"us": 1e-6, "ms": 1e-3, "s": 1.0}
SIZE_UNITS = {"B": 1, "KiB": 1024, "MiB": 1024**2, "GiB": 1024**3}

_DURATION_RE = re.compile(r"^([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(us|ms|s)?$")
_SIZE_RE = re.compile(r"^([0-9]+)\s*(B|KiB|MiB|GiB)?$")

_SECTION_FIELDS = {
    EXPERIMENT: set(ExperimentConfig.model_fields) - {"hops", "label"},
    PROFILE: set(WorkloadProfile.model_fields) - {"name"},
    HOP: set(HopOverride.model_fields),
}


class ConfigParseException(InvalidRequestException):
    default_error_code = "CONFIG_PARSE_ERROR"


@dataclass
class ConfigFile:
    experiments: list[ExperimentConfig]
    profiles: ProfileRegistry
    hops: dict[str, HopOverride] = field(default_factory=dict)


def parse_duration(text: str) -> float:
    match = _DURATION_RE.match(text.strip())
    if match is None:
        raise ConfigParseException(f"Invalid duration '{text}' (expected e.g. 250 us, 2 ms, 0.5 s)")
    value, unit = match.groups()
    return float(value) * DURATION_UNITS[unit or "s"]


def parse_size(text: str) -> int:
    match = _SIZE_RE.match(text.strip())
    if match is None:
        raise ConfigParseException(f"Invalid size '{text}' (expected e.g. 16384, 16 KiB, 1 MiB)")
    value, unit = match.groups()
    return int(value) * SIZE_UNITS[unit or "B"]


def _section_values(kind: str, section_name: str, items: dict[str, str]) -> dict:
    allowed = _SECTION_FIELDS[kind]
    values = {}
    for key, raw in items.items():
        if key not in allowed:
            raise InvalidRequestException(
                f"Unknown key '{key}' in [{section_name}]", error_code="UNKNOWN_KEY"
            )
        if key in DURATION_KEYS:
            values[key] = parse_duration(raw)
        elif key in SIZE_KEYS:
            values[key] = parse_size(raw)
        else:
            values[key] = raw.strip()
    return values


def _validate(model, section_name: str, values: dict):
    try:
        return model.model_validate(values)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(map(str, err['loc'])) or section_name}: {err['msg']}" for err in e.errors())
        raise InvalidRequestException(f"[{section_name}] {problems}", error_code="INVALID_CONFIG")


def parse_config(text: str, source: str = "<string>", seed_override: int | None = None) -> ConfigFile:
    parser = configparser.ConfigParser(
        delimiters=("=",),
        comment_prefixes=("#",),
        inline_comment_prefixes=("#",),
        interpolation=None,
        default_section="\0",
        strict=True,
        empty_lines_in_values=False,
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigParseException(f"{source}: {e}")

    profiles = registry.copy()
    hops: dict[str, HopOverride] = {}
    experiment_sections: list[tuple[str, str | None, dict]] = []

    for section_name in parser.sections():
        kind, _, name = section_name.partition(" ")
        name = name.strip() or None
        if kind not in _SECTION_FIELDS:
            raise ConfigParseException(f"{source}: unknown section [{section_name}]")
        values = _section_values(kind, section_name, dict(parser.items(section_name)))
        if kind == PROFILE:
            if name is None:
                raise ConfigParseException(f"{source}: [profile] needs a name")
            profiles.register(_validate(WorkloadProfile, section_name, {"name": name, **values}))
        elif kind == HOP:
            if name is None:
                raise ConfigParseException(f"{source}: [hop] needs a hop name")
            hops[name] = _validate(HopOverride, section_name, values)
        else:
            experiment_sections.append((section_name, name, values))

    if not experiment_sections:
        raise ConfigParseException(f"{source}: no [experiment] section")

    experiments = []
    for section_name, label, values in experiment_sections:
        if seed_override is not None:
            values["seed"] = seed_override
        config = _validate(ExperimentConfig, section_name, {**values, "label": label, "hops": hops})
        profiles.lookup(config.workload)
        experiments.append(config)
    logger.debug(f"Loaded {len(experiments)} experiment(s) from {source}")
    return ConfigFile(experiments=experiments, profiles=profiles, hops=hops)


def load_config_file(path: str | Path, seed_override: int | None = None) -> ConfigFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigParseException(f"Cannot read {path}: {e}")
    return parse_config(text, source=str(path), seed_override=seed_override)


# ===== Dump =====

def _format(key: str, value) -> str:
    if hasattr(value, "value"):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if key in DURATION_KEYS:
        return f"{value!r} s"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _section_lines(header: str, values: dict) -> list[str]:
    lines = [f"[{header}]"]
    lines += [f"{key} = {_format(key, value)}" for key, value in values.items() if value is not None]
    return lines


def dump_config(configs: ExperimentConfig | Sequence[ExperimentConfig], profiles: ProfileRegistry | None = None) -> str:
    """Effective configuration in config-file form; parse_config reads it back unchanged."""
    if isinstance(configs, ExperimentConfig):
        configs = [configs]
    blocks = []
    builtin = {profile.name for profile in BUILTIN_PROFILES}
    for workload in dict.fromkeys(config.workload for config in configs):
        if workload not in builtin:
            profile = (profiles or registry).lookup(workload)
            blocks.append(_section_lines(f"{PROFILE} {profile.name}", profile.model_dump(exclude={"name"})))
    # hop sections apply to every experiment of a file
    for hop, override in sorted(configs[0].hops.items()):
        blocks.append(_section_lines(f"{HOP} {hop}", override.model_dump()))

    for config in configs:
        header = f"{EXPERIMENT} {config.label}" if config.label else EXPERIMENT
        blocks.append(_section_lines(header, config.model_dump(exclude={"hops", "label"})))
    return "\n\n".join("\n".join(lines) for lines in blocks) + "\n"
