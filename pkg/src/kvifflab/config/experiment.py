"""
Experiment Configuration

Experiment documents are JSON files validated against a jsonschema schema.
Unknown keys are rejected, defaults are filled in, and dotted command-line
overrides (kviff.epsilon=5e-5) are applied before validation.

Example:
    {
      "scenario": "linear10d",
      "methods": ["kf", "pf", "enkf", "kviff"],
      "num_particles": 1000,
      "kviff": {"epsilon": 1e-3, "num_steps": 50, "init": "pf",
                "kernel": {"bandwidth": 10}}
    }
"""

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from jsonschema import Draft7Validator
from jsonschema.exceptions import best_match

from .settings import settings
from ..core.errors import ConfigError
from ..core.filters import METHODS, KvifConfig, needs_two_particles
from ..core.kernel import KernelSpec
from ..core.models import LINEAR_SCENARIOS, SCENARIO_NAMES


logger = logging.getLogger(__name__)

KVIFF_DEFAULTS = {
    "epsilon": 1e-3,
    "num_steps": 50,
    "init": "pf",
    "kernel": {"bandwidth": 1.0, "median_heuristic": False},
}

KVIFF_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "num_steps": {"type": "integer", "minimum": 0},
        "init": {"enum": ["raw", "pf", "enkf"]},
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bandwidth": {"type": "number", "exclusiveMinimum": 0},
                "median_heuristic": {"type": "boolean"},
            },
        },
    },
}

METHOD_SCHEMA = {
    "oneOf": [
        {"enum": list(METHODS)},
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": list(METHODS)},
                "label": {"type": "string", "minLength": 1, "pattern": "^[^,\\n]+$"},
                "kviff": KVIFF_SCHEMA,
            },
        },
    ]
}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario", "methods", "num_particles"],
    "properties": {
        "scenario": {"enum": SCENARIO_NAMES},
        "methods": {"type": "array", "minItems": 1, "items": METHOD_SCHEMA},
        "num_particles": {"type": "integer", "minimum": 1},
        "repeats": {"type": "integer", "minimum": 1},
        "base_seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "plot": {"type": "boolean"},
        "kviff": KVIFF_SCHEMA,
    },
}

_VALIDATOR = Draft7Validator(CONFIG_SCHEMA)


@dataclass
class MethodSpec:
    name: str
    label: str
    kviff: Optional[KvifConfig] = None


@dataclass
class ExperimentConfig:
    scenario: str
    methods: List[MethodSpec]
    num_particles: int
    repeats: int = 10
    base_seed: int = 0
    output_dir: Path = field(default_factory=lambda: Path(settings.output_dir))
    plot: bool = False

    @property
    def labels(self) -> List[str]:
        return [m.label for m in self.methods]


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _kvif_config(block: Dict[str, Any]) -> KvifConfig:
    kernel = block["kernel"]
    return KvifConfig(
        kernel=KernelSpec(bandwidth=float(kernel["bandwidth"]),
                          median_heuristic=bool(kernel.get("median_heuristic", False))),
        step_size=float(block["epsilon"]),
        num_steps=int(block["num_steps"]),
        initializer=block["init"],
    )


def parse_override(text: str):
    """Split key=value; the value is read as a JSON literal, else kept as a string"""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not of the form key=value", field="--set")
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return key.strip(), value


def apply_overrides(document: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Return a copy of document with dotted-path overrides applied"""
    result = copy.deepcopy(document)
    for text in overrides:
        key, value = parse_override(text)
        parts = key.split(".")
        node = result
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError("cannot descend into non-object value", field=key)
            node = child
        node[parts[-1]] = value
        logger.debug(f"Override {key} = {value!r}")
    return result


def validate_document(document: Dict[str, Any]) -> None:
    """Raise ConfigError naming the offending field for the most relevant schema violation"""
    error = best_match(_VALIDATOR.iter_errors(document))
    if error is None:
        return
    path = ".".join(str(part) for part in error.absolute_path)
    raise ConfigError(error.message, field=path or "config")


def config_from_dict(document: Dict[str, Any]) -> ExperimentConfig:
    validate_document(document)

    scenario = document["scenario"]
    top_kviff = _merge(KVIFF_DEFAULTS, document.get("kviff", {}))
    methods: List[MethodSpec] = []
    for entry in document["methods"]:
        if isinstance(entry, str):
            entry = {"name": entry}
        name = entry["name"]
        label = entry.get("label", name)
        kviff = _kvif_config(_merge(top_kviff, entry.get("kviff", {}))) if name == "kviff" else None
        methods.append(MethodSpec(name=name, label=label, kviff=kviff))

    labels = [m.label for m in methods]
    duplicates = sorted({label for label in labels if labels.count(label) > 1})
    if duplicates:
        raise ConfigError(f"duplicate method labels: {', '.join(duplicates)}", field="methods")
    if any(m.name == "kf" for m in methods) and scenario not in LINEAR_SCENARIOS:
        raise ConfigError(f"kf is only available on linear scenarios, not {scenario}", field="methods")
    if document["num_particles"] < 2:
        for m in methods:
            if needs_two_particles(m.name, m.kviff):
                raise ConfigError(f"{m.label} needs at least 2 particles", field="num_particles")

    return ExperimentConfig(
        scenario=scenario,
        methods=methods,
        num_particles=int(document["num_particles"]),
        repeats=int(document.get("repeats", 10)),
        base_seed=int(document.get("base_seed", 0)),
        output_dir=Path(document.get("output_dir", settings.output_dir)),
        plot=bool(document.get("plot", False)),
    )


def load_config(path: Union[str, Path], overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Read, override, validate and build an experiment configuration

    Raises:
        ConfigError: missing file, JSON syntax error (with line and column) or
            schema violation (with the offending field)
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e.strerror or e}", field=str(path)) from e
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(document, dict):
        raise ConfigError("top level must be a JSON object", field="config")

    config = config_from_dict(apply_overrides(document, overrides))
    logger.info(f"Loaded config {path}: {config.scenario}, methods {config.labels}, N={config.num_particles}")
    return config
