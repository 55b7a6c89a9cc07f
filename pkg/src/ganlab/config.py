"""Experiment configuration files.

A config is sectioned key/value text (TOML-like) with JSON-typed values and
an explicit schema version. Unknown sections or keys are rejected so a
config fully and exactly captures a run; the hash of its canonical
serialization goes into every run manifest.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

SCHEMA_VERSION = 1

# section -> key -> (type, default); None default means required-when-used
SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {
        "kind": (str, "train"),
        "seed": (int, 0),
        "out": (str, "runs/out"),
        "deterministic": (bool, True),
    },
    "dataset": {
        "source": (str, "phantom2d"),      # phantom2d | phantom3d | dir
        "path": (str, ""),
        "count": (int, 64),
        "extent": (int, 32),
        "lesions": (int, 1),
        "class_mix": (list, []),
        "split": (list, [0.7, 0.15, 0.15]),
    },
    "model": {
        "family": (str, "pggan"),          # dcgan|wgan|pggan|cpggan|mcgan|munit|simgan
        "base": (int, 4),
        "target": (int, 32),
        "scale_divisor": (int, 16),
        "latent": (int, 16),
        "width": (int, 4),
        "grid": (int, 4),
        "boxes_per_cell": (int, 2),
        "voi": (int, 16),
        "box": (int, 8),
    },
    "objective": {
        "lambda_gp": (float, 10.0),
        "critic_iters": (int, 1),
        "clip": (float, 0.01),
        "label_flip_period": (int, 0),
        "enable_l1": (bool, False),
        "l1_weight": (float, 100.0),
        "lambda_reg": (float, 5e-5),
    },
    "optimizer": {
        "algorithm": (str, "adam"),
        "learning_rate": (float, 1e-3),
        "beta1": (float, 0.0),
        "beta2": (float, 0.99),
        "momentum": (float, 0.0),
        "decay": (float, 0.9),
    },
    "schedule": {
        "steps_per_stage": (int, 120),
        "steps": (int, 100),
        "epochs": (int, 10),
        "batch_size": (int, 8),
        "fade_fraction": (float, 0.5),
    },
    "augment": {
        "kind": (str, "none"),             # none | classic | gan
        "ratio": (float, 1.0),
        "synth_dir": (str, ""),
    },
    "evaluate": {
        "iou": (float, 0.25),
        "detection_threshold": (float, 0.001),
    },
}

VALID_FAMILIES = ("dcgan", "wgan", "pggan", "cpggan", "mcgan", "munit", "simgan")


class ConfigError(ValueError):
    pass


class ExperimentConfig:
    def __init__(self, sections: dict[str, dict]):
        self.sections = sections

    def __getitem__(self, section: str) -> dict:
        return self.sections.get(section, {})

    def get(self, section: str, key: str):
        if section == "schema":
            return SCHEMA_VERSION
        if key in self.sections.get(section, {}):
            return self.sections[section][key]
        return SCHEMA[section][key][1]

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self.sections == other.sections

    def hash(self) -> str:
        return hashlib.sha256(serialize_config(self).encode("utf-8")).hexdigest()[:16]


def _parse_value(raw: str, where: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{where}: cannot parse value {raw!r}") from e


def parse_config(text: str) -> ExperimentConfig:
    sections: dict[str, dict] = {}
    current: str | None = None
    schema_seen = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if current != "schema" and current not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, {})
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        value = _parse_value(raw, f"line {lineno}")
        if current is None:
            if key != "schema":
                raise ConfigError(f"line {lineno}: top-level key {key!r}; only 'schema' allowed")
            schema_seen = value
            continue
        if current == "schema":
            raise ConfigError("schema is a top-level key, not a section")
        spec = SCHEMA[current]
        if key not in spec:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{current}]")
        want = spec[key][0]
        if want is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, want):
            raise ConfigError(
                f"line {lineno}: [{current}] {key} expects {want.__name__}, got {value!r}")
        sections[current][key] = value
    if schema_seen is None:
        raise ConfigError("missing top-level 'schema' version")
    if schema_seen != SCHEMA_VERSION:
        raise ConfigError(f"schema {schema_seen} unsupported; this build reads {SCHEMA_VERSION}")
    cfg = ExperimentConfig(sections)
    family = cfg.get("model", "family")
    if family not in VALID_FAMILIES:
        raise ConfigError(f"model.family must be one of {VALID_FAMILIES}, got {family!r}")
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = [f"schema = {SCHEMA_VERSION}", ""]
    for section in SCHEMA:
        if section not in cfg.sections:
            continue
        body = cfg.sections[section]
        if not body:
            continue
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            if key in body:
                lines.append(f"{key} = {json.dumps(body[key])}")
        lines.append("")
    return "\n".join(lines)


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def default_config(**overrides) -> ExperimentConfig:
    """Config with every section present at defaults; overrides are
    ('section.key', value) pairs."""
    sections = {sec: {k: v[1] for k, v in keys.items()} for sec, keys in SCHEMA.items()}
    cfg = ExperimentConfig(sections)
    for dotted, value in overrides.items():
        section, key = dotted.split(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config field {dotted!r}")
        sections[section][key] = value
    return cfg
