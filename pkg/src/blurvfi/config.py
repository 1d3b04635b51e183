"""Run configuration: one YAML file with a section per command.

Example::

    synth:
      K: 8
      tau: 5
      clips: 20
    train:
      scale: 2
      epochs_main: 3
    eval:
      s_max: 10

Command-line flags override file values. Unknown sections or keys are
rejected before any work starts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .training import TrainConfig, config_hash


@dataclass
class SynthConfig:
    K: int = 8
    tau: int = 5
    clips: int = 20
    seed: int = 0
    height: int = 64
    width: int = 64
    frames: int = 97
    fps: float = 240.0
    num_shapes: int = 3
    velocity_range: tuple[float, float] = (0.3, 1.2)
    radius_range: tuple[float, float] = (5.0, 12.0)
    bit_depth: int = 8
    latents: str | None = None
    resize: tuple[int, int] | None = None
    resample: str = "bilinear"

    def __post_init__(self) -> None:
        if self.clips < 1:
            raise ConfigError("clips must be >= 1")
        if self.bit_depth not in (8, 16):
            raise ConfigError("bit_depth must be 8 or 16")
        if self.resample not in ("bilinear", "bicubic", "area", "nearest"):
            raise ConfigError(f"unknown resample kernel {self.resample!r}")
        self.velocity_range = tuple(float(v) for v in self.velocity_range)
        self.radius_range = tuple(float(v) for v in self.radius_range)
        if self.resize is not None:
            self.resize = (int(self.resize[0]), int(self.resize[1]))


@dataclass
class InferConfig:
    bit_depth: int = 8

    def __post_init__(self) -> None:
        if self.bit_depth not in (8, 16):
            raise ConfigError("bit_depth must be 8 or 16")


@dataclass
class EvalConfig:
    s_max: int = 10
    plot: bool = False
    flow_alpha: float = 0.05
    flow_iterations: int = 100
    flow_levels: int = 3
    flow_warps: int = 2
    pred_flows: str | None = None
    gt_flows: str | None = None

    def __post_init__(self) -> None:
        if self.s_max < 1:
            raise ConfigError("s_max must be >= 1")


SECTIONS = {"synth": SynthConfig, "train": TrainConfig, "infer": InferConfig, "eval": EvalConfig}


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def section_to_dict(cfg) -> dict:
    return {k: _plain(v) for k, v in asdict(cfg).items()}


def load_file(path) -> dict:
    """Parse a config file and check section/key names."""
    if path is None:
        return {}
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    for name, values in data.items():
        if values is None:
            data[name] = {}
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: section {name!r} must be a mapping")
        known = {f.name for f in fields(SECTIONS[name])}
        bad = set(values) - known
        if bad:
            raise ConfigError(f"{path}: unknown keys in {name!r}: {sorted(bad)}")
    return data


def resolve(section: str, file_values: dict | None, overrides: dict):
    """Defaults <- file values <- flag overrides (``None`` flags are ignored)."""
    cls = SECTIONS[section]
    values = dict(file_values or {})
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(cls)}
    bad = set(values) - known
    if bad:
        raise ConfigError(f"unknown keys for {section!r}: {sorted(bad)}")
    for key in ("crop", "velocity_range", "radius_range", "resize"):
        if values.get(key) is not None and key in known:
            values[key] = tuple(values[key])
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def effective_yaml(section: str, cfg) -> str:
    return yaml.safe_dump({section: section_to_dict(cfg)}, sort_keys=True)


def hash_of(section: str, cfg) -> str:
    return config_hash({section: json.loads(json.dumps(section_to_dict(cfg)))})
