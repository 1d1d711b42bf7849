"""Experiment configuration, named presets and the TOML config file format."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError
from .objectives import ClipConfig
from .policy import FeatureMap
from .sampler import SampleLimits
from .tasks import TaskKind

_DISPO_DEFAULT = dict(algorithm="DISPO", eps_plus_low=0.2, eps_plus_high=10.0,
                    eps_minus_low=1.0, eps_minus_high=100.0, correct_only=False)


def _sft(plus_low: float, plus_high: float) -> dict:
    return dict(algorithm="DISPO", eps_plus_low=plus_low, eps_plus_high=plus_high,
                eps_minus_low=1.0, eps_minus_high=100.0, correct_only=True)


PRESETS: dict[str, dict[str, Any]] = {
    # baselines and the three-way comparison
    "reinforce": dict(algorithm="REINFORCE", correct_only=False),
    "grpo": dict(algorithm="GRPO", eps_low=0.2, eps_high=0.2, correct_only=False),
    "dapo": dict(algorithm="DAPO", eps_low=0.2, eps_high=0.28, correct_only=False),
    "cispo": dict(algorithm="CISPO", eps_low=1.0, eps_high=100.0, correct_only=False),
    "dispo-paper": dict(_DISPO_DEFAULT),
    # regime ablation grid, starting from online SFT (correct responses only)
    "online-sft": _sft(0.0, 0.0),
    "plus-regime1-0.28": _sft(0.0, 0.28),
    "plus-regime1-10": _sft(0.0, 10.0),
    "plus-regime2-0.2": _sft(0.2, 0.0),
    "plus-regime2-1": _sft(1.0, 0.0),
    # regime ablation grid, starting from full DISPO
    "dispo-full": dict(_DISPO_DEFAULT),
    "dispo-minus-regime3": dict(_DISPO_DEFAULT, eps_minus_low=1.0, eps_minus_high=0.0),
    "dispo-minus-regime4": dict(_DISPO_DEFAULT, eps_minus_low=0.0, eps_minus_high=100.0),
}

ABLATION_GRID = ("online-sft", "plus-regime1-0.28", "plus-regime1-10", "plus-regime2-0.2",
                 "plus-regime2-1", "dispo-full", "dispo-minus-regime3", "dispo-minus-regime4")


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str | None = "dispo-paper"
    # objective
    algorithm: str = "DISPO"
    eps_low: float = 0.2
    eps_high: float = 0.28
    eps_plus_low: float = 0.2
    eps_plus_high: float = 10.0
    eps_minus_low: float = 1.0
    eps_minus_high: float = 100.0
    correct_only: bool = False
    # environment
    task_kind: str = "ADD_MOD"
    modulus: int = 10
    soft_limit: int = 12
    hard_limit: int = 24
    rep_window: int = 4
    rep_threshold: int = 8
    # sampling and schedule
    group_size: int = 16
    mini_batch_groups: int = 32
    micro_batch_groups: int = 2
    rollout_rounds: int = 125
    max_attempts: int = 2048  # a uniform policy keeps ~1 group in 30; 0 means 10 x mini_batch_groups
    grad_clip_norm: float = 1.0
    eval_every: int = 25
    eval_tasks: int = 25
    eval_k: int = 16
    # optimizer
    learning_rate: float = 2e-2
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-15
    weight_decay: float = 0.01
    # policy
    context_window: int = 8
    feature_map: str = "ONE_HOT_PAIRS"
    init: str = "zeros"
    init_scale: float = 0.01
    # bookkeeping
    seed: int = 0
    output_dir: str = ""

    def __post_init__(self):
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigurationError(
                f"unknown preset {self.preset!r}; valid presets: {', '.join(PRESETS)}")
        TaskKind.parse(self.task_kind)
        FeatureMap.parse(self.feature_map)
        if self.micro_batch_groups < 1 or self.mini_batch_groups % self.micro_batch_groups:
            raise ConfigurationError("micro_batch_groups must divide mini_batch_groups")
        for name in ("group_size", "rollout_rounds", "eval_every", "eval_k", "eval_tasks"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.group_size < 2:
            raise ConfigurationError("group_size must be >= 2")
        if not (self.learning_rate > 0 and self.grad_clip_norm > 0):
            raise ConfigurationError("learning_rate and grad_clip_norm must be positive")
        self.clip_config()
        self.limits()

    # -- derived objects ---------------------------------------------------

    def clip_config(self) -> ClipConfig:
        return ClipConfig(self.algorithm, self.eps_low, self.eps_high, self.eps_plus_low,
                          self.eps_plus_high, self.eps_minus_low, self.eps_minus_high,
                          self.correct_only)

    def limits(self) -> SampleLimits:
        return SampleLimits(self.soft_limit, self.hard_limit, self.rep_window, self.rep_threshold)

    @property
    def updates_per_rollout(self) -> int:
        return self.mini_batch_groups // self.micro_batch_groups

    @property
    def attempts_budget(self) -> int:
        return self.max_attempts or 10 * self.mini_batch_groups

    # -- construction ------------------------------------------------------

    @classmethod
    def from_preset(cls, preset: str, **overrides) -> "ExperimentConfig":
        return resolve_config({"preset": preset, **overrides})

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_toml(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            lines.append(f"{f.name} = {_toml_value(value)}")
        return "\n".join(lines) + "\n"


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ConfigurationError("config values must be finite")
        return repr(value)
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, value: Any) -> Any:
    if name not in _FIELD_TYPES:
        raise ConfigurationError(f"unknown config key {name!r}")
    kind = _FIELD_TYPES[name]
    try:
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return value.lower() in ("true", "1", "yes")
            return bool(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if name == "preset" and value in (None, "", "none"):
            return None
        return str(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"bad value for {name}: {value!r}") from None


def resolve_config(*layers: Mapping[str, Any]) -> ExperimentConfig:
    """Merge key/value layers (later wins); the preset applies beneath explicit keys."""
    merged: dict[str, Any] = {}
    for layer in layers:
        merged.update({k: v for k, v in layer.items() if v is not None})
    values = {k: _coerce(k, v) for k, v in merged.items()}
    preset = values.pop("preset", ExperimentConfig.preset)
    base: dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; valid presets: {', '.join(PRESETS)}")
        base.update(PRESETS[preset])
    base.update(values)
    return ExperimentConfig(preset=preset, **base)


def load_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    for key in data:
        if key not in _FIELD_TYPES:
            raise ConfigurationError(f"{path}: unknown config key {key!r}")
    return data
