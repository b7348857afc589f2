"""Run configuration: one YAML file with the sections ``data``, ``split``,
``model``, ``search_space``, ``tuning``, ``seeds`` and ``paths``. Every
section and key is optional; command-line flags override file values.
"""

from dataclasses import dataclass, field, fields, replace
import logging
from typing import Any, Dict, List, Optional

import yaml

from .dataset import DEFAULT_FEATURES
from .errors import ConfigurationError
from .forecaster import MODEL_PRESETS, ModelConfig
from .tuner import ALGORITHMS, SearchSpace
from .types import SplitSpec
from .util import parse_date

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DataConfig:
    hours: int = 4000
    noise: float = 15.0
    test_share: float = 0.2
    features: List[str] = field(default_factory=lambda: list(DEFAULT_FEATURES))

    def __post_init__(self):
        if self.hours < 48:
            raise ConfigurationError(f"data.hours must be >= 48, got {self.hours}")
        if self.noise < 0:
            raise ConfigurationError("data.noise must be >= 0")
        if not self.features:
            raise ConfigurationError("data.features must not be empty")


@dataclass(frozen=True)
class TuningConfig:
    algorithm: str = "de"
    budget: int = 60
    population: int = 10
    epoch_cap: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(
                f"tuning.algorithm must be one of {', '.join(ALGORITHMS)}, "
                f"got '{self.algorithm}'"
            )
        if self.budget < 1 or self.population < 1 or self.workers < 1:
            raise ConfigurationError("budget, population and workers must be >= 1")
        if self.epoch_cap is not None and self.epoch_cap < 1:
            raise ConfigurationError("tuning.epoch_cap must be >= 1")


@dataclass(frozen=True)
class SeedsConfig:
    data: int = 0
    search: int = 0
    model: int = 0


@dataclass(frozen=True)
class PathsConfig:
    data: Optional[str] = None
    model: str = "model.npz"
    report_dir: str = "reports"
    exports_dir: str = "exports"


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: Optional[SplitSpec] = None
    model_preset: str = "full"
    model: ModelConfig = field(default_factory=ModelConfig)
    search_space: SearchSpace = field(default_factory=SearchSpace)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def model_config(self, feature_count: int) -> ModelConfig:
        if feature_count == self.model.feature_count:
            return self.model
        return replace(self.model, feature_count=feature_count)

    def with_overrides(self, **sections: Dict[str, Any]) -> "RunConfig":
        """Replace values per section, skipping ``None`` (unset flags)."""
        changes = {}
        for name, values in sections.items():
            values = {k: v for k, v in values.items() if v is not None}
            if not values:
                continue
            if name == "model":
                changes.update(_model_section(values, self))
            elif name == "split":
                changes["split"] = _split_section(values, self.split)
            else:
                changes[name] = _build(getattr(self, name), values, name)
        return replace(self, **changes)


def _build(current: Any, values: Dict[str, Any], section: str) -> Any:
    known = {f.name for f in fields(current)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in '{section}': {', '.join(unknown)}")
    try:
        return replace(current, **values)
    except TypeError as exc:
        raise ConfigurationError(f"invalid '{section}' section: {exc}") from None


def _model_section(values: Dict[str, Any], current: RunConfig) -> Dict[str, Any]:
    values = dict(values)
    preset = values.pop("preset", None)
    if preset is not None:
        if preset not in MODEL_PRESETS:
            raise ConfigurationError(
                f"unknown model preset '{preset}', expected one of {', '.join(MODEL_PRESETS)}"
            )
        base = MODEL_PRESETS[preset]
    else:
        preset = current.model_preset
        base = current.model
    return {"model_preset": preset, "model": _build(base, values, "model")}


def _split_section(values: Dict[str, Any], current: Optional[SplitSpec]) -> SplitSpec:
    values = dict(values)
    for key in ("train_end", "test_end"):
        if key in values:
            try:
                values[key] = parse_date(values[key])
            except (ValueError, OverflowError):
                raise ConfigurationError(f"split.{key}: invalid date {values[key]!r}") from None
    if current is None:
        missing = {"train_end", "test_end"} - set(values)
        if missing:
            raise ConfigurationError(
                f"split needs both train_end and test_end, missing {', '.join(sorted(missing))}"
            )
        current = SplitSpec(values.pop("train_end"), values.pop("test_end"))
    return _build(current, values, "split")


SECTIONS = ("data", "split", "model", "search_space", "tuning", "seeds", "paths")


def run_config_from_dict(values: Optional[Dict[str, Any]]) -> RunConfig:
    values = values or {}
    if not isinstance(values, dict):
        raise ConfigurationError("run config must be a mapping of sections")
    unknown = sorted(set(values) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown config section(s): {', '.join(unknown)}")
    for name, section in values.items():
        if section is not None and not isinstance(section, dict):
            raise ConfigurationError(f"config section '{name}' must be a mapping")
    ordered = {name: values[name] or {} for name in SECTIONS if name in values}
    return RunConfig().with_overrides(**ordered)


def load_run_config(path: Optional[str]) -> RunConfig:
    if not path:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as f:
            values = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from None
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}") from None
    logger.debug("Loaded run config from %s", path)
    return run_config_from_dict(values)
