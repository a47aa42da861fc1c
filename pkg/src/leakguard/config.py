"""Experiment configuration: nested frozen dataclasses with a strict JSON form.

Every field must be present when loading (``--show-config`` prints a
complete file to start from); unknown or missing keys raise
``ConfigurationError``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .estimator import EstimatorConfig
from .padding import GateSet
from .pf_timing import PFConfig
from .policy import PolicyConfig
from .router import RoutingPolicy
from .simenv import WORKLOADS, EnvConfig, tier2_env_config

CONFIG_VERSION = 1


@dataclass(frozen=True)
class PaddingConfig:
    eps_des: float = 0.02
    c_pad: int = 2
    k_segments: int = 6
    gates: GateSet = field(default_factory=GateSet)


@dataclass(frozen=True)
class GridConfig:
    tier1_ns: tuple = (4, 8, 16)
    tier2_ns: tuple = (4, 8)
    workloads: tuple = WORKLOADS
    seeds: int = 40
    steps: int = 800

    def __post_init__(self):
        bad = set(self.workloads) - set(WORKLOADS)
        if bad:
            raise ConfigurationError(f"unknown workloads {sorted(bad)}")
        if self.seeds < 1 or self.steps < 1:
            raise ConfigurationError("grid needs at least one seed and one step")


@dataclass(frozen=True)
class CalibrationConfig:
    design_episodes: int = 150     # per n; 150 x 800 = 1.2e5 design intervals
    baseline_episodes: int = 120   # per n, monitor-only, for threshold quantiles
    eps_est: float = 0.0           # calibration error fed to the advantage bound
    eps_sync: float = 0.0


@dataclass(frozen=True)
class ReportConfig:
    bootstrap_resamples: int = 10_000
    hist_bins: int = 40
    ci_level: float = 0.95


@dataclass(frozen=True)
class ExperimentConfig:
    version: int = CONFIG_VERSION
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    pf: PFConfig = field(default_factory=PFConfig)
    routing: RoutingPolicy = field(default_factory=RoutingPolicy)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    padding: PaddingConfig = field(default_factory=PaddingConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    tier2_env: EnvConfig = field(default_factory=tier2_env_config)
    grid: GridConfig = field(default_factory=GridConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigurationError(f"unsupported config version {self.version}")

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _from_plain(cls(), d, "config")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(x) for x in obj]
    return obj


def _from_plain(proto, value, path: str):
    """Rebuild ``value`` shaped like the prototype instance ``proto``."""
    if dataclasses.is_dataclass(proto):
        if not isinstance(value, dict):
            raise ConfigurationError(f"{path}: expected an object")
        names = [f.name for f in dataclasses.fields(proto) if f.init]
        missing = [n for n in names if n not in value]
        unknown = [k for k in value if k not in names]
        if missing:
            raise ConfigurationError(f"{path}: missing field(s) {', '.join(missing)}")
        if unknown:
            raise ConfigurationError(f"{path}: unknown field(s) {', '.join(unknown)}")
        kwargs = {n: _from_plain(getattr(proto, n), value[n], f"{path}.{n}") for n in names}
        try:
            return type(proto)(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    if isinstance(proto, tuple):
        if not isinstance(value, list):
            raise ConfigurationError(f"{path}: expected a list")
        if proto:
            elem = proto[0]
            return tuple(_from_plain(elem, v, f"{path}[{i}]") for i, v in enumerate(value))
        return tuple(value)
    if isinstance(proto, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected a boolean")
        return value
    if isinstance(proto, (int, float)) and not isinstance(value, (int, float)) or isinstance(value, bool) and not isinstance(proto, bool):
        raise ConfigurationError(f"{path}: expected a number")
    if isinstance(proto, int) and isinstance(value, float):
        if not value.is_integer():
            raise ConfigurationError(f"{path}: expected an integer")
        return int(value)
    if isinstance(proto, float):
        return float(value)
    if isinstance(proto, str) and not isinstance(value, str):
        raise ConfigurationError(f"{path}: expected a string")
    return value
