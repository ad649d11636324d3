"""
Run configuration

TOML files map onto frozen dataclasses whose defaults reproduce the lab
calibration. Process-wide defaults (seed, output directory, log level) come
from the environment, optionally through a .env file.
"""

import os
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv

from pump_monitor import PumpMonitorConfig
from source import (
    SourceConfig, ChannelConfig, DetectorConfig, GateConfig, lab_detectors
)

load_dotenv()

DEFAULT_SEED = 0
DEFAULT_OUTPUT_DIR = './data'
DEFAULT_LOG_LEVEL = 'INFO'
DEFAULT_DURATION_S = 3600.0


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field"""


@dataclass(frozen=True)
class AnalysisConfig:
    window: int = 32
    sideband_sigmas: float = 10.0
    bootstrap_resamples: int = 200
    histogram_half_width: int = 32
    doubles_channels: Tuple[Tuple[int, int], ...] = ((1, 2), (2, 3))
    workers: int = 1

    def validate(self, prefix: str = 'analysis') -> None:
        if self.window <= 0:
            raise ValueError(f"{prefix}.window must be > 0, got {self.window}")
        if not (self.sideband_sigmas > 0):
            raise ValueError(f"{prefix}.sideband_sigmas must be > 0, got {self.sideband_sigmas}")
        if self.bootstrap_resamples < 2:
            raise ValueError(f"{prefix}.bootstrap_resamples must be >= 2, got {self.bootstrap_resamples}")
        if self.histogram_half_width <= 0:
            raise ValueError(f"{prefix}.histogram_half_width must be > 0, got {self.histogram_half_width}")
        for pair in self.doubles_channels:
            if len(pair) != 2 or pair[0] == pair[1]:
                raise ValueError(f"{prefix}.doubles_channels entries need two distinct channels, got {pair}")
        if self.workers < 1:
            raise ValueError(f"{prefix}.workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class RunConfig:
    source: SourceConfig = field(default_factory=SourceConfig)
    detectors: DetectorConfig = field(default_factory=lab_detectors)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    pump: PumpMonitorConfig = field(default_factory=PumpMonitorConfig)
    duration_s: float = DEFAULT_DURATION_S
    seed: int = DEFAULT_SEED
    output_dir: str = DEFAULT_OUTPUT_DIR

    def validate(self) -> None:
        """Raise ConfigError naming the first invalid field"""
        try:
            if not (math.isfinite(self.duration_s) and self.duration_s > 0):
                raise ValueError(f"duration_s must be > 0, got {self.duration_s}")
            if self.seed < 0:
                raise ValueError(f"seed must be >= 0, got {self.seed}")
            self.source.validate('source')
            self.detectors.validate('detectors')
            self.analysis.validate('analysis')
            self.pump.validate('pump')
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(str(e)) from e


def env_default(name: str, fallback: Any) -> Any:
    """Environment override for a process-level default"""
    value = os.getenv(name)
    if value is None or value == '':
        return fallback
    return type(fallback)(value) if fallback is not None else value


def _apply(obj: Any, table: Dict[str, Any], prefix: str) -> Any:
    """Replace dataclass fields from a TOML table; unknown keys are errors"""
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, value in table.items():
        if key not in known:
            raise ConfigError(f"unknown key {prefix}.{key}")
        current = getattr(obj, key)
        if isinstance(current, bool) or isinstance(value, bool):
            updates[key] = value
        elif isinstance(current, int) and not isinstance(current, bool):
            if not isinstance(value, int):
                raise ConfigError(f"{prefix}.{key} must be an integer, got {value!r}")
            updates[key] = value
        elif isinstance(current, float):
            if not isinstance(value, (int, float)):
                raise ConfigError(f"{prefix}.{key} must be a number, got {value!r}")
            updates[key] = float(value)
        elif isinstance(current, tuple):
            updates[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            updates[key] = value
    return replace(obj, **updates)


def _detectors_from(table: Dict[str, Any], base: DetectorConfig) -> DetectorConfig:
    table = dict(table)
    channels = list(base.channels)
    for k, entry in enumerate(table.pop('channels', []), 1):
        start = channels[k - 1] if k <= len(channels) else ChannelConfig()
        updated = _apply(start, entry, f"detectors.channels[{k}]")
        if k <= len(channels):
            channels[k - 1] = updated
        else:
            channels.append(updated)

    gate = base.gate
    if 'gate' in table:
        gate_table = table.pop('gate')
        if gate_table is False or gate_table == {}:
            gate = None
        else:
            gate = _apply(gate or GateConfig(), gate_table, 'detectors.gate')

    return _apply(replace(base, channels=tuple(channels), gate=gate), table, 'detectors')


def config_from_dict(data: Dict[str, Any], base: Optional[RunConfig] = None) -> RunConfig:
    """Overlay parsed TOML content on a base configuration"""
    config = base or RunConfig()
    data = dict(data)

    sections = {}
    if 'source' in data:
        sections['source'] = _apply(config.source, data.pop('source'), 'source')
    if 'detectors' in data:
        sections['detectors'] = _detectors_from(data.pop('detectors'), config.detectors)
    if 'analysis' in data:
        sections['analysis'] = _apply(config.analysis, data.pop('analysis'), 'analysis')
    if 'pump' in data:
        sections['pump'] = _apply(config.pump, data.pop('pump'), 'pump')

    config = _apply(replace(config, **sections), data, 'config')
    config.validate()
    return config


def load_config(filepath: Optional[str] = None) -> RunConfig:
    """Environment defaults, then the TOML file (if any) on top"""
    base = RunConfig(
        seed=env_default('TRIPLET_SEED', DEFAULT_SEED),
        output_dir=env_default('TRIPLET_OUTPUT_DIR', DEFAULT_OUTPUT_DIR),
    )
    if not filepath:
        base.validate()
        return base

    try:
        with open(filepath, 'rb') as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse {filepath}: {e}") from e

    config = config_from_dict(data, base)
    logging.info(f"Loaded configuration from {filepath}")
    return config
