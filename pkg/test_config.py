#!/usr/bin/env python3
"""
Tests for run configuration loading
"""

import sys

import pytest

# Add src to path
sys.path.append('src')

from config import RunConfig, ConfigError, load_config, config_from_dict
from source import lab_detectors


def write_config(tmp_path, text: str) -> str:
    path = tmp_path / "run.toml"
    path.write_text(text, encoding='utf-8')
    return str(path)


def test_defaults_match_lab_calibration(monkeypatch):
    monkeypatch.delenv('TRIPLET_SEED', raising=False)
    monkeypatch.delenv('TRIPLET_OUTPUT_DIR', raising=False)
    config = load_config(None)
    assert config == RunConfig()
    assert config.detectors == lab_detectors()
    assert config.analysis.window == 32


def test_file_overlays_defaults(tmp_path):
    path = write_config(tmp_path, """
seed = 3
duration_s = 10

[source]
pair_rate = 100

[[detectors.channels]]
efficiency = 0.5

[analysis]
doubles_channels = [[1, 3]]
""")
    config = load_config(path)
    assert config.seed == 3
    assert config.duration_s == 10.0
    assert config.source.pair_rate == 100.0
    assert config.detectors.channels[0].efficiency == 0.5
    assert config.detectors.channels[0].jitter_sigma == lab_detectors().channels[0].jitter_sigma
    assert config.detectors.channels[2] == lab_detectors().channels[2]
    assert config.analysis.doubles_channels == ((1, 3),)


def test_gate_can_be_disabled():
    config = config_from_dict({'detectors': {'gate': False}})
    assert config.detectors.gate is None


def test_unknown_key_is_named(tmp_path):
    path = write_config(tmp_path, "[source]\ncolour = 1\n")
    with pytest.raises(ConfigError, match="source.colour"):
        load_config(path)


def test_wrong_type_is_named():
    with pytest.raises(ConfigError, match="analysis.window"):
        config_from_dict({'analysis': {'window': "wide"}})


def test_invalid_value_is_named():
    with pytest.raises(ConfigError, match="detectors.gate.width_ns"):
        config_from_dict({'detectors': {'gate': {'width_ns': 0.0}}})
    with pytest.raises(ConfigError, match="detectors.ch2.efficiency"):
        config_from_dict({'detectors': {'channels': [{}, {'efficiency': 2.0}]}})


def test_dead_time_stub_is_read_and_validated():
    config = config_from_dict({'detectors': {'channels': [{'dead_time_ns': 45}]}})
    assert config.detectors.channels[0].dead_time_ns == 45.0
    with pytest.raises(ConfigError, match="detectors.ch1.dead_time_ns"):
        config_from_dict({'detectors': {'channels': [{'dead_time_ns': -1.0}]}})


def test_unparsable_file(tmp_path):
    path = write_config(tmp_path, "seed = = 1\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(path)


def test_environment_then_file_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv('TRIPLET_SEED', '11')
    monkeypatch.setenv('TRIPLET_OUTPUT_DIR', str(tmp_path / "env_out"))
    assert load_config(None).seed == 11
    assert load_config(None).output_dir == str(tmp_path / "env_out")

    path = write_config(tmp_path, "seed = 4\n")
    config = load_config(path)
    assert config.seed == 4
    assert config.output_dir == str(tmp_path / "env_out")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
