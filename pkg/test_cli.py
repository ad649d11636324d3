#!/usr/bin/env python3
"""
End-to-end tests of the command-line entry point
"""

import sys
from pathlib import Path

import pandas as pd
import pytest

# Add src to path
sys.path.append('src')

from main import main, parse_arguments
from utils import load_key_value, save_key_value

STATES = Path(__file__).parent / 'configs' / 'states'


def run(argv) -> int:
    """Exit code of main() for the given arguments"""
    try:
        main([str(a) for a in argv])
    except SystemExit as e:
        return int(e.code or 0)
    return 0


def test_argument_parsing():
    args = parse_arguments(['--seed', '7', 'analyze', '--tags', 'x.ttag', '--channels', '1,2', '--channels', '2,3'])
    assert args.command == 'analyze'
    assert args.seed == '7'
    assert args.channels == ['1,2', '2,3']
    assert args.window is None


def test_log_level_from_environment_is_normalized(monkeypatch):
    monkeypatch.setenv('TRIPLET_LOG_LEVEL', 'debug')
    assert parse_arguments(['gaussian', '--state', 'x.toml']).log_level == 'DEBUG'
    assert parse_arguments(['--log-level', 'warning', 'gaussian', '--state', 'x.toml']).log_level == 'WARNING'


def test_invalid_log_level_from_environment_is_rejected(monkeypatch):
    monkeypatch.setenv('TRIPLET_LOG_LEVEL', 'verbose')
    with pytest.raises(SystemExit) as e:
        parse_arguments(['gaussian', '--state', 'x.toml'])
    assert e.value.code == 2


def test_simulate_is_deterministic(tmp_path):
    for name in ('a', 'b'):
        assert run(['--seed', 7, '--out', tmp_path / name, 'simulate', '--duration', 60]) == 0
    first = (tmp_path / 'a' / 'tags.ttag').read_bytes()
    second = (tmp_path / 'b' / 'tags.ttag').read_bytes()
    assert first == second
    summary = load_key_value(str(tmp_path / 'a' / 'simulation_summary.toml'))
    assert summary['seed'] == 7
    assert (tmp_path / 'a' / 'bandwidth_series.csv').exists()


def test_zero_efficiency_run_reports_missing_statistics(tmp_path):
    config = tmp_path / 'dark.toml'
    config.write_text(
        "[[detectors.channels]]\nefficiency = 0.0\n"
        "[[detectors.channels]]\nefficiency = 0.0\n"
        "[[detectors.channels]]\nefficiency = 0.0\n",
        encoding='utf-8'
    )
    out = tmp_path / 'out'
    assert run(['--config', config, '--out', out, 'simulate', '--duration', 30]) == 0
    assert load_key_value(str(out / 'simulation_summary.toml'))['expected_triples'] == 0.0

    assert run(['--out', out, 'analyze', '--tags', out / 'tags.ttag']) == 0
    stats = load_key_value(str(out / 'timing_stats.toml'))
    assert stats['triples'] == 0
    assert stats['status'] != 'ok'
    assert 'dt21' not in stats


def test_analyze_empty_file(tmp_path):
    tags = tmp_path / 'empty.ttag'
    tags.write_bytes(b"")
    assert run(['--out', tmp_path, 'analyze', '--tags', tags]) == 0
    stats = load_key_value(str(tmp_path / 'timing_stats.toml'))
    assert stats['tags'] == 0 and stats['triples'] == 0
    assert pd.read_csv(tmp_path / 'marginal_t21.csv')['count'].sum() == 0


def test_analyze_malformed_header(tmp_path):
    tags = tmp_path / 'bad.ttag'
    tags.write_bytes(b"NOPE" + bytes(20))
    assert run(['--out', tmp_path, 'analyze', '--tags', tags]) == 1


def test_witness_from_state_file(tmp_path):
    assert run(['--out', tmp_path, 'witness', '--state', STATES / 'sqrt6_mixture.toml']) == 0
    report = load_key_value(str(tmp_path / 'gaussian_report.toml'))
    assert report['classification'] == 'fully-inseparable'
    assert report['triple_sum'] == pytest.approx(6 ** 0.5, abs=1e-3)


def test_witness_from_measured_statistics(tmp_path):
    save_key_value({'dt21': 0.37, 'dt32': 0.162, 'dt31': 0.31, 'status': 'ok'}, str(tmp_path / 'stats.toml'))
    save_key_value({'mean_mhz': 6.0, 'std_mhz': 2.0}, str(tmp_path / 'bw.toml'))
    assert run(['--out', tmp_path, 'witness', '--stats', tmp_path / 'stats.toml',
                '--bandwidth', tmp_path / 'bw.toml']) == 0
    report = load_key_value(str(tmp_path / 'witness_report.toml'))
    assert report['classification'] == 'genuine-tripartite'
    assert report['convention'] == 'angular'


def test_witness_needs_inputs(tmp_path):
    assert run(['--out', tmp_path, 'witness']) == 1


def test_invalid_seed_exits(tmp_path):
    assert run(['--seed', 'abc', '--out', tmp_path, 'gaussian', '--state', STATES / 'psi4.toml']) == 1


def test_reproduce_single_section(tmp_path):
    assert run(['--out', tmp_path, 'reproduce', '--section', 'two-photon']) == 0
    frame = pd.read_csv(tmp_path / 'reproduction_report.csv')
    assert set(frame['section']) == {'two-photon'}
    assert frame['passed'].all()
    assert (tmp_path / 'reproduction_report.json').exists()


def test_reproduce_unknown_section(tmp_path):
    assert run(['--out', tmp_path, 'reproduce', '--section', 'spectroscopy']) == 1


def test_full_reproduction_passes(tmp_path):
    assert run(['--out', tmp_path, 'reproduce']) == 0
    frame = pd.read_csv(tmp_path / 'reproduction_report.csv')
    assert list(dict.fromkeys(frame['section'])) == ['gaussian', 'timing', 'witness', 'pump', 'two-photon']
    assert frame['passed'].all()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
