#!/usr/bin/env python3
"""
Tests for the Fabry-Perot pump linewidth monitor
"""

import sys
import math

import numpy as np
import pytest

# Add src to path
sys.path.append('src')

from pump_monitor import (
    PumpMonitorConfig, FPScan, BandwidthSeries, NoPeakError, simulate_scan, apparent_width,
    estimate_bandwidth, simulate_series, summarize_series
)


def test_noiseless_scan_without_instrument_broadening():
    scan = simulate_scan(6.0, 0.0, 0.0, seed=1)
    estimate = estimate_bandwidth(scan, 0.0)
    assert math.isclose(estimate.bandwidth_mhz, 6.0, rel_tol=0.01)
    assert math.isclose(estimate.center_mhz, 0.0, abs_tol=0.1)


def test_instrument_broadens_raw_width():
    scan = simulate_scan(6.0, 1.0, 0.0, seed=2)
    assert apparent_width(scan) > 6.0
    assert math.isclose(estimate_bandwidth(scan, 1.0).bandwidth_mhz, 6.0, rel_tol=0.01)


def test_scans_are_deterministic():
    first = simulate_scan(4.0, 1.0, 0.05, seed=3)
    second = simulate_scan(4.0, 1.0, 0.05, seed=3)
    assert np.array_equal(first.intensities, second.intensities)


@pytest.mark.parametrize("bandwidth", [2.0, 4.0, 6.0, 9.0, 12.0])
def test_noisy_round_trip(bandwidth):
    scan = simulate_scan(bandwidth, 1.0, 0.05, seed=int(bandwidth * 10), center=3.0)
    estimate = estimate_bandwidth(scan, 1.0)
    assert math.isclose(estimate.bandwidth_mhz, bandwidth, rel_tol=0.05)
    assert math.isclose(estimate.center_mhz, 3.0, abs_tol=0.5)


def test_flat_scan_has_no_peak():
    offsets = np.linspace(-50.0, 50.0, 1001)
    with pytest.raises(NoPeakError):
        estimate_bandwidth(FPScan(offsets, np.ones(offsets.size)), 1.0)


def test_noise_only_scan_has_no_peak():
    offsets = np.linspace(-50.0, 50.0, 1001)
    noise = 1.0 + 0.05 * np.random.default_rng(4).standard_normal(offsets.size)
    with pytest.raises(NoPeakError):
        estimate_bandwidth(FPScan(offsets, noise), 1.0)


def test_invalid_scans_rejected():
    with pytest.raises(ValueError):
        FPScan(np.zeros(10), np.zeros(10))
    with pytest.raises(ValueError):
        FPScan(np.zeros(200), -np.ones(200))
    with pytest.raises(ValueError):
        PumpMonitorConfig(samples=50).validate()


def test_series_tracks_drifting_bandwidth():
    cfg = PumpMonitorConfig()
    series, truth = simulate_series(6.0, 2.0, 600.0, cfg, 72.6 * 3600.0, seed=5)
    assert len(series) >= 0.99 * truth.size
    assert math.isclose(series.mean, 6.0, rel_tol=0.15)
    assert math.isclose(series.std, 2.0, rel_tol=0.15)
    assert math.isclose(series.mean, float(np.mean(truth)), rel_tol=0.05)


def test_summary_ignores_scan_order():
    rng = np.random.default_rng(6)
    values = rng.uniform(2.0, 10.0, 50)
    times = np.arange(50) * 300.0
    order = rng.permutation(50)
    forward = summarize_series(BandwidthSeries(times, values))
    shuffled = summarize_series(BandwidthSeries(times[order], values[order]))
    assert forward['mean_mhz'] == pytest.approx(shuffled['mean_mhz'])
    assert forward['std_mhz'] == pytest.approx(shuffled['std_mhz'])
    assert forward['scans'] == shuffled['scans'] == 50
    assert forward['duration_s'] == shuffled['duration_s'] == 49 * 300.0


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
