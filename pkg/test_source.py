#!/usr/bin/env python3
"""
Tests for the triplet source and the detector chain
"""

import sys
import math
from dataclasses import replace

import numpy as np
import pytest

# Add src to path
sys.path.append('src')

from source import (
    SourceConfig, ChannelConfig, DetectorConfig, GateConfig, EventBatch, DriftPath,
    generate_triplets, generate_pairs, detect, simulate_bandwidth_drift, lab_detectors,
    mhz_to_angular
)
from coincidence import find_triples, histogram2d, timing_stats
from utils import derive_rng


def ideal_detectors(offsets=(0.0, 0.0, 0.0), jitters=(0.0, 0.0, 0.0)) -> DetectorConfig:
    return DetectorConfig(channels=tuple(
        ChannelConfig(efficiency=1.0, jitter_sigma=j, offset=o) for o, j in zip(offsets, jitters)
    ))


def without_darks(det: DetectorConfig) -> DetectorConfig:
    return replace(det, channels=tuple(replace(c, dark_rate=0.0) for c in det.channels))


def test_energy_conservation_is_exact():
    events = generate_triplets(replace(SourceConfig(), pair_rate=100.0), 10.0, seed=1)
    assert len(events) > 0
    assert events.conservation_residual() < 1e-9
    assert np.all(np.diff(events.t_emit) >= 0)


def test_event_count_is_poisson():
    events = generate_triplets(SourceConfig(), 3600.0, seed=2)
    assert abs(len(events) - 2700) < 5 * math.sqrt(2700)


def test_fixed_bandwidth_sets_pump_spread():
    cfg = replace(SourceConfig(), pump_bandwidth_spread=0.0, pair_rate=1e5)
    events = generate_triplets(cfg, 1.0, seed=3)
    assert len(events) > 90000
    spread = np.std(events.pump - cfg.pump_center)
    assert math.isclose(spread, cfg.pump_bandwidth_mean, rel_tol=0.02)


def test_pairs_conserve_energy():
    events = generate_pairs(replace(SourceConfig(), pair_rate=1000.0), 1.0, seed=4)
    assert events.photons == 2
    assert events.conservation_residual() < 1e-9


def test_ideal_detection_reproduces_offsets():
    events = generate_triplets(replace(SourceConfig(), pair_rate=50.0), 20.0, seed=5)
    det = ideal_detectors(offsets=(0.0, 0.5, 1.0))
    stream = detect(events, det, seed=5)
    triples = find_triples(stream, window=32)
    assert len(triples) == len(events)
    for t1, t2, t3 in triples:
        assert abs((t2 - t1) - 0.5 / 0.156) <= 1
        assert abs((t3 - t2) - 0.5 / 0.156) <= 1


def test_detection_is_deterministic():
    events = generate_triplets(replace(SourceConfig(), pair_rate=20.0), 30.0, seed=6)
    first = detect(events, lab_detectors(), seed=6, duration_s=30.0)
    second = detect(events, lab_detectors(), seed=6, duration_s=30.0)
    assert np.array_equal(first.ticks, second.ticks)
    assert np.array_equal(first.channels, second.channels)
    assert first.is_sorted()


def test_gated_channel_stays_inside_gates():
    events = generate_triplets(replace(SourceConfig(), pair_rate=2000.0), 5.0, seed=7)
    det = replace(lab_detectors(), channels=tuple(
        replace(c, dark_rate=c.dark_rate * 1000) for c in lab_detectors().channels
    ))
    stream = detect(events, det, seed=7, duration_s=5.0)
    triggers = stream.channel_ticks(2)
    gated = stream.channel_ticks(3)
    assert gated.size > 0
    width_ticks = math.floor(50.0 / stream.tick_ns)
    idx = np.searchsorted(triggers, gated, side='right') - 1
    assert np.all(idx >= 0)
    assert np.all(gated - triggers[idx] <= width_ticks)


def test_zero_efficiency_leaves_only_darks():
    events = generate_triplets(replace(SourceConfig(), pair_rate=100.0), 10.0, seed=8)
    det = DetectorConfig(channels=(
        ChannelConfig(efficiency=0.0, dark_rate=1000.0),
        ChannelConfig(efficiency=0.0, dark_rate=1000.0),
    ))
    stream = detect(events, det, seed=8, duration_s=10.0)
    assert abs(len(stream) - 20000) < 5 * math.sqrt(20000)


def test_dead_time_is_accepted_but_not_modeled(caplog):
    events = generate_triplets(replace(SourceConfig(), pair_rate=500.0), 2.0, seed=11)
    base = lab_detectors()
    with_dead_time = replace(base, channels=tuple(replace(c, dead_time_ns=50.0) for c in base.channels))
    with caplog.at_level('WARNING'):
        stream = detect(events, with_dead_time, seed=11, duration_s=2.0)
    assert "dead time" in caplog.text
    reference = detect(events, base, seed=11, duration_s=2.0)
    assert np.array_equal(stream.ticks, reference.ticks)
    assert np.array_equal(stream.channels, reference.channels)

    with pytest.raises(ValueError, match="dead_time_ns"):
        replace(base.channels[0], dead_time_ns=-1.0).validate('ch1')


def test_gated_darks_scale_with_open_time():
    det = DetectorConfig(
        channels=(ChannelConfig(efficiency=0.0),
                  ChannelConfig(efficiency=0.0, dark_rate=1000.0),
                  ChannelConfig(efficiency=0.0, dark_rate=1e-3)),
        gate=GateConfig(channel=3, trigger=2, width_ns=50.0),
    )
    empty = EventBatch(np.zeros(0), np.zeros((0, 3)), np.zeros(0))
    stream = detect(empty, det, seed=9, duration_s=20.0)
    expected = stream.counts_per_channel()[2] * 50.0 * 1e-3
    assert abs(stream.counts_per_channel().get(3, 0) - expected) < 5 * math.sqrt(expected)


def test_timing_marginals_follow_jitter_convolution():
    jitters = (0.30, 0.15, 0.15)
    events = generate_triplets(replace(SourceConfig(), pair_rate=1000.0), 12.0, seed=10)
    stream = detect(events, ideal_detectors(offsets=(0.0, 0.0, 1.0), jitters=jitters), seed=10)
    triples = find_triples(stream, window=32)
    assert len(triples) >= 10000

    stats = timing_stats(histogram2d(triples, stream.tick_ns), seed=10)
    quantization = stream.tick_ns ** 2 / 6.0
    assert math.isclose(stats.dt21, math.sqrt(jitters[0] ** 2 + jitters[1] ** 2 + quantization), rel_tol=0.05)
    assert math.isclose(stats.dt32, math.sqrt(jitters[1] ** 2 + jitters[2] ** 2 + quantization), rel_tol=0.05)
    assert stats.dt32 < 0.7 * stats.dt21


def test_lab_calibration_detected_rate():
    """Generated 45/min over 72.6 h leaves about 7 detected triples per hour"""
    hours = 72.6
    events = generate_triplets(SourceConfig(), hours * 3600.0, seed=11)
    stream = detect(events, without_darks(lab_detectors()), seed=11, duration_s=hours * 3600.0)
    rate = len(find_triples(stream)) / hours
    assert abs(rate - 7.0) <= 0.3 * 7.0


def test_bandwidth_drift_statistics():
    times, values = simulate_bandwidth_drift(6.0, 2.0, 600.0, 72.6 * 3600.0, 300.0, derive_rng(1, "drift"))
    assert times[0] == 0.0 and math.isclose(times[-1], 72.6 * 3600.0, abs_tol=300.0)
    assert np.all(values >= 0)
    assert math.isclose(np.mean(values), 6.0, rel_tol=0.1)
    assert math.isclose(np.std(values), 2.0, rel_tol=0.15)


def test_shared_drift_path_is_used():
    cfg = replace(SourceConfig(), pair_rate=1e5)
    flat = DriftPath(np.array([0.0, 10.0]), np.full(2, mhz_to_angular(20.0)))
    events = generate_triplets(cfg, 1.0, seed=12, drift=flat)
    assert math.isclose(np.std(events.pump - cfg.pump_center), mhz_to_angular(20.0), rel_tol=0.02)


def test_invalid_detector_config():
    with pytest.raises(ValueError, match="ch2.efficiency"):
        DetectorConfig(channels=(ChannelConfig(), ChannelConfig(efficiency=1.5))).validate()
    with pytest.raises(ValueError, match="width_ns"):
        GateConfig(width_ns=0.0).validate()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
