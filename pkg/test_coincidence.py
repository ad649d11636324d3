#!/usr/bin/env python3
"""
Tests for coincidence extraction, histograms and timing statistics
"""

import sys
import math
from dataclasses import replace

import numpy as np
import pytest

# Add src to path
sys.path.append('src')

from coincidence import (
    TripletEvent, Histogram1D, Histogram2D, UnsortedStreamError, InsufficientStatisticsError, NoPeakError,
    find_triples, find_triples_chunked, find_doubles, histogram2d, marginals, marginal_stats,
    timing_stats, reachable_bins, predicted_accidental_doubles, predicted_accidental_triples,
    measure_throughput
)
from source import (
    SourceConfig, ChannelConfig, DetectorConfig, GateConfig, EventBatch, generate_triplets, detect,
    lab_detectors
)
from tagfile import TagStream

NO_EVENTS = EventBatch(np.zeros(0), np.zeros((0, 3)), np.zeros(0))
LAB_JITTER_TICKS = np.array([0.318, 0.1435, 0.040]) / 0.156


def dark_stream(rates, duration_s, seed, gate=None) -> TagStream:
    det = DetectorConfig(channels=tuple(ChannelConfig(efficiency=0.0, dark_rate=r) for r in rates), gate=gate)
    return detect(NO_EVENTS, det, seed=seed, duration_s=duration_s)


def jittered_triples_histogram(n: int, seed: int) -> Histogram2D:
    """n Gaussian-jittered triples binned over (t2 - t1, t3 - t2) at +/-32 ticks"""
    rng = np.random.default_rng(seed)
    emission = rng.uniform(0.0, 1e6, (n, 1))
    ticks = np.floor(emission + rng.standard_normal((n, 3)) * LAB_JITTER_TICKS).astype(np.int64)
    counts = np.zeros((65, 65), dtype=np.int64)
    h = Histogram2D(-32, -32, counts)
    d1 = ticks[:, 1] - ticks[:, 0]
    d2 = ticks[:, 2] - ticks[:, 1]
    keep = (np.abs(d1) <= 32) & (np.abs(d2) <= 32) & (np.abs(d1 + d2) <= 32)
    np.add.at(counts, (d1[keep] + 32, d2[keep] + 32), 1)
    return h


def test_single_triple():
    stream = TagStream.from_records([(1, 1000), (2, 1002), (3, 1003)])
    assert find_triples(stream, window=32) == [TripletEvent(1000, 1002, 1003)]
    assert find_triples(stream, window=1) == []


def test_unsorted_stream_is_rejected():
    stream = TagStream.from_records([(1, 10), (2, 5), (3, 11)])
    with pytest.raises(UnsortedStreamError, match="record 1"):
        find_triples(stream)


def test_closest_partner_wins_and_tags_are_consumed():
    stream = TagStream.from_records([(1, 0), (1, 1), (2, 2), (3, 3), (2, 4), (3, 5)])
    triples = find_triples(stream, window=32)
    assert triples[0] == TripletEvent(1, 2, 3)
    assert triples[1] == TripletEvent(0, 4, 5)
    assert len(triples) == 2


def test_shuffle_then_sort_gives_identical_triples():
    events = generate_triplets(replace(SourceConfig(), pair_rate=500.0), 2.0, seed=1)
    det = replace(lab_detectors(), channels=tuple(
        replace(c, efficiency=1.0, dark_rate=c.dark_rate * 100) for c in lab_detectors().channels
    ))
    stream = detect(events, det, seed=1, duration_s=2.0)
    rng = np.random.default_rng(1)
    order = rng.permutation(len(stream))
    shuffled = TagStream(stream.channels[order], stream.ticks[order], stream.tick_ns).sorted()
    assert find_triples(shuffled) == find_triples(stream)


def test_chunked_matches_sequential():
    stream = dark_stream((2e6, 2e6, 2e6), 0.05, seed=2)
    sequential = find_triples(stream, window=32)
    assert len(sequential) > 0
    chunked = find_triples_chunked(stream, window=32, chunk_ticks=50000, workers=2)
    assert chunked == sequential
    assert find_triples_chunked(stream, window=32, chunk_ticks=50000, workers=1) == sequential


def test_histogram_single_triple():
    h = histogram2d([TripletEvent(100, 103, 101)])
    assert int(np.count_nonzero(h.counts)) == 1
    for hist in marginals(h).values():
        assert hist.total == 1
    assert marginals(h)['t31'].offsets[np.argmax(marginals(h)['t31'].counts)] == 1


def test_empty_histogram():
    h = histogram2d([])
    assert h.total == 0
    assert all(hist.total == 0 for hist in marginals(h).values())
    with pytest.raises(InsufficientStatisticsError):
        timing_stats(h)


def test_counts_conserved_with_overflow():
    rng = np.random.default_rng(3)
    t1 = rng.integers(0, 10 ** 6, 500)
    triples = [TripletEvent(int(a), int(a + d1), int(a + d1 + d2))
               for a, d1, d2 in zip(t1, rng.integers(-40, 40, 500), rng.integers(-40, 40, 500))]
    h = histogram2d(triples)
    assert h.total == len(triples)
    assert h.overflow > 0
    for hist in marginals(h).values():
        assert hist.total == int(h.counts.sum())


def test_delta_peak_is_quantization_limited():
    counts = np.zeros(65, dtype=np.int64)
    counts[32] = 500
    stats = marginal_stats(Histogram1D(-32, counts))
    assert stats.std_ns <= (1 / math.sqrt(12) + 1) * 0.156


def test_flat_background_is_subtracted():
    x = np.arange(-100, 101)
    peak = np.round(20000 * np.exp(-0.5 * (x / 3.0) ** 2) / (3.0 * math.sqrt(2 * math.pi))).astype(np.int64)
    clean = marginal_stats(Histogram1D(-100, peak))
    noisy = marginal_stats(Histogram1D(-100, peak + 20))
    assert math.isclose(noisy.std_ns, clean.std_ns, rel_tol=0.05)
    assert math.isclose(noisy.background_per_bin, 20.0, rel_tol=0.01)
    assert noisy.std_err_ns > 0


def test_all_background_has_no_peak():
    with pytest.raises(NoPeakError):
        marginal_stats(Histogram1D(-32, np.full(65, 50, dtype=np.int64)))


def test_too_few_counts():
    counts = np.zeros(65, dtype=np.int64)
    counts[30] = 29
    with pytest.raises(InsufficientStatisticsError):
        marginal_stats(Histogram1D(-32, counts))


def assert_same_spreads(stats, reference, rel_tol=0.05):
    for key in ('dt21', 'dt32', 'dt31'):
        assert math.isclose(getattr(stats, key), getattr(reference, key), rel_tol=rel_tol), key


def test_clean_triple_spreads_match_detector_jitter():
    stats = timing_stats(jittered_triples_histogram(400000, seed=20), resamples=20)
    # Floor binning of both arrivals adds tick^2 / 6
    quantization = 0.156 ** 2 / 6.0
    assert math.isclose(stats.dt21, math.sqrt(0.318 ** 2 + 0.1435 ** 2 + quantization), rel_tol=0.03)
    assert math.isclose(stats.dt32, math.sqrt(0.1435 ** 2 + 0.040 ** 2 + quantization), rel_tol=0.03)
    assert math.isclose(stats.dt31, math.sqrt(0.318 ** 2 + 0.040 ** 2 + quantization), rel_tol=0.03)
    assert stats.dt21_err > 0


def test_flat_2d_background_is_subtracted():
    h = jittered_triples_histogram(400000, seed=21)
    clean = timing_stats(h, resamples=20)
    noisy = timing_stats(Histogram2D(h.lo1, h.lo2, h.counts + 3), resamples=20)
    assert_same_spreads(noisy, clean)
    assert math.isclose(noisy.background['reachable'], 3.0, abs_tol=0.05)
    assert math.isclose(noisy.background['unreachable'], 3.0, abs_tol=0.05)


def test_in_window_accidentals_are_subtracted():
    h = jittered_triples_histogram(400000, seed=22)
    clean = timing_stats(h, resamples=20)

    rng = np.random.default_rng(23)
    reachable = reachable_bins(h, 32)
    i = rng.integers(0, 65, 40000)
    j = rng.integers(0, 65, 40000)
    keep = reachable[i, j]
    counts = h.counts.copy()
    np.add.at(counts, (i[keep], j[keep]), 1)
    noisy = timing_stats(Histogram2D(h.lo1, h.lo2, counts), resamples=20)

    assert_same_spreads(noisy, clean)
    expected = keep.sum() / reachable.sum()
    assert math.isclose(noisy.background['reachable'], expected, rel_tol=0.1)
    assert noisy.background['unreachable'] == 0.0


def test_reachable_region_is_the_window_hexagon():
    reachable = reachable_bins(Histogram2D(-32, -32, np.zeros((65, 65), dtype=np.int64)), 32)
    assert reachable.sum() == 3 * 32 * 32 + 3 * 32 + 1
    assert reachable[32 + 32, 32 - 32] and not reachable[32 + 32, 32 + 1]


def test_flat_2d_histogram_has_no_peak():
    with pytest.raises(NoPeakError):
        timing_stats(Histogram2D(-32, -32, np.full((65, 65), 5, dtype=np.int64)), resamples=5)


def test_accidental_doubles_rate_law():
    stream = dark_stream((1e4, 1e4), 100.0, seed=4)
    doubles = find_doubles(stream, (1, 2), window=32)
    expected = predicted_accidental_doubles(1e4, 1e4, 32, stream.tick_ns, 100.0)
    assert math.isclose(expected, 101.4, rel_tol=0.01)
    assert abs(len(doubles.pairs) - expected) <= 3 * math.sqrt(expected)
    assert doubles.histogram.total == len(doubles.pairs)


def test_accidental_triples_with_gate():
    gate = GateConfig(channel=3, trigger=2, width_ns=50.0)
    stream = dark_stream((5e5, 2e4, 0.01), 10.0, seed=5, gate=gate)
    triggers = stream.counts_per_channel()[2]
    expected = predicted_accidental_triples(triggers, 5e5 * 1e-9, 0.01, 32, stream.tick_ns)
    observed = len(find_triples(stream, window=32))
    assert abs(observed - expected) <= 3 * math.sqrt(expected)


def test_dark_counts_at_lab_rates_give_no_triples():
    gate = GateConfig(channel=3, trigger=2, width_ns=50.0)
    stream = dark_stream((100.0, 100.0, 5e-5), 3600.0, seed=6, gate=gate)
    assert len(find_triples(stream)) <= 1


def test_disjoint_streams_have_no_doubles():
    stream = TagStream.from_records([(1, 0), (1, 10), (2, 1000), (2, 2000)])
    result = find_doubles(stream, (1, 2), window=32)
    assert result.pairs == []
    assert result.histogram.total == 0


def test_doubles_in_triplet_stream():
    events = generate_triplets(replace(SourceConfig(), pair_rate=2700.0), 20.0, seed=7)
    stream = detect(events, lab_detectors(), seed=7, duration_s=20.0)
    doubles = find_doubles(stream, (1, 2), window=32)
    stats = marginal_stats(doubles.histogram, seed=7)
    assert abs(stats.std_ns - 0.4) <= 0.2


def test_throughput_is_reported():
    stream = dark_stream((1e5, 1e5, 1e5), 1.0, seed=8)
    assert measure_throughput(stream) > 0


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
