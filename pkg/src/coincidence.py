"""
Coincidence engine

Extracts three-fold and two-fold coincidences from a tick-sorted tag stream,
histograms their arrival-time differences and turns the marginals into
background-subtracted timing uncertainties with bootstrap errors.

Matching is greedy in arrival order: every tag waits in a per-channel buffer
for at most `window` ticks, and a tag that completes a coincidence consumes
the partners closest to it. A numpy prefilter drops tags that cannot have
a partner on every other channel before the Python loop runs.
"""

import time
import logging
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tagfile import TagStream, DEFAULT_TICK_NS
from utils import derive_rng

DEFAULT_WINDOW = 32
DEFAULT_SIDEBAND_SIGMAS = 10.0
DEFAULT_RESAMPLES = 200
MIN_COUNTS = 30
MAD_TO_SIGMA = 1.4826


class UnsortedStreamError(ValueError):
    """Tag stream is not in non-decreasing tick order"""


class InsufficientStatisticsError(ValueError):
    """Too few counts for a timing estimate"""


class NoPeakError(ValueError):
    """Histogram holds no peak above its background"""


class TripletEvent(NamedTuple):
    t1: int
    t2: int
    t3: int


class PairEvent(NamedTuple):
    ta: int
    tb: int


@dataclass
class Histogram1D:
    """Counts per tick of a time difference; bin k covers offset lo + k"""
    lo: int
    counts: np.ndarray
    tick_ns: float = DEFAULT_TICK_NS
    label: str = ""

    @property
    def offsets(self) -> np.ndarray:
        return self.lo + np.arange(self.counts.size)

    @property
    def centers_ns(self) -> np.ndarray:
        return self.offsets * self.tick_ns

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'bin_center_ns': self.centers_ns, 'count': self.counts})


@dataclass
class Histogram2D:
    """Triple counts over (t2 - t1, t3 - t2) at one tick per bin"""
    lo1: int
    lo2: int
    counts: np.ndarray
    tick_ns: float = DEFAULT_TICK_NS
    overflow: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.overflow

    def to_frame(self) -> pd.DataFrame:
        i, j = np.nonzero(self.counts)
        return pd.DataFrame({
            't21_ns': (self.lo1 + i) * self.tick_ns,
            't32_ns': (self.lo2 + j) * self.tick_ns,
            'count': self.counts[i, j],
        })


@dataclass
class PeakStats:
    """Background-subtracted spread of one timing marginal"""
    std_ns: float
    std_err_ns: float
    center_ns: float
    counts: int
    background_per_bin: float
    signal: float


@dataclass
class TimingStats:
    dt21: float
    dt32: float
    dt31: float
    dt21_err: float
    dt32_err: float
    dt31_err: float
    counts: int
    background: Dict[str, float]

    def to_dict(self) -> Dict[str, object]:
        return {
            'dt21': self.dt21, 'dt32': self.dt32, 'dt31': self.dt31,
            'dt21_err': self.dt21_err, 'dt32_err': self.dt32_err, 'dt31_err': self.dt31_err,
            'counts': self.counts,
            'background_per_bin': dict(self.background),
        }


@dataclass
class DoublesResult:
    pairs: List[PairEvent]
    histogram: Histogram1D
    channels: Tuple[int, int]


def check_sorted(ticks: np.ndarray) -> None:
    """Raise UnsortedStreamError naming the first out-of-order record"""
    bad = np.flatnonzero(np.diff(ticks) < 0)
    if bad.size:
        k = int(bad[0]) + 1
        raise UnsortedStreamError(f"stream not sorted at record {k}: tick {ticks[k]} follows {ticks[k - 1]}")


def _select(stream: TagStream, channels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    check_sorted(stream.ticks)
    order = np.lexsort((stream.channels, stream.ticks))
    ticks, chans = stream.ticks[order], stream.channels[order]
    keep = np.isin(chans, channels)
    return ticks[keep], chans[keep]


def _candidate_mask(ticks: np.ndarray, chans: np.ndarray, channels: Sequence[int], window: int) -> np.ndarray:
    """Tags having at least one tag of every other channel within the window"""
    mask = np.zeros(ticks.size, dtype=bool)
    per_channel = {c: ticks[chans == c] for c in channels}
    for c in channels:
        own = chans == c
        ok = np.ones(int(own.sum()), dtype=bool)
        t = ticks[own]
        for d in channels:
            if d == c:
                continue
            other = per_channel[d]
            if other.size == 0:
                ok[:] = False
                break
            first = np.searchsorted(other, t - window, side='left')
            nearest = other[np.minimum(first, other.size - 1)]
            ok &= (first < other.size) & (nearest <= t + window)
        mask[own] = ok
    return mask


def _greedy_triples(ticks: List[int], chans: List[int], channels: Tuple[int, int, int],
                    window: int) -> List[TripletEvent]:
    a, b, c = channels
    buffers = {ch: deque() for ch in channels}
    partners = {ch: tuple(o for o in channels if o != ch) for ch in channels}
    triples = []

    for t, ch in zip(ticks, chans):
        for buf in buffers.values():
            while buf and t - buf[0] > window:
                buf.popleft()

        p, q = partners[ch]
        if not (buffers[p] and buffers[q]):
            buffers[ch].append(t)
            continue

        best = None
        for u in buffers[p]:
            for v in buffers[q]:
                times = {ch: t, p: u, q: v}
                key = (abs(times[b] - times[a]), abs(times[c] - times[b]), times[a] + times[b] + times[c])
                if best is None or key < best[0]:
                    best = (key, u, v, times)

        _, u, v, times = best
        buffers[p].remove(u)
        buffers[q].remove(v)
        triples.append(TripletEvent(times[a], times[b], times[c]))

    return triples


def _triples_in_segment(ticks: np.ndarray, chans: np.ndarray, channels: Tuple[int, int, int],
                        window: int) -> List[TripletEvent]:
    mask = _candidate_mask(ticks, chans, channels, window)
    return _greedy_triples(ticks[mask].tolist(), chans[mask].tolist(), channels, window)


def find_triples(stream: TagStream, window: int = DEFAULT_WINDOW,
                 channels: Tuple[int, int, int] = (1, 2, 3)) -> List[TripletEvent]:
    """One tag per channel, pairwise within window ticks, each tag used at most once"""
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    ticks, chans = _select(stream, channels)
    triples = _triples_in_segment(ticks, chans, tuple(channels), window)
    logging.info(f"Found {len(triples)} triples among {ticks.size} tags (window {window} ticks)")
    return triples


def _segment_starts(ticks: np.ndarray, window: int, chunk_ticks: int) -> List[int]:
    """Chunk boundaries placed only at quiet gaps longer than the window"""
    if ticks.size == 0:
        return [0]
    gap_idx = np.flatnonzero(np.diff(ticks) > window) + 1
    gap_ticks = ticks[gap_idx]
    starts = [0]
    while True:
        target = ticks[starts[-1]] + chunk_ticks
        j = int(np.searchsorted(gap_ticks, target, side='left'))
        if j >= gap_idx.size:
            break
        starts.append(int(gap_idx[j]))
    return starts


def find_triples_chunked(stream: TagStream, window: int = DEFAULT_WINDOW,
                         chunk_ticks: int = 10 ** 10, workers: int = 1,
                         channels: Tuple[int, int, int] = (1, 2, 3)) -> List[TripletEvent]:
    """Parallel find_triples over time chunks; output equals the sequential result"""
    if window <= 0 or chunk_ticks <= 0:
        raise ValueError(f"window and chunk_ticks must be positive, got {window}, {chunk_ticks}")
    ticks, chans = _select(stream, channels)
    starts = _segment_starts(ticks, window, chunk_ticks)
    bounds = list(zip(starts, starts[1:] + [ticks.size]))
    segments = [(ticks[s:e], chans[s:e], tuple(channels), window) for s, e in bounds]
    logging.info(f"Processing {ticks.size} tags in {len(segments)} chunks with {workers} workers")

    if workers <= 1 or len(segments) == 1:
        results = [_triples_in_segment(*segment) for segment in segments]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_triples_in_segment, *zip(*segments)))

    return [triple for part in results for triple in part]


def find_doubles(stream: TagStream, channels: Tuple[int, int] = (1, 2),
                 window: int = DEFAULT_WINDOW) -> DoublesResult:
    """Greedy two-fold coincidences and the histogram of t_b - t_a"""
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    a, b = channels
    ticks, chans = _select(stream, channels)
    mask = _candidate_mask(ticks, chans, channels, window)

    buffers = {a: deque(), b: deque()}
    pairs = []
    for t, ch in zip(ticks[mask].tolist(), chans[mask].tolist()):
        for buf in buffers.values():
            while buf and t - buf[0] > window:
                buf.popleft()
        other = b if ch == a else a
        if buffers[other]:
            # Buffer is in arrival order, so the newest entry is the nearest partner
            u = buffers[other].pop()
            pairs.append(PairEvent(t, u) if ch == a else PairEvent(u, t))
        else:
            buffers[ch].append(t)

    pairs.sort()
    diffs = np.array([p.tb - p.ta for p in pairs], dtype=np.int64)
    counts = np.bincount(diffs + window, minlength=2 * window + 1) if diffs.size else np.zeros(2 * window + 1, dtype=np.int64)
    histogram = Histogram1D(-window, counts.astype(np.int64), stream.tick_ns, f"t{b}-t{a}")
    logging.info(f"Found {len(pairs)} doubles on channels {a},{b}")
    return DoublesResult(pairs, histogram, (a, b))


def histogram2d(triples: Sequence[TripletEvent], tick_ns: float = DEFAULT_TICK_NS,
                bounds: Tuple[Tuple[int, int], Tuple[int, int]] = ((-DEFAULT_WINDOW, DEFAULT_WINDOW),
                                                                  (-DEFAULT_WINDOW, DEFAULT_WINDOW))) -> Histogram2D:
    """Bin triples over (t2 - t1, t3 - t2); bounds are inclusive tick offsets"""
    (lo1, hi1), (lo2, hi2) = bounds
    counts = np.zeros((hi1 - lo1 + 1, hi2 - lo2 + 1), dtype=np.int64)
    if not triples:
        return Histogram2D(lo1, lo2, counts, tick_ns)

    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    d1 = t[:, 1] - t[:, 0]
    d2 = t[:, 2] - t[:, 1]
    inside = (d1 >= lo1) & (d1 <= hi1) & (d2 >= lo2) & (d2 <= hi2)
    np.add.at(counts, (d1[inside] - lo1, d2[inside] - lo2), 1)

    overflow = int((~inside).sum())
    if overflow:
        logging.warning(f"{overflow} triples fall outside the histogram bounds")
    return Histogram2D(lo1, lo2, counts, tick_ns, overflow)


def marginals(h: Histogram2D) -> Dict[str, Histogram1D]:
    """Sum onto t2 - t1, t3 - t2 and the diagonal t3 - t1"""
    n1, n2 = h.counts.shape
    i, j = np.indices(h.counts.shape)
    diagonal = np.bincount((i + j).ravel(), weights=h.counts.ravel(), minlength=n1 + n2 - 1)
    return {
        't21': Histogram1D(h.lo1, h.counts.sum(axis=1), h.tick_ns, 't2-t1'),
        't32': Histogram1D(h.lo2, h.counts.sum(axis=0), h.tick_ns, 't3-t2'),
        't31': Histogram1D(h.lo1 + h.lo2, diagonal.astype(np.int64), h.tick_ns, 't3-t1'),
    }


def _weighted_median(x: np.ndarray, w: np.ndarray) -> float:
    cumulative = np.cumsum(w)
    return float(x[np.searchsorted(cumulative, 0.5 * cumulative[-1])])


def _peak_window(x: np.ndarray, counts: np.ndarray, sideband_sigmas: float) -> Tuple[float, float]:
    """(center, half width) of the peak region, seeded by the median and MAD"""
    center = _weighted_median(x, counts)
    order = np.argsort(np.abs(x - center))
    mad = _weighted_median(np.abs(x - center)[order], counts[order])
    return center, sideband_sigmas * max(MAD_TO_SIGMA * mad, 1.0)


def _peak_moments(x: np.ndarray, counts: np.ndarray,
                  sideband_sigmas: float) -> Tuple[float, float, float, float, bool]:
    """(std, mean, background per bin, signal, sidebands found) in ticks"""
    counts = counts.astype(float)
    center, half = _peak_window(x, counts, sideband_sigmas)

    region = np.abs(x - center) <= half
    sidebands = ~region
    has_sidebands = bool(sidebands.any())
    if not has_sidebands:
        # Fall back to the outer eighth of the histogram on each side
        edge = max(1, counts.size // 8)
        sidebands = np.zeros(counts.size, dtype=bool)
        sidebands[:edge] = True
        sidebands[-edge:] = True
    background = float(counts[sidebands].mean())

    weights = counts[region] - background
    signal = float(weights.sum())
    noise = np.sqrt(max(background * region.sum(), 1.0))
    if signal <= 3.0 * noise:
        raise NoPeakError(f"signal {signal:.1f} does not exceed 3 x background noise {noise:.1f}")

    xs = x[region]
    mean = float(np.dot(weights, xs) / signal)
    variance = float(np.dot(weights, (xs - mean) ** 2) / signal)
    return float(np.sqrt(max(variance, 0.0))), mean, background, signal, has_sidebands


def marginal_stats(h: Histogram1D, sideband_sigmas: float = DEFAULT_SIDEBAND_SIGMAS,
                   resamples: int = DEFAULT_RESAMPLES, seed: int = 0,
                   min_counts: int = MIN_COUNTS) -> PeakStats:
    """Background-subtracted std of a 1D histogram with a multinomial bootstrap error

    The background is flat across the histogram, which holds for doubles
    binned over the full matching window.
    """
    total = h.total
    if total < min_counts:
        raise InsufficientStatisticsError(f"{h.label or 'histogram'} holds {total} counts, need at least {min_counts}")

    x = h.offsets.astype(float)
    std, mean, background, signal, has_sidebands = _peak_moments(x, h.counts, sideband_sigmas)
    if not has_sidebands:
        logging.warning(f"{h.label or 'histogram'}: peak region covers every bin, background taken from the edges")

    rng = derive_rng(seed, f"timing_stats.bootstrap.{h.label}")
    samples = rng.multinomial(total, h.counts / total, size=resamples)
    boot = []
    for sample in samples:
        try:
            boot.append(_peak_moments(x, sample, sideband_sigmas)[0])
        except NoPeakError:
            continue
    std_err = float(np.std(boot, ddof=1)) if len(boot) > 1 else float('nan')

    return PeakStats(
        std_ns=std * h.tick_ns,
        std_err_ns=std_err * h.tick_ns,
        center_ns=mean * h.tick_ns,
        counts=total,
        background_per_bin=background,
        signal=signal,
    )


def _difference_grids(h: Histogram2D) -> Dict[str, np.ndarray]:
    """Tick offset of every 2D bin along each marginal"""
    i, j = np.indices(h.counts.shape)
    d1 = h.lo1 + i
    d2 = h.lo2 + j
    return {'t21': d1, 't32': d2, 't31': d1 + d2}


def reachable_bins(h: Histogram2D, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Bins a triple matched within `window` can occupy: |t2-t1|, |t3-t2|, |t3-t1| <= window"""
    grids = _difference_grids(h)
    return np.all([np.abs(g) <= window for g in grids.values()], axis=0)


def _peak_mask(counts: np.ndarray, grids: Dict[str, np.ndarray], sideband_sigmas: float) -> np.ndarray:
    """Bins inside the peak region of every marginal"""
    mask = np.ones(counts.shape, dtype=bool)
    for diff in grids.values():
        keys, inverse = np.unique(diff.ravel(), return_inverse=True)
        projected = np.bincount(inverse, weights=counts.ravel(), minlength=keys.size)
        center, half = _peak_window(keys.astype(float), projected, sideband_sigmas)
        mask &= np.abs(diff - center) <= half
    return mask


def _accidental_density(counts: np.ndarray, grids: Dict[str, np.ndarray], reachable: np.ndarray,
                        peak: np.ndarray, window: int) -> Tuple[float, float]:
    """Flat accidental counts per bin inside and outside the reachable region"""
    inside = reachable & ~peak
    if not inside.any():
        # Fall back to the outer ring of the reachable region
        extent = np.max([np.abs(g) for g in grids.values()], axis=0)
        inside = reachable & (extent > window - max(1, window // 8))
    b_in = float(counts[inside].mean()) if inside.any() else 0.0
    b_out = float(counts[~reachable].mean()) if (~reachable).any() else 0.0
    return b_in, b_out


def _timing_moments(counts: np.ndarray, grids: Dict[str, np.ndarray], reachable: np.ndarray,
                    window: int, sideband_sigmas: float) -> Tuple[Dict[str, float], Dict[str, float], bool]:
    """Per-marginal std in ticks of the accidental-subtracted peak, and the flat densities"""
    counts = counts.astype(float)
    peak = _peak_mask(counts, grids, sideband_sigmas)
    has_sidebands = bool((reachable & ~peak).any())
    b_in, b_out = _accidental_density(counts, grids, reachable, peak, window)
    accidentals = np.where(reachable, b_in, b_out)

    net = np.where(peak, counts - accidentals, 0.0)
    signal = float(net.sum())
    noise = np.sqrt(max(float(accidentals[peak].sum()), 1.0))
    if signal <= 3.0 * noise:
        raise NoPeakError(f"signal {signal:.1f} does not exceed 3 x accidental noise {noise:.1f}")

    stds = {}
    for key, diff in grids.items():
        mean = float((net * diff).sum() / signal)
        variance = float((net * (diff - mean) ** 2).sum() / signal)
        stds[key] = float(np.sqrt(max(variance, 0.0)))
    return stds, {'reachable': b_in, 'unreachable': b_out}, has_sidebands


def timing_stats(h: Histogram2D, sideband_sigmas: float = DEFAULT_SIDEBAND_SIGMAS,
                 resamples: int = DEFAULT_RESAMPLES, seed: int = 0,
                 window: int = DEFAULT_WINDOW) -> TimingStats:
    """Timing uncertainties of the three marginals of a triple histogram

    Accidentals are flat per bin inside the region a triple matched within
    `window` can reach, with a separate flat level outside it. Both levels
    come from the 2D bins outside the peak and are subtracted bin by bin
    before marginalising. Errors come from a multinomial
    bootstrap of the whole 2D histogram.
    """
    binned = int(h.counts.sum())
    if binned < MIN_COUNTS:
        raise InsufficientStatisticsError(f"histogram holds {binned} binned triples, need at least {MIN_COUNTS}")

    grids = _difference_grids(h)
    reachable = reachable_bins(h, window)
    stds, background, has_sidebands = _timing_moments(h.counts, grids, reachable, window, sideband_sigmas)
    if not has_sidebands:
        logging.warning("Peak region covers the reachable window, accidentals taken from its outer ring")

    rng = derive_rng(seed, "timing_stats.bootstrap")
    samples = rng.multinomial(binned, (h.counts / binned).ravel(), size=resamples)
    boot = []
    for sample in samples:
        try:
            boot.append(_timing_moments(sample.reshape(h.counts.shape), grids, reachable,
                                        window, sideband_sigmas)[0])
        except NoPeakError:
            continue
    errors = {
        key: float(np.std([b[key] for b in boot], ddof=1)) * h.tick_ns if len(boot) > 1 else float('nan')
        for key in stds
    }

    logging.info(
        "Timing spreads: "
        + ", ".join(f"{k} = {stds[k] * h.tick_ns:.4f} +/- {errors[k]:.4f} ns" for k in stds)
    )
    return TimingStats(
        dt21=stds['t21'] * h.tick_ns, dt32=stds['t32'] * h.tick_ns, dt31=stds['t31'] * h.tick_ns,
        dt21_err=errors['t21'], dt32_err=errors['t32'], dt31_err=errors['t31'],
        counts=h.total,
        background=background,
    )


def predicted_accidental_doubles(rate_a: float, rate_b: float, window: int, tick_ns: float,
                                 duration_s: float) -> float:
    """Expected accidental doubles 2 r_a r_b w T between independent Poisson streams

    Tick quantization of both arrivals widens the effective window to
    (2 * window + 1) ticks.
    """
    w = (window + 0.5) * tick_ns * 1e-9
    return 2.0 * rate_a * rate_b * w * duration_s


def predicted_accidental_triples(trigger_count: float, rate_1_per_ns: float, gated_rate_per_ns: float,
                                 window: int, tick_ns: float) -> float:
    """Expected accidental triples when channel 3 only counts in gates after channel 2

    Per trigger, a free-running channel-1 tag and a gated channel-3 tag must
    fall in the region |t1 - t2| <= w, 0 <= t3 - t2 <= w, |t3 - t1| <= w,
    of area 1.5 w^2 with w = (window + 0.5) ticks.
    """
    w = (window + 0.5) * tick_ns
    return trigger_count * rate_1_per_ns * gated_rate_per_ns * 1.5 * w * w


def measure_throughput(stream: TagStream, window: int = DEFAULT_WINDOW) -> float:
    """Tags per second processed by find_triples"""
    start = time.perf_counter()
    find_triples(stream, window)
    elapsed = time.perf_counter() - start
    rate = len(stream) / elapsed if elapsed > 0 else float('inf')
    logging.info(f"Throughput: {rate:,.0f} tags/s over {len(stream)} tags")
    return rate
