"""
Pump linewidth monitor

Forward model of a scanning Fabry-Perot transmission peak (Gaussian laser
line convolved with the Lorentzian instrument response, i.e. a Voigt
profile) and the inverse fit that recovers the laser linewidth from a scan.

Bandwidth means the standard deviation of the optical frequency in MHz;
instrument_width is the Lorentzian half width at half maximum in MHz.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import curve_fit
from scipy.signal import find_peaks
from scipy.special import voigt_profile

from source import simulate_bandwidth_drift
from utils import derive_rng, derive_seed

MIN_SAMPLES = 100
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


class NoPeakError(ValueError):
    """Scan has no dominant transmission peak"""


class FitError(RuntimeError):
    """Line-shape fit did not converge"""


@dataclass(frozen=True)
class PumpMonitorConfig:
    instrument_width_mhz: float = 1.0
    noise_level: float = 0.05
    scan_range_mhz: float = 100.0
    samples: int = 1001
    cadence_s: float = 300.0

    def validate(self, prefix: str = 'pump') -> None:
        if not (self.instrument_width_mhz >= 0):
            raise ValueError(f"{prefix}.instrument_width_mhz must be >= 0, got {self.instrument_width_mhz}")
        if not (self.noise_level >= 0):
            raise ValueError(f"{prefix}.noise_level must be >= 0, got {self.noise_level}")
        if not (self.scan_range_mhz > 0):
            raise ValueError(f"{prefix}.scan_range_mhz must be > 0, got {self.scan_range_mhz}")
        if self.samples < MIN_SAMPLES:
            raise ValueError(f"{prefix}.samples must be >= {MIN_SAMPLES}, got {self.samples}")
        if not (self.cadence_s > 0):
            raise ValueError(f"{prefix}.cadence_s must be > 0, got {self.cadence_s}")


@dataclass
class FPScan:
    offsets_mhz: np.ndarray
    intensities: np.ndarray
    timestamp_s: float = 0.0

    def __post_init__(self):
        self.offsets_mhz = np.asarray(self.offsets_mhz, dtype=float)
        self.intensities = np.asarray(self.intensities, dtype=float)
        if self.offsets_mhz.shape != self.intensities.shape:
            raise ValueError("offsets and intensities differ in length")
        if self.offsets_mhz.size < MIN_SAMPLES:
            raise ValueError(f"scan needs at least {MIN_SAMPLES} samples, got {self.offsets_mhz.size}")
        if np.any(self.intensities < 0):
            raise ValueError("scan intensities must be non-negative")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'offset_MHz': self.offsets_mhz, 'intensity': self.intensities})


@dataclass(frozen=True)
class BandwidthEstimate:
    bandwidth_mhz: float
    center_mhz: float
    amplitude: float
    residual_rms: float


@dataclass
class BandwidthSeries:
    timestamps_s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bandwidths_mhz: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.timestamps_s = np.asarray(self.timestamps_s, dtype=float)
        self.bandwidths_mhz = np.asarray(self.bandwidths_mhz, dtype=float)
        if np.any(self.bandwidths_mhz <= 0):
            raise ValueError("bandwidths must be positive")

    def __len__(self) -> int:
        return int(self.bandwidths_mhz.size)

    @property
    def mean(self) -> float:
        return float(np.mean(self.bandwidths_mhz)) if len(self) else float('nan')

    @property
    def std(self) -> float:
        return float(np.std(self.bandwidths_mhz, ddof=1)) if len(self) > 1 else float('nan')

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'timestamp_s': self.timestamps_s, 'bandwidth_MHz': self.bandwidths_mhz})


def _line(offsets: np.ndarray, center: float, sigma: float, gamma: float) -> np.ndarray:
    # Peak-normalized Voigt profile
    profile = voigt_profile(offsets - center, sigma, gamma)
    return profile / voigt_profile(0.0, sigma, gamma)


def simulate_scan(true_bandwidth: float, instrument_width: float, noise_level: float, seed: int,
                  center: float = 0.0, scan_range: float = 100.0, samples: int = 1001,
                  timestamp: float = 0.0) -> FPScan:
    """Transmission of a Gaussian line through a Lorentzian cavity response, with multiplicative noise"""
    if not (true_bandwidth > 0) or instrument_width < 0:
        raise ValueError(f"need true_bandwidth > 0 and instrument_width >= 0, got {true_bandwidth}, {instrument_width}")

    rng = np.random.default_rng(seed)
    offsets = np.linspace(-scan_range / 2.0, scan_range / 2.0, samples)
    intensities = _line(offsets, center, true_bandwidth, instrument_width)
    if noise_level > 0:
        intensities = intensities * (1.0 + noise_level * rng.standard_normal(samples))
    return FPScan(offsets, np.clip(intensities, 0.0, None), timestamp)


def apparent_width(scan: FPScan) -> float:
    """FWHM of the raw scan expressed as a Gaussian standard deviation (MHz)"""
    x, y = scan.offsets_mhz, scan.intensities
    peak = int(np.argmax(y))
    half = y[peak] / 2.0

    left = peak
    while left > 0 and y[left] > half:
        left -= 1
    right = peak
    while right < y.size - 1 and y[right] > half:
        right += 1

    x_left = np.interp(half, [y[left], y[left + 1]], [x[left], x[left + 1]]) if left < peak else x[left]
    x_right = np.interp(half, [y[right], y[right - 1]], [x[right], x[right - 1]]) if right > peak else x[right]
    return float((x_right - x_left) * FWHM_TO_SIGMA)


def estimate_bandwidth(scan: FPScan, instrument_width: float) -> BandwidthEstimate:
    """Fit amplitude, center, Gaussian width and baseline with the instrument width held fixed"""
    x, y = scan.offsets_mhz, scan.intensities
    span = float(y.max() - y.min())
    if not span > 0:
        raise NoPeakError("scan is flat")

    noise = 1.4826 * float(np.median(np.abs(np.diff(y)))) / math.sqrt(2.0)
    peaks, properties = find_peaks(y, prominence=0.5 * span)
    if peaks.size == 0 or y.max() - np.median(y) <= 5.0 * noise:
        raise NoPeakError(f"no dominant peak (span {span:.3g}, noise {noise:.3g})")

    peak = int(peaks[np.argmax(properties['prominences'])])
    step = float(np.median(np.diff(x)))
    sigma0 = max(apparent_width(scan), step)

    def model(offsets, amplitude, center, sigma, baseline):
        return amplitude * _line(offsets, center, sigma, instrument_width) + baseline

    p0 = [float(y[peak]), float(x[peak]), sigma0, 0.0]
    bounds = ([0.0, x.min(), 1e-6, -np.inf], [np.inf, x.max(), np.inf, np.inf])
    try:
        popt, _ = curve_fit(model, x, y, p0=p0, bounds=bounds, maxfev=10000)
    except (RuntimeError, ValueError) as e:
        raise FitError(f"line-shape fit failed: {e}") from e

    amplitude, center, sigma, baseline = (float(v) for v in popt)
    if not (np.isfinite(sigma) and sigma > 0):
        raise FitError(f"fit returned invalid width {sigma}")

    residual = float(np.sqrt(np.mean((y - model(x, *popt)) ** 2)))
    logging.debug(f"Scan at {scan.timestamp_s:g} s: bandwidth {sigma:.3f} MHz, residual {residual:.3g}")
    return BandwidthEstimate(sigma, center, amplitude, residual)


def measure_series(times_s: np.ndarray, truth_mhz: np.ndarray, cfg: PumpMonitorConfig,
                   seed: int) -> BandwidthSeries:
    """Scan and fit once per entry of a true-bandwidth path"""
    cfg.validate()
    timestamps, values = [], []
    for k, (t, bandwidth) in enumerate(zip(times_s, truth_mhz)):
        scan = simulate_scan(
            float(bandwidth), cfg.instrument_width_mhz, cfg.noise_level,
            derive_seed(seed, f"pump.scan.{k}"),
            scan_range=cfg.scan_range_mhz, samples=cfg.samples, timestamp=float(t)
        )
        try:
            estimate = estimate_bandwidth(scan, cfg.instrument_width_mhz)
        except (NoPeakError, FitError) as e:
            logging.warning(f"Skipping scan {k} at {t:g} s: {e}")
            continue
        timestamps.append(float(t))
        values.append(estimate.bandwidth_mhz)

    series = BandwidthSeries(np.array(timestamps), np.array(values))
    logging.info(f"Bandwidth series: {len(series)} scans, mean {series.mean:.3f} MHz, std {series.std:.3f} MHz")
    return series


def simulate_truth(mean_mhz: float, spread_mhz: float, timescale_s: float, duration_s: float,
                   cadence_s: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Drifting true bandwidth sampled at the scan cadence"""
    return simulate_bandwidth_drift(mean_mhz, spread_mhz, timescale_s, duration_s, cadence_s,
                                    derive_rng(seed, "drift"))


def simulate_series(mean_mhz: float, spread_mhz: float, timescale_s: float, cfg: PumpMonitorConfig,
                    duration_s: float, seed: int) -> Tuple[BandwidthSeries, np.ndarray]:
    """Measured series over a drifting truth; returns (series, truth at every scan)"""
    times, truth = simulate_truth(mean_mhz, spread_mhz, timescale_s, duration_s, cfg.cadence_s, seed)
    return measure_series(times, truth, cfg, seed), truth


def summarize_series(series: BandwidthSeries) -> Dict[str, float]:
    return {
        'mean_mhz': series.mean,
        'std_mhz': series.std,
        'scans': len(series),
        'duration_s': float(np.ptp(series.timestamps_s)) if len(series) > 1 else 0.0,
    }
