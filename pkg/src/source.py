"""
Cascaded down-conversion source and detection chain

Monte Carlo generation of photon triplets (and pairs) with a drifting pump
linewidth, followed by a detector model with efficiencies, jitter, dark
counts, fixed channel offsets, a gated channel and tick quantization.

Units: times in ns (emission) and s (durations, drift), angular frequencies
in rad/ns.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.signal import lfilter

from tagfile import TagStream, DEFAULT_TICK_NS
from utils import derive_rng

SPEED_OF_LIGHT_NM_PER_NS = 2.99792458e8

PUMP_WAVELENGTH_NM = 404.0
SIGNAL_WAVELENGTH_NM = 842.0
IDLER_WAVELENGTH_NM = 1530.0


def wavelength_to_angular(wavelength_nm: float) -> float:
    """Vacuum wavelength (nm) to angular frequency (rad/ns)"""
    return 2.0 * math.pi * SPEED_OF_LIGHT_NM_PER_NS / wavelength_nm


def mhz_to_angular(value_mhz: float) -> float:
    return 2.0 * math.pi * value_mhz * 1e-3


def angular_to_mhz(value: float) -> float:
    return value / (2.0 * math.pi * 1e-3)


@dataclass(frozen=True)
class SourceConfig:
    """Pump and joint-spectral parameters of the cascaded source"""
    pump_center: float = wavelength_to_angular(PUMP_WAVELENGTH_NM)
    pump_bandwidth_mean: float = mhz_to_angular(6.0)
    pump_bandwidth_spread: float = mhz_to_angular(2.0)
    drift_timescale: float = 600.0
    pair_rate: float = 0.75
    jsa_width_1: float = 2.0 * math.pi * 1e3
    jsa_width_2: float = 2.0 * math.pi * 1e3
    center_1: float = wavelength_to_angular(SIGNAL_WAVELENGTH_NM)
    center_2: float = wavelength_to_angular(IDLER_WAVELENGTH_NM)

    def validate(self, prefix: str = 'source') -> None:
        for name in ('pump_center', 'pump_bandwidth_mean', 'drift_timescale', 'pair_rate',
                     'jsa_width_1', 'jsa_width_2', 'center_1', 'center_2'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{prefix}.{name} must be positive, got {value}")
        if not (math.isfinite(self.pump_bandwidth_spread) and self.pump_bandwidth_spread >= 0):
            raise ValueError(f"{prefix}.pump_bandwidth_spread must be >= 0, got {self.pump_bandwidth_spread}")


@dataclass(frozen=True)
class ChannelConfig:
    """One detector: dark_rate is per second, or per ns of open gate for a gated channel

    dead_time_ns is carried for configuration files only; detection ignores it.
    """
    efficiency: float = 1.0
    jitter_sigma: float = 0.0
    dark_rate: float = 0.0
    offset: float = 0.0
    background_rate: float = 0.0
    dead_time_ns: float = 0.0

    def validate(self, prefix: str) -> None:
        if not (0.0 <= self.efficiency <= 1.0):
            raise ValueError(f"{prefix}.efficiency must be in [0, 1], got {self.efficiency}")
        for name in ('jitter_sigma', 'dark_rate', 'background_rate', 'dead_time_ns'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{prefix}.{name} must be non-negative, got {value}")
        if not math.isfinite(self.offset):
            raise ValueError(f"{prefix}.offset must be finite, got {self.offset}")


@dataclass(frozen=True)
class GateConfig:
    """Channel `channel` only counts within width_ns after each `trigger` tag"""
    channel: int = 3
    trigger: int = 2
    width_ns: float = 50.0

    def validate(self, prefix: str = 'detectors.gate') -> None:
        if self.channel == self.trigger:
            raise ValueError(f"{prefix}: gated channel and trigger must differ, got {self.channel}")
        if not (self.width_ns > 0):
            raise ValueError(f"{prefix}.width_ns must be > 0, got {self.width_ns}")


@dataclass(frozen=True)
class DetectorConfig:
    """Detector chain; channel k (1-based) detects photon k of each event"""
    channels: Tuple[ChannelConfig, ...] = field(default_factory=tuple)
    gate: Optional[GateConfig] = None
    tick_ns: float = DEFAULT_TICK_NS

    def validate(self, prefix: str = 'detectors') -> None:
        if not self.channels:
            raise ValueError(f"{prefix}.channels cannot be empty")
        for k, channel in enumerate(self.channels, 1):
            channel.validate(f"{prefix}.ch{k}")
        if not (self.tick_ns > 0):
            raise ValueError(f"{prefix}.tick_ns must be > 0, got {self.tick_ns}")
        if self.gate is not None:
            self.gate.validate(f"{prefix}.gate")
            for name in ('channel', 'trigger'):
                value = getattr(self.gate, name)
                if not (1 <= value <= len(self.channels)):
                    raise ValueError(f"{prefix}.gate.{name} must name one of channels 1..{len(self.channels)}, got {value}")


def lab_detectors() -> DetectorConfig:
    """Si APD, free-running InGaAs trigger, gated InGaAs; losses calibrated to 45/min -> 7/h"""
    return DetectorConfig(
        channels=(
            ChannelConfig(efficiency=0.1037, jitter_sigma=0.318, dark_rate=100.0, offset=0.0),
            ChannelConfig(efficiency=0.10, jitter_sigma=0.1435, dark_rate=100.0, offset=0.0),
            ChannelConfig(efficiency=0.25, jitter_sigma=0.040, dark_rate=5e-5, offset=1.0),
        ),
        gate=GateConfig(channel=3, trigger=2, width_ns=50.0),
        tick_ns=DEFAULT_TICK_NS,
    )


@dataclass
class EventBatch:
    """Emission times (ns) and per-photon angular frequencies, one row per event"""
    t_emit: np.ndarray
    omega: np.ndarray
    pump: np.ndarray

    def __len__(self) -> int:
        return int(self.t_emit.size)

    @property
    def photons(self) -> int:
        return int(self.omega.shape[1])

    def conservation_residual(self) -> float:
        """Largest relative mismatch between the photon frequency sum and the pump"""
        if len(self) == 0:
            return 0.0
        return float(np.max(np.abs(self.omega.sum(axis=1) - self.pump) / np.abs(self.pump)))


@dataclass
class DriftPath:
    """Pump bandwidth (rad/ns) sampled on a time grid (s)"""
    times_s: np.ndarray
    bandwidth: np.ndarray

    def at(self, t_s: np.ndarray) -> np.ndarray:
        return np.interp(t_s, self.times_s, self.bandwidth)


def simulate_bandwidth_drift(mean: float, spread: float, timescale: float, duration: float,
                             step: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Stationary Ornstein-Uhlenbeck path reflected at zero, exact discretization

    Returns (times, values) on a grid from 0 to duration inclusive.
    """
    if duration < 0 or step <= 0 or timescale <= 0:
        raise ValueError(f"need duration >= 0, step > 0, timescale > 0 (got {duration}, {step}, {timescale})")

    n = int(math.ceil(duration / step)) + 1
    times = np.arange(n) * step
    if spread == 0:
        return times, np.full(n, float(mean))

    rho = math.exp(-step / timescale)
    shocks = rng.standard_normal(n)
    shocks[1:] *= math.sqrt(1.0 - rho * rho)
    deviation = lfilter([1.0], [1.0, -rho], spread * shocks)
    return times, np.abs(mean + deviation)


def _drift_for(cfg: SourceConfig, duration_s: float, seed: int) -> DriftPath:
    step = min(60.0, cfg.drift_timescale / 10.0)
    times, values = simulate_bandwidth_drift(
        cfg.pump_bandwidth_mean, cfg.pump_bandwidth_spread, cfg.drift_timescale,
        duration_s, step, derive_rng(seed, "drift")
    )
    return DriftPath(times, values)


def _generate(cfg: SourceConfig, duration_s: float, seed: int, photons: int,
              drift: Optional[DriftPath], slice_s: float) -> EventBatch:
    cfg.validate()
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    if drift is None:
        drift = _drift_for(cfg, duration_s, seed)

    times_parts, omega_parts, pump_parts = [], [], []
    n_slices = max(1, int(math.ceil(duration_s / slice_s)))
    for k in range(n_slices):
        start = k * slice_s
        stop = min(duration_s, start + slice_s)
        rng = derive_rng(seed, f"source.slice.{k}")

        n = rng.poisson(cfg.pair_rate * (stop - start))
        t_s = np.sort(start + (stop - start) * rng.random(n))

        pump = cfg.pump_center + drift.at(t_s) * rng.standard_normal(n)
        omega = np.empty((n, photons))
        omega[:, 0] = cfg.center_1 + cfg.jsa_width_1 * rng.standard_normal(n)
        if photons == 3:
            omega[:, 1] = cfg.center_2 + cfg.jsa_width_2 * rng.standard_normal(n)
        omega[:, -1] = pump - omega[:, :-1].sum(axis=1)

        times_parts.append(t_s * 1e9)
        omega_parts.append(omega)
        pump_parts.append(pump)
        logging.debug(f"Slice {k}: {n} events in [{start:g}, {stop:g}) s")

    batch = EventBatch(np.concatenate(times_parts), np.concatenate(omega_parts), np.concatenate(pump_parts))
    logging.info(f"Generated {len(batch)} {'triplet' if photons == 3 else 'pair'} events over {duration_s:g} s")
    return batch


def generate_triplets(cfg: SourceConfig, duration_s: float, seed: int,
                      drift: Optional[DriftPath] = None, slice_s: float = 3600.0) -> EventBatch:
    """Poisson triplet emission; omega_3 = omega_p - omega_1 - omega_2 for every event"""
    return _generate(cfg, duration_s, seed, 3, drift, slice_s)


def generate_pairs(cfg: SourceConfig, duration_s: float, seed: int,
                   drift: Optional[DriftPath] = None, slice_s: float = 3600.0) -> EventBatch:
    """Single-stage pairs; omega_2 = omega_p - omega_1"""
    return _generate(cfg, duration_s, seed, 2, drift, slice_s)


def _uniform_times(rng: np.random.Generator, rate_per_s: float, duration_ns: float) -> np.ndarray:
    n = rng.poisson(rate_per_s * duration_ns * 1e-9)
    return duration_ns * rng.random(n)


def _gate_intervals(triggers: np.ndarray, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """Union of ticks [t, t + width] over sorted trigger ticks as inclusive (starts, ends)"""
    if triggers.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    new_group = np.concatenate(([True], np.diff(triggers) > width))
    group_end = np.concatenate((new_group[1:], [True]))
    return triggers[new_group], triggers[group_end] + width


def _inside_gates(ticks: np.ndarray, triggers: np.ndarray, width: int) -> np.ndarray:
    if triggers.size == 0:
        return np.zeros(ticks.size, dtype=bool)
    idx = np.searchsorted(triggers, ticks, side='right') - 1
    latest = triggers[np.maximum(idx, 0)]
    return (idx >= 0) & (ticks - latest <= width)


def _to_ticks(times: np.ndarray, tick_ns: float) -> np.ndarray:
    return np.floor(times / tick_ns).astype(np.int64)


def detect(events: EventBatch, det: DetectorConfig, seed: int,
           duration_s: Optional[float] = None) -> TagStream:
    """Run events through the detector chain and return a (tick, channel)-sorted stream"""
    det.validate()
    for k, channel in enumerate(det.channels, 1):
        if channel.dead_time_ns > 0:
            logging.warning(f"ch{k}: dead time {channel.dead_time_ns} ns is not modeled and is ignored")
    if np.any(np.diff(events.t_emit) < 0):
        raise ValueError("events must be sorted by emission time")

    if duration_s is not None:
        duration_ns = duration_s * 1e9
    else:
        duration_ns = float(events.t_emit[-1]) if len(events) else 0.0

    gated = det.gate.channel if det.gate is not None else None
    order = [k for k in range(1, len(det.channels) + 1) if k != gated]
    if gated is not None:
        order.append(gated)

    arrivals = {}
    for number in order:
        channel = det.channels[number - 1]
        rng = derive_rng(seed, f"detect.ch{number}")

        if number <= events.photons:
            survive = rng.random(len(events)) < channel.efficiency
            times = events.t_emit[survive] + channel.offset
            if channel.jitter_sigma > 0:
                times = times + channel.jitter_sigma * rng.standard_normal(times.size)
        else:
            times = np.zeros(0)

        background = _uniform_times(rng, channel.background_rate, duration_ns)

        if number == gated:
            # Gates open on the trigger's tick and stay open for width_ticks more ticks
            trigger_times = arrivals[det.gate.trigger]
            triggers = np.unique(_to_ticks(trigger_times[trigger_times >= 0], det.tick_ns))
            width_ticks = int(math.floor(det.gate.width_ns / det.tick_ns))
            times = np.concatenate((times, background))
            times = times[_inside_gates(_to_ticks(times, det.tick_ns), triggers, width_ticks)]
            starts, ends = _gate_intervals(triggers, width_ticks)
            open_ns = (ends + 1 - starts) * det.tick_ns
            counts = rng.poisson(channel.dark_rate * open_ns)
            lengths = np.repeat(open_ns, counts)
            darks = np.repeat(starts * det.tick_ns, counts) + rng.random(lengths.size) * lengths
            darks = darks[_inside_gates(_to_ticks(darks, det.tick_ns), triggers, width_ticks)]
            logging.debug(f"ch{number}: {starts.size} open gates, {darks.size} gated darks")
        else:
            times = np.concatenate((times, background))
            darks = _uniform_times(rng, channel.dark_rate, duration_ns)

        arrivals[number] = np.concatenate((times, darks))

    channels, ticks = [], []
    for number in sorted(arrivals):
        t = arrivals[number]
        t = t[t >= 0]
        ticks.append(_to_ticks(t, det.tick_ns))
        channels.append(np.full(t.size, number, dtype=np.uint8))

    stream = TagStream(np.concatenate(channels), np.concatenate(ticks), det.tick_ns).sorted()
    logging.info(f"Detected {len(stream)} tags: {stream.counts_per_channel()}")
    return stream
