#!/usr/bin/env python3
"""
Triplet Lab

Simulates a cascaded down-conversion photon-triplet source through its
detectors, extracts coincidences from the resulting time-tag stream, and
evaluates energy-time entanglement witnesses on measured or analytic
Gaussian states.

Usage:
    python main.py simulate --config configs/lab.toml --seed 7
    python main.py analyze --tags data/tags.ttag
    python main.py witness --stats data/timing_stats.toml --bandwidth data/bandwidth_summary.toml
    python main.py gaussian --state configs/states/sqrt2_mixture.toml
    python main.py pump --duration 261360
    python main.py reproduce --section two-photon
"""

import os
import sys
import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, List

# Add src directory to path for imports
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import gaussian
import witness
from coincidence import (
    find_triples, find_triples_chunked, find_doubles, histogram2d, marginals, timing_stats,
    marginal_stats, InsufficientStatisticsError, NoPeakError
)
from config import RunConfig, ConfigError, load_config, env_default, DEFAULT_LOG_LEVEL
from pump_monitor import measure_series, simulate_series, simulate_truth, summarize_series
from reproduce import Reproduction, SECTIONS, rows_to_frame, validate_sections
from source import DriftPath, generate_triplets, detect, angular_to_mhz, mhz_to_angular
from tagfile import read_tags, write_tags
from utils import (
    validate_seed, validate_channel_pair, validate_log_level, save_to_json, save_to_csv,
    save_key_value, load_key_value, setup_logging, LOG_LEVELS
)

EXIT_FAILED_ROWS = 2


def parse_arguments(argv=None):
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(
        description='Simulate, analyze and witness three-photon energy-time entanglement',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py simulate --seed 7 --out ./data
  python main.py analyze --tags ./data/tags.ttag --window 32
  python main.py witness --state configs/states/sqrt6_mixture.toml
  python main.py reproduce
        """
    )

    parser.add_argument(
        '--config',
        type=str,
        default=None,
        help='Run configuration file (TOML); defaults reproduce the lab calibration'
    )

    parser.add_argument(
        '--seed',
        type=str,
        default=None,
        help='Root random seed (default: config, then TRIPLET_SEED, then 0)'
    )

    parser.add_argument(
        '--out', '--output-dir',
        dest='output_dir',
        type=str,
        default=None,
        help='Output directory for data files (default: ./data)'
    )

    parser.add_argument(
        '--log-level',
        type=str.upper,
        choices=LOG_LEVELS,
        default=env_default('TRIPLET_LOG_LEVEL', DEFAULT_LOG_LEVEL),
        help='Logging level (default: INFO)'
    )

    subparsers = parser.add_subparsers(dest='command', required=True)

    simulate = subparsers.add_parser('simulate', help='Generate a tag file and a pump bandwidth series')
    simulate.add_argument('--duration', type=float, default=None, help='Simulated seconds (default: config)')

    analyze = subparsers.add_parser('analyze', help='Coincidences, histograms and timing statistics')
    analyze.add_argument('--tags', type=str, required=True, help='TTAG file to analyze')
    analyze.add_argument('--window', type=int, default=None, help='Coincidence window in ticks (default: 32)')
    analyze.add_argument('--channels', type=str, action='append', default=None,
                         help="Channel pair for doubles, e.g. '1,2' (repeatable)")
    analyze.add_argument('--sideband-sigmas', type=float, default=None,
                         help='Half width of the peak region in initial sigmas (default: 10)')
    analyze.add_argument('--workers', type=int, default=None, help='Worker processes for triple search')

    witness_cmd = subparsers.add_parser('witness', help='Evaluate the entanglement witnesses')
    witness_cmd.add_argument('--stats', type=str, help='Timing statistics file from analyze')
    witness_cmd.add_argument('--bandwidth', type=str, help='Bandwidth summary file from simulate or pump')
    witness_cmd.add_argument('--state', type=str, help='Gaussian state file (analytic evaluation)')
    witness_cmd.add_argument('--convention', choices=list(witness.BANDWIDTH_CONVENTIONS), default='angular',
                             help='MHz to rad/ns conversion (default: angular)')

    gaussian_cmd = subparsers.add_parser('gaussian', help='Analytic witnesses of a Gaussian state file')
    gaussian_cmd.add_argument('--state', type=str, required=True, help='Gaussian state file (TOML)')

    pump = subparsers.add_parser('pump', help='Simulate the pump linewidth monitor series')
    pump.add_argument('--duration', type=float, default=None, help='Simulated seconds (default: config)')

    reproduce = subparsers.add_parser('reproduce', help='Seeded reproduction with acceptance rows')
    reproduce.add_argument('--section', action='append', default=None,
                           help=f"Section to run (repeatable): {', '.join(SECTIONS)}")

    args = parser.parse_args(argv)
    try:
        args.log_level = validate_log_level(args.log_level)
    except ValueError as e:
        parser.error(f"{e}; check TRIPLET_LOG_LEVEL")
    return args


def ensure_output_directory(output_dir: str) -> str:
    """Ensure output directory exists and return absolute path"""
    # Convert to absolute path
    abs_output_dir = os.path.abspath(output_dir)

    # Create directory if it doesn't exist
    Path(abs_output_dir).mkdir(parents=True, exist_ok=True)

    return abs_output_dir


def resolve_config(args) -> RunConfig:
    """CLI flags over config file over environment over defaults"""
    config = load_config(args.config)
    updates = {}
    if args.seed is not None:
        updates['seed'] = validate_seed(args.seed)
    if args.output_dir is not None:
        updates['output_dir'] = args.output_dir
    if getattr(args, 'duration', None) is not None:
        updates['duration_s'] = args.duration

    analysis = {}
    if getattr(args, 'window', None) is not None:
        analysis['window'] = args.window
    if getattr(args, 'sideband_sigmas', None) is not None:
        analysis['sideband_sigmas'] = args.sideband_sigmas
    if getattr(args, 'channels', None):
        analysis['doubles_channels'] = tuple(validate_channel_pair(c) for c in args.channels)
    if getattr(args, 'workers', None) is not None:
        analysis['workers'] = args.workers
    if analysis:
        updates['analysis'] = replace(config.analysis, **analysis)

    config = replace(config, **updates)
    config.validate()
    return config


def output_path(config: RunConfig, filename: str) -> str:
    return os.path.join(config.output_dir, filename)


def cmd_simulate(config: RunConfig) -> Dict[str, object]:
    """Write tags.ttag, the bandwidth series and a run summary"""
    source = config.source
    times, truth_mhz = simulate_truth(
        angular_to_mhz(source.pump_bandwidth_mean), angular_to_mhz(source.pump_bandwidth_spread),
        source.drift_timescale, config.duration_s, config.pump.cadence_s, config.seed
    )
    drift = DriftPath(times, mhz_to_angular(truth_mhz))

    events = generate_triplets(source, config.duration_s, config.seed, drift=drift)
    stream = detect(events, config.detectors, config.seed, config.duration_s)
    tag_file = output_path(config, 'tags.ttag')
    if not write_tags(stream, tag_file):
        raise IOError(f"could not write {tag_file}")
    print(f"✅ Tag file saved to: {tag_file}")

    series = measure_series(times, truth_mhz, config.pump, config.seed)
    save_to_csv(series.to_frame(), output_path(config, 'bandwidth_series.csv'))
    bandwidth = summarize_series(series)
    save_key_value(bandwidth, output_path(config, 'bandwidth_summary.toml'))

    efficiency = 1.0
    for channel in config.detectors.channels[:3]:
        efficiency *= channel.efficiency
    summary = {
        'seed': config.seed,
        'duration_s': config.duration_s,
        'generated_events': len(events),
        'tags': len(stream),
        'expected_triples': len(events) * efficiency,
        'tags_per_channel': {f"ch{k}": v for k, v in stream.counts_per_channel().items()},
        'bandwidth': bandwidth,
    }
    save_key_value(summary, output_path(config, 'simulation_summary.toml'))

    print(f"\n📊 Simulation Summary (seed {config.seed}):")
    print(f"   Generated events: {len(events)} over {config.duration_s:g} s")
    print(f"   Detected tags: {len(stream)} {stream.counts_per_channel()}")
    print(f"   Expected detected triples: {summary['expected_triples']:.1f}")
    print(f"   Pump bandwidth: {bandwidth['mean_mhz']:.2f} ± {bandwidth['std_mhz']:.2f} MHz")
    return summary


def cmd_analyze(tag_file: str, config: RunConfig) -> Dict[str, object]:
    """Triples, histograms, marginals, doubles and timing statistics of a tag file"""
    stream = read_tags(tag_file)
    analysis = config.analysis

    if analysis.workers > 1:
        triples = find_triples_chunked(stream, analysis.window, workers=analysis.workers)
    else:
        triples = find_triples(stream, analysis.window)

    half = analysis.histogram_half_width
    h = histogram2d(triples, stream.tick_ns, ((-half, half), (-half, half)))
    save_to_csv(h.to_frame(), output_path(config, 'histogram_2d.csv'))
    for key, hist in marginals(h).items():
        save_to_csv(hist.to_frame(), output_path(config, f"marginal_{key}.csv"))

    report: Dict[str, object] = {'tags': len(stream), 'triples': len(triples), 'window': analysis.window}
    try:
        stats = timing_stats(h, analysis.sideband_sigmas, analysis.bootstrap_resamples,
                             config.seed, analysis.window)
        report.update(stats.to_dict())
        report['status'] = 'ok'
    except (InsufficientStatisticsError, NoPeakError) as e:
        logging.warning(f"Timing statistics unavailable: {e}")
        report['status'] = str(e)

    present = set(stream.counts_per_channel())
    doubles_report = {}
    for a, b in analysis.doubles_channels:
        if a not in present or b not in present:
            continue
        doubles = find_doubles(stream, (a, b), analysis.window)
        save_to_csv(doubles.histogram.to_frame(), output_path(config, f"doubles_{a}{b}.csv"))
        entry: Dict[str, object] = {'pairs': len(doubles.pairs)}
        try:
            peak = marginal_stats(doubles.histogram, analysis.sideband_sigmas, analysis.bootstrap_resamples,
                                  config.seed)
            entry.update({'dt': peak.std_ns, 'dt_err': peak.std_err_ns,
                          'background_per_bin': peak.background_per_bin})
        except (InsufficientStatisticsError, NoPeakError) as e:
            entry['status'] = str(e)
        doubles_report[f"ch{a}{b}"] = entry
    if doubles_report:
        report['doubles'] = doubles_report

    save_key_value(report, output_path(config, 'timing_stats.toml'))

    print(f"\n📊 Analysis Summary for {tag_file}:")
    print(f"   Tags: {len(stream)}   Triples: {len(triples)}")
    if report['status'] == 'ok':
        print(f"   Δ(t2-t1) = {report['dt21']:.3f} ± {report['dt21_err']:.3f} ns")
        print(f"   Δ(t3-t2) = {report['dt32']:.3f} ± {report['dt32_err']:.3f} ns")
        print(f"   Δ(t3-t1) = {report['dt31']:.3f} ± {report['dt31_err']:.3f} ns")
    else:
        print(f"   ⚠️  {report['status']}")
    return report


def _print_witness(report: witness.WitnessReport) -> None:
    print(f"\n🔬 Witness Report ({report.domain}):")
    for key, value in report.products.items():
        print(f"   product {key}: {value:.6g}")
    for key, value in report.sums.items():
        print(f"   sum {key}: {value:.6g}")
    print(f"   triple sum: {report.triple_sum:.6g}")
    print(f"   Classification: {report.classification}")


def cmd_gaussian(state_file: str, config: RunConfig) -> witness.WitnessReport:
    """Analytic witnesses of a Gaussian state file"""
    state = gaussian.load_state_file(state_file)
    variances = gaussian.variances_with_limits(state)
    report = witness.evaluate(variances)

    if isinstance(state, gaussian.GaussianMixture):
        classes = [gaussian.separability_class(c.spec) for c in state.components]
    else:
        classes = [gaussian.separability_class(state)]

    data = report.to_dict()
    data['variances'] = variances.to_dict()
    data['components'] = {'separability': classes}
    save_key_value(data, output_path(config, 'gaussian_report.toml'))
    _print_witness(report)
    return report


def cmd_witness(stats_file: str, bandwidth_file: str, config: RunConfig,
                convention: str = 'angular') -> witness.WitnessReport:
    """Energy-time witnesses from analyze and pump outputs"""
    stats = load_key_value(stats_file)
    bandwidth = load_key_value(bandwidth_file)
    missing = [k for k in ('dt21', 'dt32', 'dt31') if k not in stats]
    if missing:
        raise ValueError(f"{stats_file} lacks {', '.join(missing)} (status: {stats.get('status', 'unknown')})")
    if 'mean_mhz' not in bandwidth:
        raise ValueError(f"{bandwidth_file} lacks mean_mhz")

    measured = witness.EnergyTimeInput(
        stats['dt21'], stats['dt32'], stats['dt31'],
        witness.bandwidth_to_angular(bandwidth['mean_mhz'], convention),
        provenance=os.path.basename(stats_file),
        dt21_err=stats.get('dt21_err', 0.0), dt32_err=stats.get('dt32_err', 0.0), dt31_err=stats.get('dt31_err', 0.0),
        domega_err=witness.bandwidth_to_angular(bandwidth.get('std_mhz', 0.0), convention),
    )
    report = witness.evaluate_energy_time(measured)
    data = report.to_dict()
    data['convention'] = convention
    save_key_value(data, output_path(config, 'witness_report.toml'))
    _print_witness(report)
    return report


def cmd_pump(config: RunConfig) -> Dict[str, float]:
    """Bandwidth series over the configured duration"""
    source = config.source
    series, _ = simulate_series(
        angular_to_mhz(source.pump_bandwidth_mean), angular_to_mhz(source.pump_bandwidth_spread),
        source.drift_timescale, config.pump, config.duration_s, config.seed
    )
    save_to_csv(series.to_frame(), output_path(config, 'bandwidth_series.csv'))
    summary = summarize_series(series)
    save_key_value(summary, output_path(config, 'bandwidth_summary.toml'))

    print(f"\n📈 Pump Bandwidth Summary:")
    print(f"   Scans: {summary['scans']}")
    print(f"   Mean: {summary['mean_mhz']:.3f} MHz   Std: {summary['std_mhz']:.3f} MHz")
    return summary


def cmd_reproduce(config: RunConfig, sections: List[str] = None) -> bool:
    """Run the reproduction sections; True when every row passes"""
    rows = Reproduction(config).run(sections)
    frame = rows_to_frame(rows)
    save_to_csv(frame, output_path(config, 'reproduction_report.csv'))
    save_to_json({'seed': config.seed, 'rows': frame.astype(str).to_dict(orient='records')},
                 output_path(config, 'reproduction_report.json'))

    print(f"\n📋 Reproduction Report (seed {config.seed}):")
    for row in rows:
        mark = '✅' if row.passed else '❌'
        print(f"   {mark} [{row.section}] {row.name}: {row.reproduced} "
              f"({row.comparison} {row.reference} {row.tolerance})".rstrip())
    passed = sum(row.passed for row in rows)
    print(f"\n   {passed}/{len(rows)} rows passed")
    return passed == len(rows)


def main(argv=None):
    """Main function to dispatch the requested subcommand"""
    # Parse command line arguments
    args = parse_arguments(argv)

    # Resolve configuration
    try:
        config = resolve_config(args)
        if args.command == 'reproduce':
            sections = validate_sections(args.section)
    except (ConfigError, ValueError) as e:
        setup_logging(getattr(logging, args.log_level), log_file=None)
        logging.error(f"Invalid configuration: {e}")
        sys.exit(1)

    # Setup output directory and logging
    output_dir = ensure_output_directory(config.output_dir)
    config = replace(config, output_dir=output_dir)
    log_level = getattr(logging, args.log_level)
    setup_logging(log_level, os.path.join(output_dir, 'triplet_lab.log'))

    logging.info(f"Running {args.command} (seed {config.seed})")
    logging.info(f"Output directory: {output_dir}")

    exit_code = 0
    try:
        if args.command == 'simulate':
            cmd_simulate(config)
        elif args.command == 'analyze':
            cmd_analyze(args.tags, config)
        elif args.command == 'witness':
            if args.state:
                cmd_gaussian(args.state, config)
            elif args.stats and args.bandwidth:
                cmd_witness(args.stats, args.bandwidth, config, args.convention)
            else:
                logging.error("witness needs --state, or both --stats and --bandwidth")
                exit_code = 1
        elif args.command == 'gaussian':
            cmd_gaussian(args.state, config)
        elif args.command == 'pump':
            cmd_pump(config)
        elif args.command == 'reproduce':
            if not cmd_reproduce(config, sections):
                exit_code = EXIT_FAILED_ROWS

        logging.info(f"{args.command} completed")

    except KeyboardInterrupt:
        logging.info("Process interrupted by user")
        sys.exit(1)

    except Exception as e:
        logging.error(f"An error occurred during {args.command}: {e}")
        sys.exit(1)

    finally:
        logging.shutdown()

    if exit_code:
        sys.exit(exit_code)


if __name__ == "__main__":
    main()
