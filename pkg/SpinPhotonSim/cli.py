"""Command line front end: ``simulate``, ``analyze``, ``scan`` and ``serve``."""
import argparse
import hashlib
import json
import logging
import math
import os
import sys
import textwrap
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence as SequenceType, Tuple

import numpy as np

from . import __version__
from .analysis import (FidelityReport, bootstrap, computational_fidelity, conditional_histogram,
                       fidelity_from_ratios, fit_fringes, fit_initialization, fit_lifetime, fit_power_law,
                       fit_rabi_period, fit_ramsey, fit_rotation_scan, g2_zero, histogram, superposition_fidelity,
                       window_counts)
from .config import RunConfig, load_analysis_spec, load_config, parse_window
from .detection import METADATA_SUFFIX, TagStream, detect, read_metadata, read_tags, route_events, write_metadata, \
    write_tags
from .dynamics import ensemble_integrated_emission, run_batch
from .errors import ConfigError, InvalidParameter, MixedHashError, NoConditioningEvents, SpinPhotonSimError
from .system import DephasingShape, LevelIndex, SystemParams

logger = logging.getLogger('SpinPhotonSim.cli')


def _point_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _scan_label(config: RunConfig) -> List[str]:
    return [s.label for s in config.sequence.scans]


def _metadata(config: RunConfig, index: int, values, seed: int, detector) -> Dict[str, object]:
    params = config.params
    meta = {
        'period_ns': repr(config.sequence.period),
        'n_cycles': config.trajectories,
        'seed': seed,
        'master_seed': config.seed,
        'config_hash': config.config_hash,
        'sequence_hash': config.sequence.content_hash(),
        'scan_point': index,
        'scan_names': ';'.join(_scan_label(config)),
        'scan_values': ';'.join(repr(float(v)) for v in values),
        'routing': config.routing,
        'initial': config.initial,
        'unraveling': config.imperfections.unraveling.value,
        'omega_z_rad_per_ns': repr(params.omega_z),
        'hole_splitting_rad_per_ns': repr(params.hole_splitting),
        'decay_rate_per_ns': repr(params.decay_rate),
        'branching_down': ';'.join(repr(params.branching[level][0])
                                   for level in (LevelIndex.TrionDown, LevelIndex.TrionUp)),
        't2star_ns': repr(params.dephasing_T2star),
        'dephasing_shape': params.dephasing_shape.value,
        'channel': detector.channel_id,
        'efficiency': repr(detector.detector.efficiency),
        'jitter_fwhm_ps': repr(detector.detector.jitter_fwhm),
        'dark_rate_per_ns': repr(detector.detector.dark_rate),
        'laser_leakage': repr(detector.detector.laser_leakage),
        'port': detector.detector.port,
    }
    if detector.filter is not None:
        meta['filter_center_rad_per_ns'] = repr(detector.filter.center_offset)
        meta['filter_fwhm_rad_per_ns'] = repr(detector.filter.bandwidth_fwhm)
        meta['filter_shape'] = detector.filter.shape.value
    return meta


def simulate_point(config: RunConfig, index: int, values) -> List[TagStream]:
    """Trajectories and detection of one scan point, one TagStream per detector."""
    seq = config.sequence.at(values)
    seed = _point_seed(config.seed, index)
    batch = run_batch(seed, seq, config.params, config.imperfections, config.trajectories,
                      initial=config.initial, calibration=config.calibration, threads=config.threads)
    tables = route_events(batch.table, len(config.detectors), seed, config.routing)
    return [detect(table, spec.filter, spec.detector, seed, seq) for table, spec in zip(tables, config.detectors)]


def cmd_simulate(config_path, overrides: Optional[Dict[str, object]] = None) -> List[str]:
    """Writes one tag file (plus metadata sidecar) per scan point and detector."""
    config = load_config(config_path, overrides)
    os.makedirs(config.out_dir, exist_ok=True)
    written = []
    for index, values in enumerate(config.sequence.scan_points()):
        streams = simulate_point(config, index, values)
        seed = _point_seed(config.seed, index)
        for spec, stream in zip(config.detectors, streams):
            path = os.path.join(config.out_dir, f'point{index:03d}_ch{spec.channel_id}.csv')
            write_tags(path, stream)
            write_metadata(path + METADATA_SUFFIX, _metadata(config, index, values, seed, spec))
            written.append(path)
        logger.info('Scan point %d %s: %s', index, values, ', '.join(str(len(s)) for s in streams))
    return written


def _scan_statistic(config: RunConfig, index: int, values) -> float:
    window = parse_window(config.analysis.get('window', f'0,{config.sequence.period}'))
    if config.method == 'master':
        labels = config.analysis.get('channels')
        labels = [v.strip() for v in labels.split(',')] if labels else None
        return ensemble_integrated_emission(config.sequence.at(values), config.params, window, labels,
                                            config.initial, config.imperfections, config.calibration)
    streams = simulate_point(config, index, values)
    channel = config.analysis.get('channels')
    channel = [int(v) for v in channel.split(',')] if channel else None
    tags = TagStream.merge(streams)
    return float(window_counts(tags, window, channel).sum()) / config.trajectories


def cmd_scan(config_path, overrides: Optional[Dict[str, object]] = None) -> str:
    """Writes ``scan.csv`` with one row per scan point (or grid cell)."""
    config = load_config(config_path, overrides)
    if not config.sequence.scans:
        raise ConfigError(f'{config.sequence_path} defines no scan')
    points = config.sequence.scan_points()
    if config.method == 'master' and config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            values = list(pool.map(lambda item: _scan_statistic(config, *item), enumerate(points)))
    else:
        values = [_scan_statistic(config, index, point) for index, point in enumerate(points)]
    reference = values[0]
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, 'scan.csv')
    with open(path, 'w', newline='\n') as f:
        f.write(f'# config_hash={config.config_hash}\n')
        f.write(','.join(_scan_label(config) + ['value', 'normalized']) + '\n')
        for point, value in zip(points, values):
            normalized = value / reference if reference else math.nan
            f.write(','.join([repr(float(v)) for v in point] + [repr(value), repr(normalized)]) + '\n')
    logger.info('Wrote %s (%d points)', path, len(points))
    return path


# ---------------------------------------------------------------------------
# analyze

def _load_datasets(tag_paths: SequenceType[str], force: bool) -> Tuple[Dict[int, TagStream], Dict[int, dict]]:
    """Tag files grouped (merged over detectors) by scan point."""
    streams: Dict[int, List[TagStream]] = {}
    metas: Dict[int, dict] = {}
    hashes = set()
    for path in tag_paths:
        meta_path = str(path) + METADATA_SUFFIX
        meta = read_metadata(meta_path) if os.path.exists(meta_path) else {}
        if 'config_hash' in meta:
            hashes.add(meta['config_hash'])
        point = int(meta.get('scan_point', 0))
        streams.setdefault(point, []).append(read_tags(path))
        metas.setdefault(point, meta)
    if len(hashes) > 1:
        if not force:
            raise MixedHashError(f'tag files come from {len(hashes)} different configurations, use --force')
        logger.warning('Analysing tag files from %d configurations', len(hashes))
    return {point: TagStream.merge(s) for point, s in streams.items()}, metas


def _option(spec, key, default, convert=float):
    try:
        return convert(spec[key]) if key in spec else default
    except ValueError:
        raise InvalidParameter(f'{key} = "{spec[key]}" is invalid')


def _params_from_meta(meta: dict) -> SystemParams:
    try:
        down = [float(v) for v in meta['branching_down'].split(';')]
        return SystemParams(float(meta['omega_z_rad_per_ns']), float(meta['hole_splitting_rad_per_ns']),
                            float(meta['decay_rate_per_ns']),
                            branching={LevelIndex.TrionDown: (down[0], 1 - down[0]),
                                       LevelIndex.TrionUp: (down[1], 1 - down[1])},
                            dephasing_T2star=float(meta.get('t2star_ns', 'inf')),
                            dephasing_shape=DephasingShape(meta.get('dephasing_shape', 'gaussian')))
    except KeyError as e:
        raise ConfigError(f'tag metadata lacks {e}')


def _dataset(datasets, point: int) -> TagStream:
    if point not in datasets:
        raise NoConditioningEvents(f'no conditioning events: no tags for scan point {point}')
    return datasets[point]


def _scan_series(datasets, metas, window, channel):
    points = sorted(datasets)
    x = np.array([float(metas[p]['scan_values'].split(';')[0]) for p in points])
    y = np.array([window_counts(datasets[p], window, channel).sum() / max(datasets[p].n_cycles, 1)
                  for p in points])
    return x, y


def _analyze_g2(spec, datasets, metas, out_dir):
    window = parse_window(spec.get('window', '1.15,1.7'))
    channels = tuple(int(v) for v in spec.get('channels', '0,1').split(','))
    g2, error = g2_zero(_dataset(datasets, 0), window, channels, _option(spec, 'n_lags', 10, int))
    return {'g2_zero': g2, 'g2_zero_error': error, 'window_ns': list(window)}, f'g2(0) = {g2:.4f} ± {error:.4f}'


def _correlation_counts(tags: TagStream, ent_window, readout_window, channels):
    red, blue, readout = channels
    triggered = window_counts(tags, readout_window, readout) > 0
    if not np.any(triggered):
        raise NoConditioningEvents()
    return (int(window_counts(tags, ent_window, red)[triggered].sum()),
            int(window_counts(tags, ent_window, blue)[triggered].sum()))


def _analyze_computational(spec, datasets, metas, out_dir):
    ent_window = parse_window(spec.get('ent_window', '1.15,1.7'), 'ent_window')
    readout_window = parse_window(spec.get('readout_window', '10,14'), 'readout_window')
    channels = (_option(spec, 'red_channel', 0, int), _option(spec, 'blue_channel', 1, int),
                _option(spec, 'readout_channel', 2, int))
    down_tags = _dataset(datasets, _option(spec, 'down_point', 0, int))
    up_tags = _dataset(datasets, _option(spec, 'up_point', 1, int))
    red_down, blue_down = _correlation_counts(down_tags, ent_window, readout_window, channels)
    red_up, blue_up = _correlation_counts(up_tags, ent_window, readout_window, channels)
    f1, f1_error = computational_fidelity(red_down, blue_down, blue_up, red_up)

    def statistic(down, up):
        rd, bd = _correlation_counts(down, ent_window, readout_window, channels)
        ru, bu = _correlation_counts(up, ent_window, readout_window, channels)
        return computational_fidelity(rd, bd, bu, ru)[0]

    resamples = _option(spec, 'bootstrap', 200, int)
    if resamples > 0:
        f1_error = max(f1_error, bootstrap([down_tags, up_tags], statistic, _option(spec, 'seed', 0, int),
                                           resamples).std)
    ratios = (red_down / blue_down if blue_down else math.inf, blue_up / red_up if red_up else math.inf)
    report = FidelityReport(F1=f1, F1_error=f1_error, bootstrap_resamples=resamples,
                            F1_from_ratios=fidelity_from_ratios(*ratios) if all(map(math.isfinite, ratios))
                            else None,
                            counts={'red_down': red_down, 'blue_down': blue_down, 'blue_up': blue_up,
                                    'red_up': red_up})
    data = {'F1_probability': f1, 'F1_error_probability': f1_error,
            'F1_from_ratios_probability': report.F1_from_ratios,
            'ratio_down': ratios[0] if math.isfinite(ratios[0]) else None,
            'ratio_up': ratios[1] if math.isfinite(ratios[1]) else None, 'counts': report.counts}
    return data, f'F1 = {f1:.4f} ± {f1_error:.4f} (red:blue {ratios[0]:.1f}:1, blue:red {ratios[1]:.1f}:1)'


def _analyze_superposition(spec, datasets, metas, out_dir):
    ent_window = parse_window(spec.get('ent_window', '1.0,2.5'), 'ent_window')
    readout_window = parse_window(spec.get('readout_window', '10,14'), 'readout_window')
    ent_channel = _option(spec, 'ent_channel', 0, int)
    readout_channel = _option(spec, 'readout_channel', 1, int)
    bin_ps = _option(spec, 'bin_ps', 10.0)
    first_meta = next(iter(metas.values()), {})
    omega_z = _option(spec, 'omega_z', float(first_meta.get('omega_z_rad_per_ns', 'nan')))
    jitter = _option(spec, 'jitter_fwhm_ps', float(first_meta.get('jitter_fwhm_ps', 40.0)))
    fits = {}
    for name, default_point in (('plus', 0), ('minus', 1)):
        tags = _dataset(datasets, _option(spec, f'{name}_point', default_point, int))
        hist = conditional_histogram(tags, tags, readout_window, bin_ps, ent_window, ent_channel, readout_channel)
        hist.write_csv(os.path.join(out_dir, f'superposition_{name}_histogram.csv'))
        fits[name] = fit_fringes(hist, omega_z, jitter, free_frequency=spec.get('free_frequency') == 'true')
    f2, f2_error = superposition_fidelity(fits['plus'], fits['minus'])
    visibilities = {f'{k}_raw': v.visibility_raw for k, v in fits.items()}
    visibilities.update({f'{k}_deconvolved': v.visibility_deconvolved for k, v in fits.items()})
    report = FidelityReport(F1=_option(spec, 'f1', math.nan), F2=f2, F1_error=_option(spec, 'f1_error', 0.0),
                            F2_error=f2_error,
                            visibilities=visibilities,
                            phases_rad={k: v.phase for k, v in fits.items()})
    summary = f'F2 = {f2:.4f} ± {f2_error:.4f}'
    if not math.isnan(report.F_bound):
        summary += f', F >= {report.F_bound:.4f}'
    return report, summary


def _analyze_lifetime(spec, datasets, metas, out_dir):
    window = parse_window(spec.get('window', '0,25'))
    hist = histogram(_dataset(datasets, 0), window, _option(spec, 'bin_ps', 50.0), _option(spec, 'channel', None, int))
    hist.write_csv(os.path.join(out_dir, 'lifetime_histogram.csv'))
    fit = fit_lifetime(hist, _option(spec, 't_start', None))
    return ({'lifetime_ns': fit.lifetime, 'lifetime_error_ns': fit.lifetime_error, 'background_counts': fit.background},
            f'tau = {fit.lifetime:.4f} ± {fit.lifetime_error:.4f} ns')


def _analyze_rabi(spec, datasets, metas, out_dir):
    window = parse_window(spec.get('window', '0,25'))
    hist = histogram(_dataset(datasets, 0), window, _option(spec, 'bin_ps', 10.0), _option(spec, 'channel', None, int))
    hist.write_csv(os.path.join(out_dir, 'rabi_histogram.csv'))
    fit = fit_rabi_period(hist.centers_ns, hist.counts)
    return ({'period_ns': fit.period, 'period_error_ns': fit.period_error, 'frequency_rad_per_ns': fit.frequency},
            f'Rabi period = {fit.period:.4f} ± {fit.period_error:.4f} ns')


def _analyze_initialization(spec, datasets, metas, out_dir):
    window = parse_window(spec.get('window', '19.1,25'))
    durations, counts = _scan_series(datasets, metas, window, _option(spec, 'channel', None, int))
    if not counts[0] > 0:
        raise NoConditioningEvents('no readout counts without pumping')
    fit = fit_initialization(durations, counts / counts[0], _params_from_meta(metas[min(metas)]))
    return ({'pump_rate_per_ns': fit.pump_rate, 'pump_rate_error_per_ns': fit.pump_rate_error,
             'pump_duration_ns': fit.pump_durations.tolist(), 'f_init_probability': fit.f_init.tolist()},
            f'W = {fit.pump_rate:.3f} ± {fit.pump_rate_error:.3f} /ns, F_init(max) = {fit.f_init.max():.4f}')


def _analyze_power_law(spec, datasets, metas, out_dir):
    """Power law of the rotation angle, from a power scan or from explicit ``points``."""
    data = {}
    if 'points' in spec:
        try:
            points = [tuple(float(v) for v in item.split(':')) for item in spec['points'].split(',')]
        except ValueError:
            raise InvalidParameter('points must be "P:theta" pairs')
        fit = fit_power_law(points)
    else:
        if not datasets:
            raise ConfigError('power_law analysis needs tag files of a power scan or points = "P:theta, ..."')
        window = parse_window(spec.get('window', '19.1,25'))
        power, intensity = _scan_series(datasets, metas, window, _option(spec, 'channel', None, int))
        scan = fit_rotation_scan(power, intensity)
        fit = scan.power_law
        data = {'power_mw': scan.power.tolist(), 'theta_rad': scan.theta.tolist(),
                'global_exponent': scan.fit['alpha'], 'global_exponent_error': scan.fit.error('alpha')}
    data.update({'exponent': fit.exponent, 'prefactor_rad': fit.prefactor, 'residual_rms': fit.residual_rms,
                 'degenerate': fit.degenerate})
    return data, f'alpha = {fit.exponent:.4f}'


def _analyze_ramsey(spec, datasets, metas, out_dir):
    window = parse_window(spec.get('window', '19.1,25'))
    x, y = _scan_series(datasets, metas, window, _option(spec, 'channel', None, int))
    delay = x - _option(spec, 'delay_offset', x[0])
    shape = DephasingShape(spec.get('dephasing_shape', 'gaussian'))
    fit = fit_ramsey(delay, y, shape, _option(spec, 'omega_guess', None))
    return ({'t2star_ns': fit.t2star, 't2star_error_ns': fit.t2star_error, 'omega_rad_per_ns': fit.omega,
             'omega_error_rad_per_ns': fit.omega_error, 'visibility': fit.visibility,
             'pi_half_fidelity_probability': fit.pi_half_fidelity},
            f'T2* = {fit.t2star:.4f} ns, omega = {fit.omega:.3f} rad/ns, F_pi/2 = {fit.pi_half_fidelity:.4f}')


def _analyze_ramsey_map(spec, datasets, metas, out_dir):
    """Ramsey fringe contrast per rotation angle of a two-dimensional (θ, Δτ) scan."""
    window = parse_window(spec.get('window', '19.1,25'))
    channel = _option(spec, 'channel', None, int)
    rows: Dict[float, List[Tuple[float, float]]] = {}
    for point in sorted(datasets):
        values = [float(v) for v in metas[point].get('scan_values', '').split(';') if v]
        if len(values) != 2:
            raise ConfigError('ramsey_map analysis needs tag files of a two-dimensional scan')
        intensity = window_counts(datasets[point], window, channel).sum() / max(datasets[point].n_cycles, 1)
        rows.setdefault(values[0], []).append((values[1], float(intensity)))
    theta, contrast = sorted(rows), []
    with open(os.path.join(out_dir, 'ramsey_map.csv'), 'w', newline='\n') as f:
        f.write('theta,delay,intensity\n')
        for value in theta:
            row = sorted(rows[value])
            for delay, intensity in row:
                f.write(f'{value!r},{delay!r},{intensity!r}\n')
            contrast.append(float(np.ptp([intensity for _, intensity in row])))
    best = theta[int(np.argmax(contrast))]
    return ({'theta': theta, 'fringe_contrast': contrast, 'theta_max_contrast': best},
            f'largest fringe contrast {max(contrast):.4f} at theta = {best:.4f}')


def _analyze_bound(spec, datasets, metas, out_dir):
    if 'f1' not in spec or 'f2' not in spec:
        raise ConfigError('bound analysis needs f1 and f2')
    report = FidelityReport(F1=float(spec['f1']), F2=float(spec['f2']), F1_error=_option(spec, 'f1_error', 0.0),
                            F2_error=_option(spec, 'f2_error', 0.0))
    return report, f'F >= {report.F_bound:.4f} ± {report.F_bound_error:.4f}'


def _provenance(spec: Dict[str, str], tag_paths: SequenceType[str]) -> dict:
    """Hashes of the configuration, analysis options and tag files behind a report.

    ``config_hash`` comes from the tag metadata; reports without simulated
    inputs use the hash of the analysis options instead.
    """
    analysis_hash = hashlib.sha1(json.dumps(spec, sort_keys=True).encode('utf-8')).hexdigest()
    config_hashes, input_hashes = set(), {}
    for path in tag_paths:
        with open(path, 'rb') as f:
            input_hashes[str(path)] = hashlib.sha1(f.read()).hexdigest()
        meta_path = str(path) + METADATA_SUFFIX
        if os.path.exists(meta_path):
            config_hashes.add(read_metadata(meta_path).get('config_hash'))
    config_hashes.discard(None)
    return {
        'config_hash': ','.join(sorted(config_hashes)) or analysis_hash,
        'analysis_hash': analysis_hash,
        'input_hashes': input_hashes,
    }


ANALYSES = {
    'g2': _analyze_g2,
    'computational': _analyze_computational,
    'superposition': _analyze_superposition,
    'lifetime': _analyze_lifetime,
    'rabi': _analyze_rabi,
    'initialization': _analyze_initialization,
    'power_law': _analyze_power_law,
    'ramsey': _analyze_ramsey,
    'ramsey_map': _analyze_ramsey_map,
    'bound': _analyze_bound,
}


def cmd_analyze(spec_path: Optional[str], tag_paths: SequenceType[str], out_dir: str = '.', force: bool = False,
                f1: Optional[float] = None, f2: Optional[float] = None) -> Tuple[str, str]:
    """Runs one analysis, writes ``<kind>_report.json`` and returns (path, summary)."""
    if f1 is not None or f2 is not None:
        spec = {'kind': 'bound'}
        if spec_path:
            spec.update(load_analysis_spec(spec_path))
            spec['kind'] = 'bound'
        spec.update({k: repr(v) for k, v in (('f1', f1), ('f2', f2)) if v is not None})
    else:
        if not spec_path:
            raise ConfigError('analyze needs an analysis spec or --f1/--f2')
        spec = load_analysis_spec(spec_path)
    kind = spec['kind']
    if kind not in ANALYSES:
        raise ConfigError(f'unknown analysis kind "{kind}"; known: {", ".join(ANALYSES)}')
    datasets, metas = _load_datasets(tag_paths, force) if kind != 'bound' else ({}, {})
    os.makedirs(out_dir, exist_ok=True)
    result, summary = ANALYSES[kind](spec, datasets, metas, out_dir)
    data = json.loads(result.to_json()) if isinstance(result, FidelityReport) else dict(result)
    data.update(_provenance(spec, tag_paths))
    path = os.path.join(out_dir, f'{kind}_report.json')
    with open(path, 'w', newline='\n') as f:
        f.write(json.dumps(data, indent=2, sort_keys=True) + '\n')
    return path, summary


# ---------------------------------------------------------------------------

def _add_common_flags(parser):
    parser.add_argument('--seed', type=int, default=None, help='Master seed, overrides [run] seed.')
    parser.add_argument('--out-dir', dest='out_dir', default=None, help='Output directory.')
    parser.add_argument('--threads', type=int, default=None, help='Worker threads.')
    parser.add_argument('--force', action='store_true', help='Accept tag files from different configurations.')
    parser.add_argument('-v', '--verbose', dest='verbose', action='store_true',
                        help='Enable log messages at DEBUG level.')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='SpinPhotonSim',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description=textwrap.dedent(
            """\
            --------------------------------------------
            Spin-photon entanglement simulator.
            --------------------------------------------
            """
        )
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', help='Simulate and write time-tag files.')
    simulate.add_argument('config')
    _add_common_flags(simulate)

    analyze = commands.add_parser('analyze', help='Analyse time-tag files.')
    analyze.add_argument('spec', nargs='?', default=None, help='Analysis spec with an [analysis] section.')
    analyze.add_argument('tags', nargs='*', help='Time-tag CSV files.')
    analyze.add_argument('--f1', type=float, default=None, help='Computational-basis fidelity (bypass mode).')
    analyze.add_argument('--f2', type=float, default=None, help='Superposition-basis fidelity (bypass mode).')
    _add_common_flags(analyze)

    scan = commands.add_parser('scan', help='Evaluate a summary statistic over the sequence scan.')
    scan.add_argument('config')
    _add_common_flags(scan)

    serve = commands.add_parser('serve', help='Start the Pyro5 simulation server.')
    serve.add_argument('--host', default='localhost', metavar='localhost',
                       help='Hostname or IP on which the server will listen for connections.')
    serve.add_argument('--port', type=int, default=23100, metavar='23100', help='Server port.')
    serve.add_argument('-v', '--verbose', dest='verbose', action='store_true',
                       help='Enable log messages at DEBUG level.')
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(levelname)s %(name)s: %(message)s')
    if args.command == 'serve':
        from .server import start_server
        start_server(host=args.host, port=args.port, verbose=args.verbose)
        return 0
    overrides = {'seed': args.seed, 'threads': args.threads,
                 'out_dir': os.path.abspath(args.out_dir) if args.out_dir else None}
    try:
        if args.command == 'simulate':
            paths = cmd_simulate(args.config, overrides)
            print(f'wrote {len(paths)} tag file(s)')
        elif args.command == 'scan':
            print(f'wrote {cmd_scan(args.config, overrides)}')
        else:
            path, summary = cmd_analyze(args.spec, args.tags, args.out_dir or '.', args.force, args.f1, args.f2)
            print(summary)
    except SpinPhotonSimError as e:
        print(f'error: {e}', file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f'error: {e}', file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())
