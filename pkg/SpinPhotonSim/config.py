"""Run configuration files.

A run configuration is an INI file::

    [run]
    sequence = fig4_computational.seq
    trajectories = 100000
    seed = 7
    routing = copy

    [system]
    electron_splitting_ghz = 16.0
    hole_splitting_ghz = 28.3
    lifetime_ns = 1.32

    [detector.0]
    efficiency = 0.3
    filter_center = T1
    filter_fwhm_nm = 0.12

Relative paths are resolved against the directory of the file.
"""
import configparser
import hashlib
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

from .detection import DetectorConfig, FilterConfig, FilterShape, wavelength_offset_to_angular_frequency
from .dynamics import ImperfectionConfig
from .errors import ConfigError, InvalidParameter
from .sequence import RotationCalibration, Sequence, load_sequence
from .system import (DephasingShape, LevelIndex, SystemParams, Unraveling, build_channels, channel_by_label,
                     ghz_to_rad_per_ns, ueV_to_rad_per_ns)

logger = logging.getLogger('SpinPhotonSim.config')

INITIAL_STATES = ('mixed', 'down', 'up', 'trion_down', 'trion_up')
ROUTING_MODES = ('split', 'copy')
METHODS = ('trajectory', 'master')


@dataclass
class DetectorSpec:
    channel_id: int
    detector: DetectorConfig
    filter: Optional[FilterConfig]


@dataclass
class RunConfig:
    """Everything a run needs, already validated."""
    path: str
    sequence_path: str
    sequence: Sequence
    params: SystemParams
    calibration: RotationCalibration
    imperfections: ImperfectionConfig
    detectors: List[DetectorSpec]
    trajectories: int
    seed: int
    out_dir: str
    threads: int = 1
    initial: str = 'mixed'
    routing: str = 'split'
    method: str = 'trajectory'
    analysis: Dict[str, str] = field(default_factory=dict)
    config_hash: str = ''


def _enum(enum_cls, text: str, key: str):
    try:
        return enum_cls(text.strip().lower())
    except ValueError:
        choices = ', '.join(e.value for e in enum_cls)
        raise InvalidParameter(f'{key} must be one of {choices}, got "{text}"')


def _number(section: Mapping[str, str], key: str, default=None, convert=float):
    if key not in section:
        if default is None:
            raise ConfigError(f'missing key "{key}"')
        return default
    try:
        return convert(section[key])
    except ValueError:
        raise InvalidParameter(f'{key} = "{section[key]}" is not a valid number')


def _frequency(section: Mapping[str, str], name: str) -> float:
    if f'{name}_ueV' in section:
        return ueV_to_rad_per_ns(_number(section, f'{name}_ueV'))
    if f'{name}_ghz' in section:
        return ghz_to_rad_per_ns(_number(section, f'{name}_ghz'))
    raise ConfigError(f'missing key "{name}_ueV" or "{name}_ghz"')


def system_params_from_mapping(section: Mapping[str, str]) -> SystemParams:
    """SystemParams from the keys of a ``[system]`` section (strings or numbers)."""
    section = {k: str(v) for k, v in section.items()}
    branching = {}
    try:
        values = [float(v) for v in section.get('branching', '0.5').split(',')]
    except ValueError:
        raise InvalidParameter(f'branching = "{section["branching"]}" is not a list of numbers')
    if len(values) == 1:
        values = values * 2
    if len(values) != 2:
        raise InvalidParameter('branching takes one or two values (P(↓) per trion)')
    for level, p_down in zip((LevelIndex.TrionDown, LevelIndex.TrionUp), values):
        branching[level] = (p_down, 1.0 - p_down)
    return SystemParams(
        electron_splitting=_frequency(section, 'electron_splitting'),
        hole_splitting=_frequency(section, 'hole_splitting'),
        decay_rate=1.0 / _number(section, 'lifetime_ns'),
        branching=branching,
        dephasing_T2star=_number(section, 't2star_ns', math.inf),
        dephasing_shape=_enum(DephasingShape, section.get('dephasing_shape', 'gaussian'), 'dephasing_shape'),
        center_wavelength=_number(section, 'center_wavelength_nm', 1550.0),
    )


def _filter(section: Mapping[str, str], params: SystemParams) -> Optional[FilterConfig]:
    center = section.get('filter_center', 'none').strip()
    if center.lower() == 'none':
        return None
    if center.lower() == 'line':
        offset = 0.0
    else:
        channel = channel_by_label(build_channels(params), center)
        if channel is None:
            raise InvalidParameter(f'filter_center "{center}" is not a channel label, "line" or "none"')
        offset = channel.frequency_offset
    # longer wavelength is lower frequency
    offset -= wavelength_offset_to_angular_frequency(_number(section, 'filter_offset_nm', 0.0),
                                                     params.center_wavelength)
    return FilterConfig(offset,
                        wavelength_offset_to_angular_frequency(_number(section, 'filter_fwhm_nm'),
                                                               params.center_wavelength),
                        _enum(FilterShape, section.get('filter_shape', 'gaussian'), 'filter_shape'))


def detector_from_mapping(channel_id: int, section: Mapping[str, str], params: SystemParams) -> DetectorSpec:
    section = {k: str(v) for k, v in section.items()}
    detector = DetectorConfig(
        efficiency=_number(section, 'efficiency', 1.0),
        jitter_fwhm=_number(section, 'jitter_fwhm_ps', 40.0),
        dark_rate=_number(section, 'dark_rate_per_ns', 0.0),
        laser_leakage=_number(section, 'laser_leakage', 0.0),
        dead_time=_number(section, 'dead_time_ps', 0.0),
        channel_id=channel_id,
        port=_number(section, 'port', 0, int),
    )
    return DetectorSpec(channel_id, detector, _filter(section, params))


def imperfections_from_mapping(section: Mapping[str, str]) -> ImperfectionConfig:
    section = {k: str(v) for k, v in section.items()}
    return ImperfectionConfig(
        rotation_tilt=_number(section, 'rotation_tilt', 0.0),
        rotation_excitation=_number(section, 'rotation_excitation', 0.0),
        power_noise=_number(section, 'power_noise', 0.0),
        unraveling=_enum(Unraveling, section.get('unraveling', 'frequency'), 'unraveling'),
    )


def _read_parser(path) -> Tuple[configparser.ConfigParser, str]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as f:
            text = f.read()
        parser.read_string(text, source=str(path))
    except OSError as e:
        raise ConfigError(f'cannot read {path}: {e.strerror}')
    except configparser.Error as e:
        raise ConfigError(f'{path}: {e}')
    return parser, text


def _resolve(base: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base, path))


def load_config(path, overrides: Optional[Mapping[str, object]] = None) -> RunConfig:
    """Reads and validates a run configuration.

    Args:
        path: INI file.
        overrides: ``seed``, ``out_dir``, ``threads`` values from the command
            line, None entries are ignored.

    Raises:
        ConfigError: missing or invalid keys, unreadable files.
    """
    parser, text = _read_parser(path)
    base = os.path.dirname(os.path.abspath(path))
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    for name in ('run', 'system'):
        if not parser.has_section(name):
            raise ConfigError(f'{path}: missing section [{name}]')
    run = dict(parser['run'])
    run.update({k: str(v) for k, v in overrides.items()})

    if 'sequence' not in run:
        raise ConfigError('missing key "sequence" in [run]')
    sequence_path = _resolve(base, run['sequence'])
    if not os.path.exists(sequence_path):
        raise ConfigError(f'sequence file {sequence_path} does not exist')
    sequence = load_sequence(sequence_path)
    if 'seed' not in run:
        raise ConfigError('missing key "seed" in [run]; a seed is required')
    trajectories = _number(run, 'trajectories', 1, int)
    if trajectories < 1:
        raise InvalidParameter('trajectories must be ≥ 1')

    params = system_params_from_mapping(parser['system'])
    calibration_section = parser['calibration'] if parser.has_section('calibration') else {}
    calibration = RotationCalibration(
        coefficient=_number(calibration_section, 'coefficient', math.pi),
        exponent=_number(calibration_section, 'exponent', 0.77),
        reference_detuning=_number(calibration_section, 'reference_detuning_nm', 0.6),
    )
    imperfections = imperfections_from_mapping(parser['imperfections'] if parser.has_section('imperfections') else {})

    detectors = []
    for name in parser.sections():
        if name.startswith('detector.'):
            try:
                channel_id = int(name.split('.', 1)[1])
            except ValueError:
                raise ConfigError(f'detector section [{name}] needs an integer id')
            detectors.append(detector_from_mapping(channel_id, parser[name], params))
    if not detectors:
        detectors.append(DetectorSpec(0, DetectorConfig(), None))

    initial = run.get('initial', 'mixed')
    routing = run.get('routing', 'split')
    method = run.get('method', 'trajectory')
    for key, value, choices in (('initial', initial, INITIAL_STATES), ('routing', routing, ROUTING_MODES),
                                ('method', method, METHODS)):
        if value not in choices:
            raise InvalidParameter(f'{key} must be one of {", ".join(choices)}, got "{value}"')

    with open(sequence_path, 'rb') as f:
        digest = hashlib.sha1(text.encode('utf-8') + b'\0' + f.read()).hexdigest()
    config = RunConfig(
        path=str(path), sequence_path=sequence_path, sequence=sequence, params=params, calibration=calibration,
        imperfections=imperfections, detectors=sorted(detectors, key=lambda d: d.channel_id),
        trajectories=trajectories, seed=_number(run, 'seed', convert=int),
        out_dir=_resolve(base, run.get('out_dir', 'out')), threads=_number(run, 'threads', 1, int),
        initial=initial, routing=routing, method=method,
        analysis=dict(parser['analysis']) if parser.has_section('analysis') else {}, config_hash=digest,
    )
    logger.debug('Loaded %s: %d trajectories, %d detector(s), hash %s', path, trajectories, len(detectors), digest)
    return config


def load_analysis_spec(path) -> Dict[str, str]:
    """Options of the ``[analysis]`` section of an analysis spec (or run config)."""
    parser, _ = _read_parser(path)
    if not parser.has_section('analysis'):
        raise ConfigError(f'{path}: missing section [analysis]')
    options = dict(parser['analysis'])
    if 'kind' not in options:
        raise ConfigError('missing key "kind" in [analysis]')
    return options


def parse_window(text: str, key: str = 'window') -> Tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(','))
    except ValueError:
        raise InvalidParameter(f'{key} must be "start,stop" in ns, got "{text}"')
    if not hi > lo:
        raise InvalidParameter(f'{key} must have stop > start')
    return lo, hi
