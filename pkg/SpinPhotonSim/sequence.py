"""Pulse sequences within one repetition cycle and the line based sequence DSL.

Example::

    # spin pumping with a scanned pump duration
    period 25
    pulse reset kind=reset t0=0 dur=0.1
    pulse pump kind=drive t0=5 shape=square dur=6 target=T1 rabi_ghz=1.158
    pulse readout kind=drive t0=19.1 shape=gauss fwhm=0.3 target=T1 rabi_ghz=1.566
    scan pump.dur from=0 to=12 steps=13
"""
import enum
import hashlib
import itertools
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence as SequenceType, Tuple

import numpy as np

from .errors import (ConfigError, InvalidParameter, NonPositiveDetuning, OutOfCycle, OverlapError,
                     SequenceSyntaxError, UnknownTarget)

logger = logging.getLogger('SpinPhotonSim.sequence')

DEFAULT_PERIOD = 25.0  # ns, 40 MHz repetition rate
GAUSSIAN_TRUNCATION = 3.0  # support is ±3 FWHM around the peak
CHANNEL_LABELS = ('T1', 'T2', 'T3', 'T4')


class PulseKind(enum.Enum):
    Reset = 'reset'
    Drive = 'drive'
    Rotate = 'rotate'


class PulseShape(enum.Enum):
    Square = 'square'
    Gaussian = 'gauss'


class DriveRole(enum.Enum):
    Pump = 'pump'
    Entangle = 'entangle'
    Readout = 'readout'


def _default_role(name: str) -> DriveRole:
    lowered = name.lower()
    if lowered.startswith('read'):
        return DriveRole.Readout
    if lowered.startswith('ent'):
        return DriveRole.Entangle
    return DriveRole.Pump


@dataclass(frozen=True)
class Pulse:
    """One optical event of the sequence.

    Values are kept in the DSL units (GHz, multiples of π, nm) so that
    serialising a parsed sequence reproduces it exactly.
    """
    name: str
    kind: PulseKind
    t0: float
    shape: Optional[PulseShape] = None
    dur: Optional[float] = None
    fwhm: Optional[float] = None
    target: Optional[str] = None
    rabi_ghz: Optional[float] = None
    detuning_ghz: float = 0.0
    role: Optional[DriveRole] = None
    theta_pi: Optional[float] = None
    power_mw: Optional[float] = None
    detuning_nm: Optional[float] = None

    @property
    def rabi(self) -> float:
        return 2 * math.pi * (self.rabi_ghz or 0.0)

    @property
    def detuning(self) -> float:
        return 2 * math.pi * self.detuning_ghz

    @property
    def theta(self) -> Optional[float]:
        return None if self.theta_pi is None else math.pi * self.theta_pi

    @property
    def t_peak(self) -> float:
        if self.shape is PulseShape.Gaussian:
            return self.t0 + GAUSSIAN_TRUNCATION * self.fwhm
        return self.t0 + (self.dur or 0.0) / 2

    @property
    def support(self) -> Tuple[float, float]:
        if self.kind is PulseKind.Rotate:
            return self.t0, self.t0
        if self.shape is PulseShape.Gaussian:
            return self.t0, self.t0 + 2 * GAUSSIAN_TRUNCATION * self.fwhm
        return self.t0, self.t0 + (self.dur or 0.0)

    def validate(self, period: float, line: int = 0):
        if self.t0 < 0:
            raise OutOfCycle(self.name)
        if self.kind is PulseKind.Rotate:
            if (self.theta_pi is None) == (self.power_mw is None):
                raise SequenceSyntaxError(line, f'rotate pulse "{self.name}" needs exactly one of theta_pi, power_mw')
            if self.power_mw is not None and self.power_mw < 0:
                raise SequenceSyntaxError(line, f'negative power for "{self.name}"')
            if self.t0 >= period:
                raise OutOfCycle(self.name)
            return
        if self.kind is PulseKind.Drive:
            if self.shape is None:
                raise SequenceSyntaxError(line, f'drive pulse "{self.name}" needs shape=')
            if self.target is None:
                raise SequenceSyntaxError(line, f'drive pulse "{self.name}" needs target=')
            if self.target not in CHANNEL_LABELS:
                raise UnknownTarget(self.target)
            if self.rabi_ghz is None or self.rabi_ghz < 0:
                raise SequenceSyntaxError(line, f'drive pulse "{self.name}" needs rabi_ghz >= 0')
        if self.shape is PulseShape.Gaussian:
            if self.fwhm is None or self.fwhm <= 0:
                raise SequenceSyntaxError(line, f'gaussian pulse "{self.name}" needs fwhm > 0')
        else:
            if self.dur is None or self.dur < 0:
                raise SequenceSyntaxError(line, f'pulse "{self.name}" needs dur >= 0')
        if self.support[1] > period + 1e-12:
            raise OutOfCycle(self.name)


SCANNABLE_FIELDS = ('t0', 'dur', 'fwhm', 'rabi_ghz', 'detuning_ghz', 'theta_pi', 'power_mw', 'detuning_nm')


@dataclass(frozen=True)
class Scan:
    """One swept variable; ``linked`` fields of other pulses take the same values."""
    pulse: str
    field: str
    start: float
    stop: float
    steps: int
    linked: Tuple[Tuple[str, str], ...] = ()

    @property
    def targets(self) -> Tuple[Tuple[str, str], ...]:
        return ((self.pulse, self.field),) + tuple(self.linked)

    @property
    def label(self) -> str:
        return '+'.join(f'{pulse}.{field}' for pulse, field in self.targets)

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)


@dataclass(frozen=True)
class Sequence:
    period: float = DEFAULT_PERIOD
    pulses: Tuple[Pulse, ...] = ()
    scans: Tuple[Scan, ...] = ()

    def __post_init__(self):
        if not self.period > 0:
            raise InvalidParameter('period must be positive')
        pulses = tuple(sorted(self.pulses, key=lambda p: p.t0))
        object.__setattr__(self, 'pulses', pulses)
        names = [p.name for p in pulses]
        if len(set(names)) != len(names):
            raise InvalidParameter('pulse names must be unique')
        for pulse in pulses:
            pulse.validate(self.period)
        extended = [p for p in pulses if p.kind is not PulseKind.Rotate]
        for a, b in itertools.combinations(extended, 2):
            (a0, a1), (b0, b1) = a.support, b.support
            if a0 < b1 and b0 < a1:
                raise OverlapError(a.name, b.name)
        for scan in self.scans:
            for pulse, field in scan.targets:
                if pulse not in names:
                    raise UnknownTarget(pulse)
                if field not in SCANNABLE_FIELDS:
                    raise InvalidParameter(f'field "{field}" cannot be scanned')
            if scan.steps < 1:
                raise InvalidParameter('scan steps must be >= 1')

    def pulse(self, name: str) -> Pulse:
        for pulse in self.pulses:
            if pulse.name == name:
                return pulse
        raise UnknownTarget(name)

    def of_kind(self, kind: PulseKind) -> List[Pulse]:
        return [p for p in self.pulses if p.kind is kind]

    def scan_points(self) -> List[Tuple[float, ...]]:
        """All scan values; the cartesian product for more than one scan."""
        if not self.scans:
            return [()]
        return [tuple(v) for v in itertools.product(*(s.values for s in self.scans))]

    def at(self, values: SequenceType[float]) -> 'Sequence':
        """Returns the unscanned sequence with the scan variables set to ``values``."""
        if len(values) != len(self.scans):
            raise InvalidParameter(f'expected {len(self.scans)} scan values')
        pulses = {p.name: p for p in self.pulses}
        for scan, value in zip(self.scans, values):
            for pulse, field in scan.targets:
                pulses[pulse] = replace(pulses[pulse], **{field: float(value)})
        return Sequence(self.period, tuple(pulses.values()))

    def content_hash(self) -> str:
        """Git blob hash of the serialized sequence."""
        data = serialize_sequence(self).encode('utf-8')
        return hashlib.sha1(b'blob %d\0' % len(data) + data).hexdigest()


@dataclass(frozen=True)
class RotationCalibration:
    """θ = coefficient × (reference_detuning / detuning) × P^exponent."""
    coefficient: float = math.pi
    exponent: float = 0.77
    reference_detuning: float = 0.6

    def __post_init__(self):
        if not self.coefficient > 0:
            raise InvalidParameter('calibration coefficient must be positive')
        if not 0 < self.exponent <= 1:
            raise InvalidParameter('calibration exponent must be in (0, 1]')
        if not self.reference_detuning > 0:
            raise NonPositiveDetuning('reference detuning must be positive')

    def power_for(self, theta: float, detuning: Optional[float] = None) -> float:
        detuning = self.reference_detuning if detuning is None else detuning
        scale = self.coefficient * self.reference_detuning / detuning
        return (theta / scale) ** (1.0 / self.exponent)


def rotation_angle_from_power(power: float, cal: RotationCalibration, detuning: Optional[float] = None) -> float:
    """Rotation angle (rad) of a detuned ps pulse of the given power (mW)."""
    detuning = cal.reference_detuning if detuning is None else detuning
    if detuning <= 0:
        raise NonPositiveDetuning(f'detuning must be positive, got {detuning} nm')
    if power < 0:
        raise InvalidParameter('power must be non-negative')
    return cal.coefficient * (cal.reference_detuning / detuning) * power ** cal.exponent


def resolve_rotation_angle(pulse: Pulse, cal: RotationCalibration) -> float:
    if pulse.theta_pi is not None:
        return pulse.theta
    return rotation_angle_from_power(pulse.power_mw, cal, pulse.detuning_nm)


def envelope(pulse: Pulse, t: float) -> float:
    """Dimensionless field amplitude of a Reset or Drive pulse at time ``t``."""
    start, end = pulse.support
    if not start <= t < end:
        return 0.0
    if pulse.shape is PulseShape.Gaussian:
        x = (t - pulse.t_peak) / pulse.fwhm
        return math.exp(-4 * math.log(2) * x * x)
    return 1.0


def envelope_array(pulse: Pulse, t: np.ndarray) -> np.ndarray:
    start, end = pulse.support
    t = np.asarray(t, dtype=float)
    inside = (t >= start) & (t < end)
    if pulse.shape is PulseShape.Gaussian:
        x = (t - pulse.t_peak) / pulse.fwhm
        return np.where(inside, np.exp(-4 * np.log(2) * x * x), 0.0)
    return inside.astype(float)


# ---------------------------------------------------------------------------
# DSL

_FLOAT_KEYS = ('t0', 'dur', 'fwhm', 'rabi_ghz', 'detuning_ghz', 'theta_pi', 'power_mw', 'detuning_nm')
_PULSE_KEYS = set(_FLOAT_KEYS) | {'kind', 'shape', 'target', 'role'}


def _parse_float(text: str, line: int, key: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SequenceSyntaxError(line, f'{key}: "{text}" is not a number') from None
    if not math.isfinite(value):
        raise SequenceSyntaxError(line, f'{key}: value must be finite')
    return value


def _parse_options(tokens: List[str], line: int) -> Dict[str, str]:
    options = {}
    for token in tokens:
        key, sep, value = token.partition('=')
        if not sep or not key or not value:
            raise SequenceSyntaxError(line, f'expected key=value, got "{token}"')
        if key in options:
            raise SequenceSyntaxError(line, f'duplicate key "{key}"')
        options[key] = value
    return options


def _parse_enum(enum_cls, text: str, line: int, key: str):
    try:
        return enum_cls(text)
    except ValueError:
        allowed = '|'.join(e.value for e in enum_cls)
        raise SequenceSyntaxError(line, f'{key} must be one of {allowed}') from None


def _parse_pulse(tokens: List[str], line: int) -> Pulse:
    if not tokens:
        raise SequenceSyntaxError(line, 'pulse needs a name')
    name, options = tokens[0], _parse_options(tokens[1:], line)
    unknown = set(options) - _PULSE_KEYS
    if unknown:
        raise SequenceSyntaxError(line, f'unknown key(s) {", ".join(sorted(unknown))}')
    if 'kind' not in options or 't0' not in options:
        raise SequenceSyntaxError(line, f'pulse "{name}" needs kind= and t0=')
    kind = _parse_enum(PulseKind, options.pop('kind'), line, 'kind')
    values = {key: _parse_float(options.pop(key), line, key) for key in _FLOAT_KEYS if key in options}
    shape = _parse_enum(PulseShape, options.pop('shape'), line, 'shape') if 'shape' in options else None
    role = _parse_enum(DriveRole, options.pop('role'), line, 'role') if 'role' in options else None
    target = options.pop('target', None)
    if kind is PulseKind.Reset:
        shape = PulseShape.Square
        values.setdefault('dur', 0.0)
    if kind is PulseKind.Drive and role is None:
        role = _default_role(name)
    if kind is not PulseKind.Drive and (target is not None or 'rabi_ghz' in values):
        raise SequenceSyntaxError(line, f'target/rabi_ghz only apply to drive pulses ("{name}")')
    if kind is not PulseKind.Rotate and ('theta_pi' in values or 'power_mw' in values):
        raise SequenceSyntaxError(line, f'theta_pi/power_mw only apply to rotate pulses ("{name}")')
    if shape is PulseShape.Gaussian and 'dur' in values or shape is PulseShape.Square and 'fwhm' in values:
        raise SequenceSyntaxError(line, f'dur= goes with square, fwhm= with gauss ("{name}")')
    return Pulse(name=name, kind=kind, shape=shape, target=target, role=role, **values)


def _parse_scan(tokens: List[str], line: int) -> Scan:
    if not tokens:
        raise SequenceSyntaxError(line, 'scan needs <pulse>.<field>')
    targets = []
    for target in tokens[0].split(','):
        pulse, dot, field = target.partition('.')
        if not dot or not pulse:
            raise SequenceSyntaxError(line, 'scan needs <pulse>.<field>[,<pulse>.<field>...]')
        if field not in SCANNABLE_FIELDS:
            raise SequenceSyntaxError(line, f'field "{field}" cannot be scanned')
        targets.append((pulse, field))
    options = _parse_options(tokens[1:], line)
    if set(options) != {'from', 'to', 'steps'}:
        raise SequenceSyntaxError(line, 'scan needs exactly from=, to=, steps=')
    try:
        steps = int(options['steps'])
    except ValueError:
        raise SequenceSyntaxError(line, 'steps must be an integer') from None
    if steps < 1:
        raise SequenceSyntaxError(line, 'steps must be >= 1')
    (pulse, field), *linked = targets
    return Scan(pulse, field, _parse_float(options['from'], line, 'from'),
                _parse_float(options['to'], line, 'to'), steps, tuple(linked))


def parse_sequence(text: str) -> Sequence:
    """Parses the sequence DSL.

    Raises:
        SequenceSyntaxError: malformed line (carries the line number).
        OverlapError: two Drive/Reset supports overlap.
        UnknownTarget: unknown transition label or scanned pulse.
        OutOfCycle: a pulse does not fit within the period.

    A scan point that moves a pulse out of the cycle or into another pulse
    raises SequenceSyntaxError on the line of the scan responsible.
    """
    period = DEFAULT_PERIOD
    pulses: List[Tuple[Pulse, int]] = []
    scans: List[Scan] = []
    scan_lines: List[int] = []
    seen_period = False
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split('#', 1)[0].strip()
        if not content:
            continue
        keyword, *tokens = content.split()
        if keyword == 'period':
            if seen_period or len(tokens) != 1:
                raise SequenceSyntaxError(number, 'expected a single "period <ns>" line')
            period = _parse_float(tokens[0], number, 'period')
            if period <= 0:
                raise SequenceSyntaxError(number, 'period must be positive')
            seen_period = True
        elif keyword == 'pulse':
            pulses.append((_parse_pulse(tokens, number), number))
        elif keyword == 'scan':
            scans.append(_parse_scan(tokens, number))
            scan_lines.append(number)
        else:
            raise SequenceSyntaxError(number, f'unknown statement "{keyword}"')
    # period may be declared after the pulses
    for pulse, number in pulses:
        pulse.validate(period, number)
    sequence = Sequence(period, tuple(p for p, _ in pulses), tuple(scans))
    _check_scan_points(sequence, scan_lines)
    logger.debug('Parsed sequence with %d pulses and %d scan(s)', len(pulses), len(scans))
    return sequence


def _check_scan_points(sequence: Sequence, lines: List[int]):
    for point in sequence.scan_points():
        try:
            sequence.at(point)
        except ConfigError as e:
            names = set(getattr(e, 'names', ())) | {getattr(e, 'name', None)}
            line = next((n for scan, n in zip(sequence.scans, lines)
                         if any(pulse in names for pulse, _ in scan.targets)), lines[0])
            values = ', '.join(f'{s.label}={_fmt(v)}' for s, v in zip(sequence.scans, point))
            raise SequenceSyntaxError(line, f'scan point {values}: {e}') from e


def load_sequence(path) -> Sequence:
    return parse_sequence(Path(path).read_text(encoding='utf-8'))


def _fmt(value: float) -> str:
    return repr(float(value))


def serialize_sequence(seq: Sequence) -> str:
    lines = [f'period {_fmt(seq.period)}']
    for p in seq.pulses:
        parts = [f'pulse {p.name} kind={p.kind.value} t0={_fmt(p.t0)}']
        if p.kind is PulseKind.Drive:
            parts.append(f'shape={p.shape.value}')
        if p.dur is not None and p.shape is not PulseShape.Gaussian:
            parts.append(f'dur={_fmt(p.dur)}')
        if p.fwhm is not None:
            parts.append(f'fwhm={_fmt(p.fwhm)}')
        if p.kind is PulseKind.Drive:
            parts.append(f'target={p.target} rabi_ghz={_fmt(p.rabi_ghz)}')
            if p.detuning_ghz:
                parts.append(f'detuning_ghz={_fmt(p.detuning_ghz)}')
            parts.append(f'role={p.role.value}')
        if p.theta_pi is not None:
            parts.append(f'theta_pi={_fmt(p.theta_pi)}')
        if p.power_mw is not None:
            parts.append(f'power_mw={_fmt(p.power_mw)}')
        if p.detuning_nm is not None:
            parts.append(f'detuning_nm={_fmt(p.detuning_nm)}')
        lines.append(' '.join(parts))
    for s in seq.scans:
        targets = ','.join(f'{pulse}.{field}' for pulse, field in s.targets)
        lines.append(f'scan {targets} from={_fmt(s.start)} to={_fmt(s.stop)} steps={s.steps}')
    return '\n'.join(lines) + '\n'
