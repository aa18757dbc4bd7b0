"""Detector chain: spectral filter, efficiency, jitter, dark counts and laser leakage.

Emission records go in, time tags come out. Tags are stored in integer
picoseconds, columnar, sorted by (cycle, t_ps)::

    table = run_batch(seed, seq, params, n_trajectories=10**5).table
    red, blue = route_events(table, 2, seed, mode='copy')
    tags = detect(red, FilterConfig(channel.frequency_offset, fwhm), DetectorConfig(channel_id=0), seed, seq)
    write_tags('red.csv', tags)
"""
import enum
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence as SequenceType, Union

import numpy as np

from .dynamics import EmissionEvent, EmissionTable
from .errors import InvalidParameter, TagFileError
from .sequence import PulseKind, PulseShape, Sequence
from .system import channel_by_label

logger = logging.getLogger('SpinPhotonSim.detection')

SPEED_OF_LIGHT = 2.99792458e8  # nm/ns
FWHM_TO_SIGMA = 1.0 / (2 * math.sqrt(2 * math.log(2)))
TAG_HEADER = 'cycle,channel,t_ps'
METADATA_SUFFIX = '.meta'


class FilterShape(enum.Enum):
    Gaussian = 'gaussian'
    Lorentzian = 'lorentzian'


@dataclass(frozen=True)
class FilterConfig:
    """Spectral filter, all frequencies in rad/ns relative to line center."""
    center_offset: float
    bandwidth_fwhm: float
    shape: FilterShape = FilterShape.Gaussian

    def __post_init__(self):
        if not self.bandwidth_fwhm > 0:
            raise InvalidParameter('filter bandwidth must be positive')

    @classmethod
    def from_nm(cls, center_offset: float, fwhm_nm: float, lambda0: float = 1550.0,
                shape: FilterShape = FilterShape.Gaussian) -> 'FilterConfig':
        return cls(center_offset, wavelength_offset_to_angular_frequency(fwhm_nm, lambda0), shape)


@dataclass(frozen=True)
class DetectorConfig:
    """One single-photon detector.

    Attributes:
        efficiency: detection probability of a transmitted photon.
        jitter_fwhm: FWHM (ps) of the Gaussian timing response.
        dark_rate: dark counts per ns.
        laser_leakage: probability per Drive pulse and cycle of a laser tag
            (before filtering).
        dead_time: ps after a tag during which the detector is blind.
        channel_id: channel number written to tag files.
        port: erased-detection port (+1/−1) seen by this detector, 0 to see
            all events.
    """
    efficiency: float = 1.0
    jitter_fwhm: float = 40.0
    dark_rate: float = 0.0
    laser_leakage: float = 0.0
    dead_time: float = 0.0
    channel_id: int = 0
    port: int = 0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise InvalidParameter('efficiency must be in [0, 1]')
        if not 0 <= self.laser_leakage <= 1:
            raise InvalidParameter('laser_leakage must be in [0, 1]')
        if self.jitter_fwhm < 0 or self.dark_rate < 0 or self.dead_time < 0:
            raise InvalidParameter('jitter_fwhm, dark_rate and dead_time must be non-negative')
        if self.port not in (-1, 0, 1):
            raise InvalidParameter('port must be -1, 0 or +1')


@dataclass(frozen=True)
class TimeTag:
    channel_id: int
    cycle: int
    t: int
    truth: Optional[int] = None


@dataclass
class TagStream:
    """Columnar time tags.

    ``truth`` is the row of the generating emission in its EmissionTable, −1 for
    dark counts and laser leakage and for tags read from files.
    """
    cycle: np.ndarray
    channel: np.ndarray
    t_ps: np.ndarray
    truth: np.ndarray
    period: float
    n_cycles: int

    def __post_init__(self):
        self.cycle = np.asarray(self.cycle, dtype=np.int64)
        self.channel = np.asarray(self.channel, dtype=np.int64)
        self.t_ps = np.asarray(self.t_ps, dtype=np.int64)
        self.truth = np.asarray(self.truth, dtype=np.int64)
        order = np.lexsort((self.channel, self.t_ps, self.cycle))
        for name in ('cycle', 'channel', 't_ps', 'truth'):
            setattr(self, name, getattr(self, name)[order])

    def __len__(self):
        return len(self.cycle)

    @classmethod
    def empty(cls, period: float, n_cycles: int) -> 'TagStream':
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), period, n_cycles)

    @classmethod
    def merge(cls, streams: SequenceType['TagStream']) -> 'TagStream':
        first = streams[0]
        return cls(np.concatenate([s.cycle for s in streams]), np.concatenate([s.channel for s in streams]),
                   np.concatenate([s.t_ps for s in streams]), np.concatenate([s.truth for s in streams]),
                   first.period, max(s.n_cycles for s in streams))

    def select(self, mask) -> 'TagStream':
        return TagStream(self.cycle[mask], self.channel[mask], self.t_ps[mask], self.truth[mask],
                         self.period, self.n_cycles)

    def of_channel(self, channel: Optional[Union[int, SequenceType[int]]]) -> 'TagStream':
        if channel is None:
            return self
        return self.select(np.isin(self.channel, np.atleast_1d(channel)))

    def tags(self) -> List[TimeTag]:
        return [TimeTag(int(ch), int(c), int(t), None if tr < 0 else int(tr))
                for c, ch, t, tr in zip(self.cycle, self.channel, self.t_ps, self.truth)]


def filter_transmission(offset, cfg: Optional[FilterConfig]):
    """Peak-normalised transmission at ``offset`` (rad/ns); no filter passes everything."""
    if cfg is None:
        return np.ones_like(np.asarray(offset, dtype=float)) if np.ndim(offset) else 1.0
    x = (np.asarray(offset, dtype=float) - cfg.center_offset) / cfg.bandwidth_fwhm
    if cfg.shape is FilterShape.Gaussian:
        value = np.exp(-4 * math.log(2) * x * x)
    else:
        value = 1.0 / (1.0 + 4 * x * x)
    return float(value) if np.ndim(value) == 0 else value


def wavelength_offset_to_angular_frequency(dlambda: float, lambda0: float = 1550.0) -> float:
    """Δω = 2πc·Δλ/λ₀² in rad/ns (wavelengths in nm)."""
    if not lambda0 > 0:
        raise InvalidParameter('lambda0 must be positive')
    return 2 * math.pi * SPEED_OF_LIGHT * dlambda / lambda0 ** 2


def route_events(events: EmissionTable, n_ports: int, seed: int, mode: str = 'split') -> List[EmissionTable]:
    """Distributes emissions over ``n_ports`` detector arms.

    ``split`` sends each event to exactly one port (balanced beamsplitter),
    ``copy`` gives every port the full record.
    """
    if n_ports < 1:
        raise InvalidParameter('n_ports must be ≥ 1')
    if mode == 'copy':
        return [events] * n_ports
    if mode != 'split':
        raise InvalidParameter(f'unknown routing mode "{mode}"')
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x5b])))
    ports = rng.integers(n_ports, size=len(events))
    return [events.select(ports == k) for k in range(n_ports)]


def _event_transmission(events: EmissionTable, filter_cfg: Optional[FilterConfig]) -> np.ndarray:
    channels = events.channels
    per_channel = np.array([filter_transmission(c.frequency_offset, filter_cfg) for c in channels])
    transmission = per_channel[events.channel.astype(np.int64)] if len(events) else np.zeros(0)
    erased = events.port != 0
    if np.any(erased):
        # frequency-blind events: branching-weighted mean over the parent's two lines
        mixed = np.zeros(len(channels))
        for k, channel in enumerate(channels):
            siblings = [c for c in channels if c.source == channel.source]
            total = sum(c.rate for c in siblings)
            mixed[k] = sum(c.rate * filter_transmission(c.frequency_offset, filter_cfg) for c in siblings) / total
        transmission = np.where(erased, mixed[events.channel.astype(np.int64)], transmission)
    return transmission


def _leakage_times(rng, pulse, count: int) -> np.ndarray:
    start, end = pulse.support
    if pulse.shape is PulseShape.Gaussian:
        # intensity profile is the squared envelope
        sigma = pulse.fwhm * FWHM_TO_SIGMA / math.sqrt(2)
        times = rng.normal(pulse.t_peak, sigma, count)
        outside = (times < start) | (times >= end)
        while np.any(outside):
            times[outside] = rng.normal(pulse.t_peak, sigma, int(outside.sum()))
            outside = (times < start) | (times >= end)
        return times
    return rng.uniform(start, end, count)


def _apply_dead_time(cycle, t_ps, keep_order, dead_time: float) -> np.ndarray:
    keep = np.ones(len(cycle), dtype=bool)
    last_cycle, last_t = None, None
    for i in keep_order:
        if last_cycle == cycle[i] and t_ps[i] - last_t < dead_time:
            keep[i] = False
            continue
        last_cycle, last_t = cycle[i], t_ps[i]
    return keep


def detect(events: Union[EmissionTable, SequenceType[EmissionEvent]], filter_cfg: Optional[FilterConfig],
           det: DetectorConfig, seed: int, seq: Optional[Sequence] = None, **table_kwargs) -> TagStream:
    """Turns emissions into time tags of one detector.

    Args:
        events: emission records, an EmissionTable or a list of EmissionEvent
            (then ``channels``, ``period`` and ``n_cycles`` are passed as
            keyword arguments for ``EmissionTable.from_events``).
        filter_cfg: spectral filter in front of the detector, None for none.
        det: detector parameters.
        seed: seed of the detection randomness.
        seq: sequence of the run, needed for laser leakage.

    Returns:
        TagStream: tags sorted by (cycle, t_ps).
    """
    if not isinstance(events, EmissionTable):
        events = EmissionTable.from_events(events, **table_kwargs)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), det.channel_id, 0xde7])))
    period, n_cycles = events.period, events.n_cycles
    sigma = det.jitter_fwhm * FWHM_TO_SIGMA

    visible = np.ones(len(events), dtype=bool) if det.port == 0 else events.port == det.port
    probability = det.efficiency * _event_transmission(events, filter_cfg) * visible
    survived = np.flatnonzero(rng.random(len(events)) < probability)
    cycles = [events.cycle[survived]]
    times = [events.t_phot[survived]]
    truth = [survived.astype(np.int64)]

    n_dark = rng.poisson(det.dark_rate * period * n_cycles) if det.dark_rate > 0 else 0
    if n_dark:
        cycles.append(rng.integers(n_cycles, size=n_dark))
        times.append(rng.uniform(0.0, period, n_dark))
        truth.append(np.full(n_dark, -1))

    if det.laser_leakage > 0 and seq is not None:
        for pulse in seq.of_kind(PulseKind.Drive):
            if pulse.rabi <= 0:
                continue
            laser = channel_by_label(events.channels, pulse.target).frequency_offset + pulse.detuning
            p = det.laser_leakage * filter_transmission(laser, filter_cfg)
            hit = np.flatnonzero(rng.random(n_cycles) < p)
            cycles.append(hit)
            times.append(_leakage_times(rng, pulse, len(hit)))
            truth.append(np.full(len(hit), -1))
            logger.debug('%d laser leakage tags from %s', len(hit), pulse.name)

    cycle = np.concatenate(cycles).astype(np.int64)
    t = np.concatenate(times) * 1000.0
    if sigma > 0:
        t = t + rng.normal(0.0, sigma, len(t))
    t_ps = np.rint(t).astype(np.int64)
    truth = np.concatenate(truth).astype(np.int64)
    if det.dead_time > 0 and len(cycle):
        order = np.lexsort((t_ps, cycle))
        keep = _apply_dead_time(cycle, t_ps, order, det.dead_time)
        cycle, t_ps, truth = cycle[keep], t_ps[keep], truth[keep]
    logger.debug('Detector %d: %d events -> %d tags', det.channel_id, len(events), len(cycle))
    return TagStream(cycle, np.full(len(cycle), det.channel_id), t_ps, truth, period, n_cycles)


def write_tags(path, stream: TagStream):
    """Writes the CSV tag file, rows sorted by (cycle, t_ps)."""
    with open(path, 'w', newline='\n') as f:
        f.write(TAG_HEADER + '\n')
        if len(stream):
            np.savetxt(f, np.column_stack([stream.cycle, stream.channel, stream.t_ps]), fmt='%d', delimiter=',')


def read_tags(path, period: Optional[float] = None, n_cycles: Optional[int] = None) -> TagStream:
    """Reads a CSV tag file.

    ``period`` and ``n_cycles`` default to the values of the metadata sidecar
    if there is one.

    Raises:
        TagFileError: malformed header or row, or rows out of order.
    """
    meta_path = str(path) + METADATA_SUFFIX
    if os.path.exists(meta_path):
        meta = read_metadata(meta_path)
        period = period if period is not None else float(meta.get('period_ns', 'nan'))
        if n_cycles is None and 'n_cycles' in meta:
            n_cycles = int(meta['n_cycles'])
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header != TAG_HEADER:
            raise TagFileError(path, 1, f'expected header "{TAG_HEADER}"')
        previous = None
        for number, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(',')
            if len(fields) != 3:
                raise TagFileError(path, number, f'expected 3 fields, got {len(fields)}')
            try:
                row = tuple(int(v) for v in fields)
            except ValueError:
                raise TagFileError(path, number, 'fields must be integers')
            if row[0] < 0:
                raise TagFileError(path, number, 'negative cycle index')
            if previous is not None and (row[0], row[2]) < previous:
                raise TagFileError(path, number, 'rows not sorted by (cycle, t_ps)')
            previous = (row[0], row[2])
            rows.append(row)
    data = np.array(rows, dtype=np.int64).reshape(-1, 3)
    if n_cycles is None:
        n_cycles = int(data[:, 0].max()) + 1 if len(data) else 0
    return TagStream(data[:, 0], data[:, 1], data[:, 2], np.full(len(data), -1),
                     period if period is not None else float('nan'), n_cycles)


def write_metadata(path, values: Dict[str, object]):
    """key=value sidecar, keys sorted."""
    with open(path, 'w', newline='\n') as f:
        for key in sorted(values):
            f.write(f'{key}={values[key]}\n')


def read_metadata(path) -> Dict[str, str]:
    values = {}
    with open(path) as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if '=' not in line:
                raise TagFileError(path, number, 'expected key=value')
            key, value = line.split('=', 1)
            values[key.strip()] = value.strip()
    return values
