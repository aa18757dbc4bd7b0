"""Time evolution through a pulse sequence.

Two engines share one model:

* ``evolve_master``: Lindblad master equation, fixed step RK4 on the
  vectorised density matrix.
* ``run_batch`` / ``run_trajectory``: quantum-jump unraveling producing
  labelled emission records. Trajectory ``i`` is cycle ``i`` of the
  experiment and draws all of its randomness from a Philox stream keyed by
  ``(seed, i)``, so results never depend on batching or thread count.

Deterministic helpers (segment propagators, ensemble averages over the
quasi-static spin detuning, conditional coincidence densities) back the scans
and the oracles used by the tests.
"""
import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence as SequenceType, Tuple, Union

import numpy as np
import scipy.linalg

from .errors import InvalidParameter, StepTooLarge
from .sequence import (DriveRole, Pulse, PulseKind, PulseShape, RotationCalibration, Sequence,
                       resolve_rotation_angle)
from .system import (ActiveDrive, DephasingShape, LevelIndex, QuantumState, SystemParams, TransitionChannel,
                     Unraveling, build_channels, channel_by_label, drive_frame, hamiltonian, jump_operators,
                     rotation_matrix)

logger = logging.getLogger('SpinPhotonSim.dynamics')

CHUNK_SIZE = 2048
TRION_MASK = np.array([0.0, 0.0, 1.0, 1.0])
GROUND_SIGN = np.array([0.5, -0.5, 0.0, 0.0])  # ground-detuning weights of H


class Origin(enum.Enum):
    ResetPulse = 'reset'
    Pump = 'pump'
    Entanglement = 'entanglement'
    Readout = 'readout'
    Rotation = 'rotation'


ORIGINS = list(Origin)
_ROLE_ORIGIN = {DriveRole.Pump: Origin.Pump, DriveRole.Entangle: Origin.Entanglement,
                DriveRole.Readout: Origin.Readout}


@dataclass(frozen=True)
class ImperfectionConfig:
    """Imperfections of the optical control.

    Attributes:
        rotation_tilt: polar tilt (rad) of the rotation axis out of the
            equatorial plane.
        rotation_excitation: probability that a rotation pulse incoherently
            excites the trion of the current spin state.
        power_noise: relative standard deviation of the rotation angle from
            cycle to cycle (trajectories only).
        unraveling: photon measurement model, see ``Unraveling``.
    """
    rotation_tilt: float = 0.0
    rotation_excitation: float = 0.0
    power_noise: float = 0.0
    unraveling: Unraveling = Unraveling.Frequency

    def __post_init__(self):
        if not 0 <= self.rotation_excitation <= 1:
            raise InvalidParameter('rotation_excitation must be a probability')
        if self.power_noise < 0:
            raise InvalidParameter('power_noise must be non-negative')


@dataclass(frozen=True)
class EmissionEvent:
    t_phot: float
    cycle: int
    channel: TransitionChannel
    origin: Origin
    port: int = 0


@dataclass
class EmissionTable:
    """Columnar emission records of many cycles, sorted by (cycle, t_phot).

    ``channel`` indexes ``channels``; ``port`` is ±1 for erased detection and
    0 otherwise; ``origin`` indexes ``ORIGINS``.
    """
    cycle: np.ndarray
    t_phot: np.ndarray
    channel: np.ndarray
    origin: np.ndarray
    port: np.ndarray
    channels: List[TransitionChannel]
    period: float
    n_cycles: int

    def __post_init__(self):
        order = np.lexsort((self.t_phot, self.cycle))
        for name in ('cycle', 't_phot', 'channel', 'origin', 'port'):
            setattr(self, name, np.asarray(getattr(self, name))[order])

    def __len__(self):
        return len(self.cycle)

    @classmethod
    def empty(cls, channels, period, n_cycles=0):
        return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int8), np.zeros(0, np.int8),
                   np.zeros(0, np.int8), list(channels), period, n_cycles)

    @classmethod
    def concat(cls, tables: SequenceType['EmissionTable']) -> 'EmissionTable':
        first = tables[0]
        return cls(np.concatenate([t.cycle for t in tables]), np.concatenate([t.t_phot for t in tables]),
                   np.concatenate([t.channel for t in tables]), np.concatenate([t.origin for t in tables]),
                   np.concatenate([t.port for t in tables]), first.channels, first.period,
                   sum(t.n_cycles for t in tables))

    @classmethod
    def from_events(cls, events: SequenceType[EmissionEvent], channels: SequenceType[TransitionChannel],
                    period: float, n_cycles: Optional[int] = None) -> 'EmissionTable':
        channels = list(channels)
        cycles = np.array([e.cycle for e in events], dtype=np.int64)
        if n_cycles is None:
            n_cycles = int(cycles.max()) + 1 if len(cycles) else 0
        return cls(cycles, np.array([e.t_phot for e in events], dtype=float),
                   np.array([channels.index(e.channel) for e in events], dtype=np.int8),
                   np.array([ORIGINS.index(e.origin) for e in events], dtype=np.int8),
                   np.array([e.port for e in events], dtype=np.int8), channels, period, n_cycles)

    def select(self, mask) -> 'EmissionTable':
        return EmissionTable(self.cycle[mask], self.t_phot[mask], self.channel[mask], self.origin[mask],
                             self.port[mask], self.channels, self.period, self.n_cycles)

    def events(self) -> List[EmissionEvent]:
        return [EmissionEvent(float(t), int(c), self.channels[k], ORIGINS[o], int(p))
                for c, t, k, o, p in zip(self.cycle, self.t_phot, self.channel, self.origin, self.port)]

    def counts_per_cycle(self) -> np.ndarray:
        return np.bincount(self.cycle, minlength=self.n_cycles)


@dataclass
class TrajectoryResult:
    """One cycle of one trajectory.

    ``spin_record`` lists (time, level) after every frequency-resolved jump and
    the projective outcome at the end of the cycle; erased jumps leave a
    superposition and are recorded with level ``None``.
    """
    events: List[EmissionEvent]
    spin_record: List[Tuple[float, Optional[LevelIndex]]]
    seed: int


@dataclass
class BatchResult:
    table: EmissionTable
    final_levels: np.ndarray
    resets: np.ndarray
    seed: int
    start: int = 0


def default_dt(seq: Sequence, params: SystemParams) -> float:
    """Largest step allowed by the ``dt ≤ 0.001·min(1/Γ, 2π/Ω_max)`` rule."""
    limit = 1.0 / params.decay_rate
    rabis = [p.rabi for p in seq.of_kind(PulseKind.Drive) if p.rabi > 0]
    if rabis:
        limit = min(limit, 2 * math.pi / max(rabis))
    return 1e-3 * limit


def _drive_channel(channels, pulse: Pulse) -> TransitionChannel:
    return channel_by_label(channels, pulse.target)


def _frame_at(seq: Sequence, channels, t: float) -> List[ActiveDrive]:
    """Zero-amplitude drives fixing the rotating frame of the segment starting at ``t``.

    Each trion follows the laser of the drive running at ``t``, else the last
    drive before ``t``, else the first one after it. Drives never overlap, so
    one laser per trion is always well defined. Amplitudes are kept when the
    frame changes: separate lasers carry unrelated phases.
    """
    drives = seq.of_kind(PulseKind.Drive)
    before = [p for p in drives if p.support[0] <= t]
    after = [p for p in drives if p.support[0] > t]
    chosen: Dict[LevelIndex, ActiveDrive] = {}
    for pulse in before[::-1] + after:
        channel = _drive_channel(channels, pulse)
        chosen.setdefault(channel.source, ActiveDrive(channel, 0.0, pulse.detuning))
    frame = list(chosen.values())
    drive_frame(frame)
    return frame


def _frame_key(frame: SequenceType[ActiveDrive]) -> Tuple:
    return tuple(sorted((int(d.channel.source), d.laser_offset) for d in frame))


def _coupling(channels, pulse) -> np.ndarray:
    """Hamiltonian part of ``pulse`` at its peak Rabi frequency."""
    channel = _drive_channel(channels, pulse)
    H = np.zeros((4, 4), dtype=complex)
    H[channel.target, channel.source] = H[channel.source, channel.target] = pulse.rabi / 2
    return H


def _shape_value(pulse: Pulse, t):
    """Envelope inside the pulse support (no truncation test)."""
    if pulse.shape is PulseShape.Gaussian:
        x = (t - pulse.t_peak) / pulse.fwhm
        return np.exp(-4 * np.log(2) * x * x)
    return 1.0


def _timeline(seq: Sequence, extra=()) -> np.ndarray:
    points = {0.0, seq.period}
    for p in seq.pulses:
        start, end = p.support
        points.update((start, end))
    points.update(float(t) for t in extra)
    return np.array(sorted(t for t in points if 0.0 <= t <= seq.period))


def _active_drive(seq: Sequence, a: float, b: float) -> Optional[Pulse]:
    for p in seq.of_kind(PulseKind.Drive):
        start, end = p.support
        if start <= a and b <= end and p.rabi > 0:
            return p
    return None


def _origin_lookup(seq: Sequence):
    times, codes = [], []
    for p in seq.pulses:
        if p.kind is PulseKind.Reset:
            origin = Origin.ResetPulse
        elif p.kind is PulseKind.Rotate:
            origin = Origin.Rotation
        else:
            origin = _ROLE_ORIGIN[p.role]
        times.append(p.t0)
        codes.append(ORIGINS.index(origin))
    times, codes = np.array(times), np.array(codes, dtype=np.int8)

    def lookup(t):
        idx = np.searchsorted(times, t, side='right') - 1
        return np.where(idx >= 0, codes[np.clip(idx, 0, None)] if len(codes) else 0,
                        ORIGINS.index(Origin.ResetPulse)).astype(np.int8)
    return lookup


def _rotation_angles(seq: Sequence, calibration: RotationCalibration) -> Dict[str, float]:
    return {p.name: resolve_rotation_angle(p, calibration) for p in seq.of_kind(PulseKind.Rotate)}


def _ground_detuning_sample(rng: np.random.Generator, params: SystemParams) -> float:
    if math.isinf(params.dephasing_T2star):
        return 0.0
    if params.dephasing_shape is DephasingShape.Gaussian:
        return rng.standard_normal() * math.sqrt(2) / params.dephasing_T2star
    return rng.standard_cauchy() / params.dephasing_T2star


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream of trajectory ``index``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


_INITIAL_LEVELS = {'down': LevelIndex.SpinDown, 'up': LevelIndex.SpinUp,
                   'trion_down': LevelIndex.TrionDown, 'trion_up': LevelIndex.TrionUp}


def initial_density(initial: Union[str, QuantumState]) -> np.ndarray:
    if isinstance(initial, QuantumState):
        return initial.density()
    if initial == 'mixed':
        return QuantumState.mixed_ground().density()
    if initial not in _INITIAL_LEVELS:
        raise InvalidParameter(f'unknown initial state "{initial}"')
    return QuantumState.basis(_INITIAL_LEVELS[initial]).density()


# ---------------------------------------------------------------------------
# Quantum-jump trajectories

class _JumpEngine:
    """Vectorised quantum-jump evolution of a chunk of trajectories."""

    def __init__(self, seq, params, imperfections, calibration, dt, initial):
        self.seq = seq
        self.params = params
        self.imp = imperfections
        self.channels = build_channels(params)
        self.dt = dt or default_dt(seq, params)
        self.initial = initial
        jumps = jump_operators(params, imperfections.unraveling)
        self.jump_mats = np.array([j.operator for j in jumps])
        self.jump_channel = np.array([self.channels.index(j.channel) for j in jumps], dtype=np.int8)
        self.jump_port = np.array([j.port for j in jumps], dtype=np.int8)
        self._frames: Dict[Tuple, Tuple[np.ndarray, np.ndarray]] = {}
        self.K = {p.name: -1j * _coupling(self.channels, p) for p in seq.of_kind(PulseKind.Drive)}
        self.angles = _rotation_angles(seq, calibration)
        self.rotations = seq.of_kind(PulseKind.Rotate)
        self.origin = _origin_lookup(seq)

    def _frame(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Level energies and non-Hermitian drift of the segment starting at ``t``."""
        frame = _frame_at(self.seq, self.channels, t)
        key = _frame_key(frame)
        if key not in self._frames:
            H0 = hamiltonian(self.params, frame)
            self._frames[key] = (np.diag(H0).real.copy(),
                                 -1j * H0 - 0.5 * self.params.decay_rate * np.diag(TRION_MASK))
        return self._frames[key]

    def _redraw(self, n, rngs, r):
        r[n] = rngs[n].random()

    def _jump(self, idx, times, psi, r, rngs, log):
        for n, t in zip(idx, times):
            amps = self.jump_mats @ psi[n]
            weights = np.sum(np.abs(amps) ** 2, axis=1)
            cumulative = np.cumsum(weights)
            k = int(np.searchsorted(cumulative, rngs[n].random() * cumulative[-1], side='right'))
            k = min(k, len(weights) - 1)
            psi[n] = amps[k] / math.sqrt(weights[k])
            self._redraw(n, rngs, r)
            log.append((n, t, k))

    def _free(self, a, b, psi, r, det, rngs, log):
        T = b - a
        gamma = self.params.decay_rate
        energies, _ = self._frame(a)
        rates = -1j * (energies[None, :] + det[:, None] * GROUND_SIGN[None, :]) \
            - 0.5 * gamma * TRION_MASK[None, :]
        g = np.sum(np.abs(psi[:, :2]) ** 2, axis=1)
        e = np.sum(np.abs(psi[:, 2:]) ** 2, axis=1)
        jumped = np.flatnonzero((e > 0) & (r > g + e * math.exp(-gamma * T)))
        out = psi * np.exp(rates * T)
        if len(jumped):
            ratio = np.clip((r[jumped] - g[jumped]) / e[jumped], 1e-300, 1.0)
            tau = np.clip(-np.log(ratio) / gamma, 0.0, T)
            psi_j = psi[jumped] * np.exp(rates[jumped] * tau[:, None])
            tmp = psi.copy()
            tmp[jumped] = psi_j
            self._jump(jumped, a + tau, tmp, r, rngs, log)
            out[jumped] = tmp[jumped] * np.exp(rates[jumped] * (T - tau)[:, None])
        return out

    def _driven(self, pulse, a, b, psi, r, det, rngs, log):
        steps = max(1, int(math.ceil((b - a) / self.dt - 1e-9)))
        h = (b - a) / steps
        K = self.K[pulse.name]
        _, A0 = self._frame(a)
        dvec = -1j * det[:, None] * GROUND_SIGN[None, :]

        def rhs(state, f):
            return np.einsum('ij,nj->ni', A0 + f * K, state) + dvec * state

        norm = np.sum(np.abs(psi) ** 2, axis=1)
        for s in range(steps):
            t = a + s * h
            f1, f2, f3 = _shape_value(pulse, t), _shape_value(pulse, t + h / 2), _shape_value(pulse, t + h)
            k1 = rhs(psi, f1)
            k2 = rhs(psi + 0.5 * h * k1, f2)
            k3 = rhs(psi + 0.5 * h * k2, f2)
            k4 = rhs(psi + h * k3, f3)
            psi = psi + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            new_norm = np.sum(np.abs(psi) ** 2, axis=1)
            jumped = np.flatnonzero(new_norm <= r)
            if len(jumped):
                drop = norm[jumped] - new_norm[jumped]
                frac = np.where(drop > 0, (norm[jumped] - r[jumped]) / np.where(drop > 0, drop, 1.0), 1.0)
                self._jump(jumped, t + h * np.clip(frac, 0.0, 1.0), psi, r, rngs, log)
                new_norm[jumped] = 1.0
            norm = new_norm
        return psi

    def _reset(self, psi, r, rngs, resets):
        psi[:] = 0
        for n in range(len(psi)):
            level = LevelIndex.TrionDown if rngs[n].random() < 0.5 else LevelIndex.TrionUp
            psi[n, level] = 1.0
            self._redraw(n, rngs, r)
        resets += 1

    def _rotate(self, pulse, psi, r, rngs, noise):
        theta = self.angles[pulse.name]
        tilt = self.imp.rotation_tilt
        if self.imp.power_noise > 0:
            for n in range(len(psi)):
                psi[n] = rotation_matrix(theta * (1 + self.imp.power_noise * noise[n, pulse.name]), tilt) @ psi[n]
        else:
            psi[:] = np.einsum('ij,nj->ni', rotation_matrix(theta, tilt), psi)
        p = self.imp.rotation_excitation
        if p > 0:
            for n in range(len(psi)):
                if rngs[n].random() >= p:
                    continue
                down, up = abs(psi[n, 0]) ** 2, abs(psi[n, 1]) ** 2
                if down + up == 0:
                    continue
                level = LevelIndex.TrionDown if rngs[n].random() * (down + up) < down else LevelIndex.TrionUp
                psi[n] = 0
                psi[n, level] = 1.0
                self._redraw(n, rngs, r)

    def run(self, seed: int, start: int, count: int):
        rngs = [trajectory_rng(seed, start + n) for n in range(count)]
        psi = np.zeros((count, 4), dtype=complex)
        det = np.zeros(count)
        r = np.zeros(count)
        noise: Dict[Tuple[int, str], float] = {}
        fixed = _INITIAL_LEVELS.get(self.initial)
        for n, rng in enumerate(rngs):
            det[n] = _ground_detuning_sample(rng, self.params)
            if fixed is None:
                psi[n, LevelIndex.SpinDown if rng.random() < 0.5 else LevelIndex.SpinUp] = 1.0
            else:
                psi[n, fixed] = 1.0
            if self.imp.power_noise > 0:
                for pulse in self.rotations:
                    noise[(n, pulse.name)] = rng.standard_normal()
            r[n] = rng.random()
        log: List[Tuple[int, float, int]] = []
        resets = np.zeros(count, dtype=np.int64)
        points = _timeline(self.seq)
        for a, b in zip(points[:-1], points[1:]):
            for pulse in self.seq.pulses:
                if pulse.t0 == a and pulse.kind is PulseKind.Reset:
                    self._reset(psi, r, rngs, resets)
                elif pulse.t0 == a and pulse.kind is PulseKind.Rotate:
                    self._rotate(pulse, psi, r, rngs, noise)
            if b <= a:
                continue
            drive = _active_drive(self.seq, a, b)
            if drive is None:
                psi = self._free(a, b, psi, r, det, rngs, log)
            else:
                psi = self._driven(drive, a, b, psi, r, det, rngs, log)
        final = np.zeros(count, dtype=np.int8)
        for n in range(count):
            weights = np.abs(psi[n]) ** 2
            cumulative = np.cumsum(weights)
            final[n] = min(int(np.searchsorted(cumulative, rngs[n].random() * cumulative[-1], side='right')), 3)
        if log:
            idx, times, ks = (np.array(v) for v in zip(*log))
        else:
            idx, times, ks = np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64)
        table = EmissionTable(start + idx.astype(np.int64), times.astype(float), self.jump_channel[ks],
                              self.origin(times), self.jump_port[ks], self.channels, self.seq.period, count)
        return table, final, resets


def run_batch(seed: int, seq: Sequence, params: SystemParams, imperfections: Optional[ImperfectionConfig] = None,
              n_trajectories: int = 1, start: int = 0, initial: str = 'mixed',
              calibration: Optional[RotationCalibration] = None, dt: Optional[float] = None,
              threads: int = 1) -> BatchResult:
    """Runs ``n_trajectories`` independent cycles starting at index ``start``.

    Args:
        seed: master seed; trajectory ``i`` uses the stream ``(seed, i)``.
        seq: sequence without open scan variables.
        params: system parameters.
        imperfections: control imperfections and photon unraveling.
        n_trajectories: number of cycles.
        start: index of the first trajectory.
        initial: spin state at the start of each cycle, ``mixed`` draws
            |↓⟩ or |↑⟩ with probability ½.
        calibration: rotation power calibration for ``power_mw`` pulses.
        dt: RK4 step inside drive pulses, ``default_dt`` if omitted.
        threads: worker threads; the result does not depend on it.

    Returns:
        BatchResult: sorted emission table and final projective outcomes.
    """
    if n_trajectories < 1:
        raise InvalidParameter('trajectories must be ≥ 1')
    if seq.scans:
        raise InvalidParameter('sequence still has scan variables, call Sequence.at() first')
    engine = _JumpEngine(seq, params, imperfections or ImperfectionConfig(),
                         calibration or RotationCalibration(), dt, initial)
    chunks = [(start + k, min(CHUNK_SIZE, start + n_trajectories - (start + k)))
              for k in range(0, n_trajectories, CHUNK_SIZE)]
    logger.debug('Running %d trajectories in %d chunk(s), dt=%g ns', n_trajectories, len(chunks), engine.dt)

    def work(chunk):
        first, count = chunk
        result = engine.run(seed, first, count)
        logger.debug('Chunk %d..%d done', first, first + count - 1)
        return result

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(chunk) for chunk in chunks]
    table = EmissionTable.concat([res[0] for res in results])
    return BatchResult(table, np.concatenate([res[1] for res in results]),
                       np.concatenate([res[2] for res in results]), seed, start)


def run_trajectory(seed: int, seq: Sequence, params: SystemParams,
                   imperfections: Optional[ImperfectionConfig] = None, index: int = 0,
                   **kwargs) -> TrajectoryResult:
    batch = run_batch(seed, seq, params, imperfections, 1, start=index, **kwargs)
    events = batch.table.events()
    record: List[Tuple[float, Optional[LevelIndex]]] = []
    for event in events:
        record.append((event.t_phot, None if event.port else event.channel.target))
    record.append((seq.period, LevelIndex(int(batch.final_levels[0]))))
    return TrajectoryResult(events, record, seed)


# ---------------------------------------------------------------------------
# Master equation

def liouvillian(H: np.ndarray, jumps: SequenceType[np.ndarray] = ()) -> np.ndarray:
    """Row-major vectorised Lindblad generator, vec(AρB) = (A ⊗ Bᵀ) vec(ρ)."""
    identity = np.eye(H.shape[0])
    L = -1j * (np.kron(H, identity) - np.kron(identity, H.T))
    for J in jumps:
        JdJ = J.conj().T @ J
        L = L + np.kron(J, J.conj()) - 0.5 * np.kron(JdJ, identity) - 0.5 * np.kron(identity, JdJ.T)
    return L


def _unitary_superop(U):
    return np.kron(U, U.conj())


def _vec(rho):
    return np.asarray(rho, dtype=complex).reshape(-1)


def _unvec(v):
    return v.reshape(4, 4)


_TRACE = _vec(np.eye(4))


def _populate(levels_weights) -> np.ndarray:
    rho = np.zeros((4, 4), dtype=complex)
    for level, weight in levels_weights:
        rho[level, level] = weight
    return _vec(rho)


class MasterModel:
    """Superoperator view of a sequence for one quasi-static detuning.

    Segment propagators are cached, which makes scans that change only a few
    segments cheap.
    """

    def __init__(self, seq: Sequence, params: SystemParams, imperfections: Optional[ImperfectionConfig] = None,
                 calibration: Optional[RotationCalibration] = None, dt: Optional[float] = None,
                 ground_detuning: float = 0.0):
        self.seq = seq
        self.params = params
        self.imp = imperfections or ImperfectionConfig()
        self.calibration = calibration or RotationCalibration()
        self.dt = dt or default_dt(seq, params)
        self.channels = build_channels(params)
        self.jumps = [j.operator for j in jump_operators(params)]
        self.ground_detuning = ground_detuning
        self._free: Dict[Tuple, np.ndarray] = {}
        self.Lc = {}
        identity = np.eye(4)
        for p in seq.of_kind(PulseKind.Drive):
            Hc = _coupling(self.channels, p)
            self.Lc[p.name] = -1j * (np.kron(Hc, identity) - np.kron(identity, Hc.T))
        self.angles = _rotation_angles(seq, self.calibration)
        self._cache: Dict[Tuple, Tuple[np.ndarray, np.ndarray]] = {}

    def free_generator(self, t: float) -> np.ndarray:
        """Drive-free Liouvillian in the frame of the segment starting at ``t``."""
        frame = _frame_at(self.seq, self.channels, t)
        key = _frame_key(frame)
        if key not in self._free:
            H0 = hamiltonian(self.params, frame, ground_detuning=self.ground_detuning)
            self._free[key] = liouvillian(H0, self.jumps)
        return self._free[key]

    def generator(self, t: float, pulse: Optional[Pulse], L0: np.ndarray) -> np.ndarray:
        if pulse is None:
            return L0
        return L0 + _shape_value(pulse, t) * self.Lc[pulse.name]

    def emission_functional(self, labels: Optional[SequenceType[str]] = None) -> np.ndarray:
        """Row vector e with photon rate = e · vec(ρ)."""
        e = np.zeros(16)
        for channel in self.channels:
            if labels is None or channel.label in labels:
                e[channel.source * 4 + channel.source] += channel.rate
        return e

    def instant(self, t: float) -> Optional[np.ndarray]:
        """Superoperator of the instantaneous events (reset, rotations) at ``t``."""
        S = None
        for pulse in self.seq.pulses:
            if pulse.t0 != t:
                continue
            if pulse.kind is PulseKind.Reset:
                target = _populate([(LevelIndex.TrionDown, 0.5), (LevelIndex.TrionUp, 0.5)])
                step = np.outer(target, _TRACE)
            elif pulse.kind is PulseKind.Rotate:
                U = rotation_matrix(self.angles[pulse.name], self.imp.rotation_tilt)
                step = _unitary_superop(U)
                p = self.imp.rotation_excitation
                if p > 0:
                    step = ((1 - p) * np.eye(16) + p * _excitation_superop()) @ step
            else:
                continue
            S = step if S is None else step @ S
        return S

    def segment(self, a: float, b: float) -> Tuple[np.ndarray, np.ndarray]:
        """Propagator P and its time integral J over [a, b)."""
        pulse = _active_drive(self.seq, a, b)
        key = (a, b, pulse)
        if key in self._cache:
            return self._cache[key]
        L0 = self.free_generator(a)
        T = b - a
        if pulse is None or pulse.shape is PulseShape.Square:
            L = self.generator(a, pulse, L0)
            block = np.zeros((32, 32), dtype=complex)
            block[:16, :16] = L * T
            block[:16, 16:] = np.eye(16) * T
            E = scipy.linalg.expm(block)
            result = E[:16, :16], E[:16, 16:]
        else:
            result = self._rk4_segment(a, b, pulse, L0)
        self._cache[key] = result
        return result

    def _rk4_segment(self, a, b, pulse, L0):
        steps = max(1, int(math.ceil((b - a) / self.dt - 1e-9)))
        h = (b - a) / steps
        identity = np.eye(16)
        P = identity.astype(complex)
        J = np.zeros((16, 16), dtype=complex)
        for s in range(steps):
            t = a + s * h
            L1, L2, L3 = (self.generator(t, pulse, L0), self.generator(t + h / 2, pulse, L0),
                          self.generator(t + h, pulse, L0))
            k1 = L1
            k2 = L2 @ (identity + 0.5 * h * k1)
            k3 = L2 @ (identity + 0.5 * h * k2)
            k4 = L3 @ (identity + h * k3)
            P_next = (identity + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)) @ P
            J += 0.5 * h * (P + P_next)
            P = P_next
        return P, J

    def propagate(self, rho: np.ndarray, t_from: float, t_to: float, windows=(), labels=None):
        """Propagates vec(ρ) from ``t_from`` to ``t_to``.

        Instantaneous events at ``t_from`` are applied, events at ``t_to``
        are not. Returns the final vec(ρ) and the expected photon numbers
        emitted inside each of ``windows``.
        """
        cuts = [t_from, t_to]
        for w0, w1 in windows:
            cuts += [w0, w1]
        points = _timeline(self.seq, cuts)
        points = points[(points >= t_from) & (points <= t_to)]
        e = self.emission_functional(labels)
        photons = np.zeros(len(windows))
        for a, b in zip(points[:-1], points[1:]):
            S = self.instant(a)
            if S is not None:
                rho = S @ rho
            if b <= a:
                continue
            P, J = self.segment(float(a), float(b))
            for k, (w0, w1) in enumerate(windows):
                if w0 <= a and b <= w1:
                    photons[k] += (e @ (J @ rho)).real
            rho = P @ rho
        return rho, photons


def _excitation_superop() -> np.ndarray:
    S = np.zeros((16, 16), dtype=complex)
    for g, e in ((LevelIndex.SpinDown, LevelIndex.TrionDown), (LevelIndex.SpinUp, LevelIndex.TrionUp)):
        S[e * 4 + e, g * 4 + g] = 1.0
    for i in (2, 3):
        for j in (2, 3):
            S[i * 4 + j, i * 4 + j] = 1.0
    return S


@dataclass
class MasterResult:
    times: np.ndarray
    states: np.ndarray
    channels: List[TransitionChannel]

    def populations(self) -> np.ndarray:
        return np.real(np.einsum('tii->ti', self.states))

    def intensity(self, label: str) -> np.ndarray:
        """Emission rate (photons/ns) of one channel versus time."""
        channel = channel_by_label(self.channels, label)
        return channel.rate * self.populations()[:, channel.source]

    def total_intensity(self) -> np.ndarray:
        return sum(self.intensity(c.label) for c in self.channels)


def evolve_master(initial: Union[QuantumState, str], seq: Sequence, params: SystemParams, dt: Optional[float] = None,
                  imperfections: Optional[ImperfectionConfig] = None,
                  calibration: Optional[RotationCalibration] = None, ground_detuning: float = 0.0,
                  check_every: int = 200) -> MasterResult:
    """Integrates the Lindblad equation over one cycle with fixed-step RK4.

    Raises:
        StepTooLarge: the density matrix lost positivity beyond −1e-6.
    """
    if seq.scans:
        raise InvalidParameter('sequence still has scan variables, call Sequence.at() first')
    limit = default_dt(seq, params)
    dt = dt or limit
    if dt > limit * (1 + 1e-12):
        logger.warning('dt=%g ns exceeds the recommended step %g ns', dt, limit)
    model = MasterModel(seq, params, imperfections, calibration, dt, ground_detuning)
    rho = _vec(initial_density(initial))
    times, states = [0.0], [rho]
    points = _timeline(seq)
    counter = 0
    for a, b in zip(points[:-1], points[1:]):
        S = model.instant(a)
        if S is not None:
            rho = S @ rho
            states[-1] = rho
        if b <= a:
            continue
        pulse = _active_drive(seq, a, b)
        L0 = model.free_generator(a)
        steps = max(1, int(math.ceil((b - a) / dt - 1e-9)))
        h = (b - a) / steps
        for s in range(steps):
            t = a + s * h
            L1, L2, L3 = (model.generator(t, pulse, L0), model.generator(t + h / 2, pulse, L0),
                          model.generator(t + h, pulse, L0))
            k1 = L1 @ rho
            k2 = L2 @ (rho + 0.5 * h * k1)
            k3 = L2 @ (rho + 0.5 * h * k2)
            k4 = L3 @ (rho + h * k3)
            rho = rho + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            times.append(t + h)
            states.append(rho)
            counter += 1
            if counter % check_every == 0:
                _check_positivity(rho, t + h)
    _check_positivity(rho, seq.period)
    return MasterResult(np.array(times), np.array(states).reshape(-1, 4, 4), model.channels)


def _check_positivity(rho_vec, t):
    rho = _unvec(rho_vec)
    smallest = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if smallest < -1e-6:
        raise StepTooLarge(f'density matrix eigenvalue {smallest:.3g} at t={t:.4f} ns, reduce dt')


# ---------------------------------------------------------------------------
# Ensembles over the quasi-static spin detuning

def dephasing_nodes(params: SystemParams, n_nodes: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes (rad/ns) and weights of the quasi-static detuning."""
    if math.isinf(params.dephasing_T2star):
        return np.zeros(1), np.ones(1)
    if params.dephasing_shape is DephasingShape.Gaussian:
        x, w = np.polynomial.hermite_e.hermegauss(n_nodes or 41)
        return x * math.sqrt(2) / params.dephasing_T2star, w / w.sum()
    n = n_nodes or 201
    q = (np.arange(n) + 0.5) / n
    return np.tan(math.pi * (q - 0.5)) / params.dephasing_T2star, np.full(n, 1.0 / n)


def integrated_emission(seq: Sequence, params: SystemParams, window: Tuple[float, float],
                        labels: Optional[SequenceType[str]] = None, initial='mixed',
                        imperfections=None, calibration=None, dt=None, ground_detuning: float = 0.0,
                        model: Optional[MasterModel] = None) -> float:
    """Expected number of photons emitted in ``window`` (from the master equation)."""
    model = model or MasterModel(seq, params, imperfections, calibration, dt, ground_detuning)
    _, photons = model.propagate(_vec(initial_density(initial)), 0.0, seq.period, [window], labels)
    return float(photons[0])


def ensemble_integrated_emission(seq: Sequence, params: SystemParams, window: Tuple[float, float],
                                 labels=None, initial='mixed', imperfections=None, calibration=None,
                                 dt=None, n_nodes: Optional[int] = None) -> float:
    """``integrated_emission`` averaged over the quasi-static dephasing."""
    nodes, weights = dephasing_nodes(params, n_nodes)
    return float(sum(w * integrated_emission(seq, params, window, labels, initial, imperfections, calibration,
                                             dt, ground_detuning=d) for d, w in zip(nodes, weights)))


def coincidence_density(seq: Sequence, params: SystemParams, times, readout_window: Tuple[float, float],
                        port: int = +1, labels: Optional[SequenceType[str]] = None, initial='mixed',
                        imperfections=None, calibration=None, dt=None, ensemble: bool = True,
                        readout_labels=None) -> np.ndarray:
    """Rate density (1/ns) of detecting a photon at ``times`` followed by a
    readout photon.

    With ``labels`` the photon is detected frequency resolved on those
    channels, otherwise through the erased-detection ``port``.
    """
    times = np.sort(np.asarray(times, dtype=float))
    if labels is None:
        ops = [j.operator for j in jump_operators(params, Unraveling.Erased) if j.port == port]
    else:
        ops = [j.operator for j in jump_operators(params) if j.channel.label in labels]
    jump = sum(np.kron(L, L.conj()) for L in ops)
    nodes, weights = dephasing_nodes(params) if ensemble else (np.zeros(1), np.ones(1))
    density = np.zeros(len(times))
    for d, w in zip(nodes, weights):
        model = MasterModel(seq, params, imperfections, calibration, dt, d)
        rho = _vec(initial_density(initial))
        t_prev = 0.0
        for k, t in enumerate(times):
            rho, _ = model.propagate(rho, t_prev, t)
            t_prev = t
            _, photons = model.propagate(jump @ rho, t, readout_window[1], [readout_window], readout_labels)
            density[k] += w * photons[0]
    return density


def conditional_spin_state(params: SystemParams, t_phot: float, t_rot: float, port: int = +1) -> QuantumState:
    """Spin state at ``t_rot`` after an erased detection at ``t_phot``.

    The emitter starts in |↓↑⇓⟩ (ideal π pulse from |↓⟩).
    """
    psi = QuantumState.basis(LevelIndex.TrionDown).data
    op = next(j.operator for j in jump_operators(params, Unraveling.Erased)
              if j.port == port and j.channel.source == LevelIndex.TrionDown)
    psi = op @ psi
    psi = psi / np.linalg.norm(psi)
    U = scipy.linalg.expm(-1j * hamiltonian(params, []) * (t_rot - t_phot))
    return QuantumState(U @ psi)


# ---------------------------------------------------------------------------
# Closed-form oracles

def spin_pumping_oracle(t_pump: float, pump_rate: float, params: SystemParams) -> float:
    """P(|↑⟩) after optical pumping of duration ``t_pump`` (rate equations).

    P↓' = −W P↓ + Γ p↓ P_T,  P_T' = W P↓ − Γ P_T,  P↑' = Γ p↑ P_T,
    starting from (½, 0, ½).
    """
    if pump_rate < 0:
        raise InvalidParameter('pump rate must be non-negative')
    if t_pump <= 0 or pump_rate == 0:
        return 0.5
    gamma = params.decay_rate
    p_down, p_up = params.branching[LevelIndex.TrionDown]
    A = np.array([[-pump_rate, gamma * p_down], [pump_rate, -gamma]])
    eigenvalues, V = np.linalg.eig(A)
    coeffs = np.linalg.solve(V, np.array([0.5, 0.0]))
    # ∫0^t exp(λs) ds = expm1(λt)/λ, which tends to t for λ → 0 (no decay into |↑⟩)
    small = np.abs(eigenvalues * t_pump) < 1e-12
    growth = np.where(small, t_pump, np.expm1(eigenvalues * t_pump) / np.where(small, 1.0, eigenvalues))
    integral = V @ (coeffs * growth)
    return float(0.5 + gamma * p_up * integral[1].real)


def initialization_limit(n_cycles: int) -> float:
    """Spin preparation probability after ``n`` completed emission cycles."""
    return 1.0 - 0.5 ** (n_cycles + 1)


def ramsey_envelope(delta_tau, params: SystemParams):
    delta_tau = np.abs(np.asarray(delta_tau, dtype=float))
    if math.isinf(params.dephasing_T2star):
        return np.ones_like(delta_tau)
    if params.dephasing_shape is DephasingShape.Gaussian:
        return np.exp(-(delta_tau / params.dephasing_T2star) ** 2)
    return np.exp(-delta_tau / params.dephasing_T2star)


def ramsey_oracle(delta_tau, theta: float, params: SystemParams):
    """P(|↓⟩) after R_x(θ), free precession Δτ, R_x(θ), starting from |↑⟩."""
    amplitude = math.sin(theta) ** 2
    value = amplitude * (1 + ramsey_envelope(delta_tau, params) * np.cos(params.omega_z * np.asarray(delta_tau))) / 2
    return float(value) if np.ndim(value) == 0 else value
