"""Four-level trion system: levels, parameters, transitions and operators.

Levels are ordered ``SpinDown, SpinUp, TrionDown, TrionUp``. All frequencies are
angular frequencies in rad/ns, all times in ns.

Energies in the rotating frame (relative to the optical line center)::

    TrionUp    |↓↑⇑⟩   +δ_h/2
    TrionDown  |↓↑⇓⟩   −δ_h/2
    SpinDown   |↓⟩     +δ_e/2
    SpinUp     |↑⟩     −δ_e/2     (lower ground state)

A photon emitted into |↑⟩ is therefore the blue branch of its trion pair,
a photon emitted into |↓⟩ the red one.
"""
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DriveConflict, InvalidParameter

logger = logging.getLogger('SpinPhotonSim.system')

PLANCK_GHZ_PER_UEV = 0.241798924  # E/h in GHz for 1 μeV


def ueV_to_rad_per_ns(energy_ueV: float) -> float:
    return 2 * math.pi * PLANCK_GHZ_PER_UEV * energy_ueV


def ghz_to_rad_per_ns(frequency_ghz: float) -> float:
    return 2 * math.pi * frequency_ghz


class LevelIndex(enum.IntEnum):
    SpinDown = 0
    SpinUp = 1
    TrionDown = 2
    TrionUp = 3


GROUND_LEVELS = (LevelIndex.SpinDown, LevelIndex.SpinUp)
TRION_LEVELS = (LevelIndex.TrionDown, LevelIndex.TrionUp)


class Polarization(enum.Enum):
    H = 'H'
    V = 'V'


class Branch(enum.Enum):
    Red = 'red'
    Blue = 'blue'
    Other = 'other'


class DephasingShape(enum.Enum):
    Gaussian = 'gaussian'
    Exponential = 'exponential'


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the emitter.

    ``branching`` maps each trion level to the probability of decaying into
    (SpinDown, SpinUp).
    """
    electron_splitting: float
    hole_splitting: float
    decay_rate: float
    branching: Dict[LevelIndex, Tuple[float, float]] = field(default_factory=lambda: {
        LevelIndex.TrionDown: (0.5, 0.5),
        LevelIndex.TrionUp: (0.5, 0.5),
    })
    dephasing_T2star: float = math.inf
    dephasing_shape: DephasingShape = DephasingShape.Gaussian
    center_wavelength: float = 1550.0

    def __post_init__(self):
        if self.electron_splitting < 0 or self.hole_splitting < 0:
            raise InvalidParameter('Zeeman splittings must be non-negative')
        if not self.decay_rate > 0:
            raise InvalidParameter('decay_rate must be positive')
        if not self.dephasing_T2star > 0:
            raise InvalidParameter('dephasing_T2star must be positive')
        if not self.center_wavelength > 0:
            raise InvalidParameter('center_wavelength must be positive')
        for level in TRION_LEVELS:
            if level not in self.branching:
                raise InvalidParameter(f'branching missing for {level.name}')
            p_down, p_up = self.branching[level]
            if p_down < 0 or p_up < 0 or abs(p_down + p_up - 1.0) > 1e-12:
                raise InvalidParameter(f'branching of {level.name} must sum to 1')

    @property
    def omega_z(self) -> float:
        return self.electron_splitting

    @property
    def lifetime(self) -> float:
        return 1.0 / self.decay_rate

    def replace(self, **changes) -> 'SystemParams':
        return replace(self, **changes)

    @classmethod
    def from_lab_units(cls, electron_splitting_ueV: float, hole_splitting_ueV: float,
                       lifetime_ns: float, **kwargs) -> 'SystemParams':
        return cls(electron_splitting=ueV_to_rad_per_ns(electron_splitting_ueV),
                   hole_splitting=ueV_to_rad_per_ns(hole_splitting_ueV),
                   decay_rate=1.0 / lifetime_ns, **kwargs)

    def level_energies(self) -> np.ndarray:
        return np.array([self.electron_splitting / 2, -self.electron_splitting / 2,
                         -self.hole_splitting / 2, self.hole_splitting / 2])


@dataclass(frozen=True)
class TransitionChannel:
    label: str
    source: LevelIndex
    target: LevelIndex
    polarization: Polarization
    frequency_offset: float
    branch_label: Branch
    rate: float


def build_channels(params: SystemParams) -> List[TransitionChannel]:
    """Returns the four radiative channels ``T1..T4``.

    The labels follow the order TrionDown→SpinDown, TrionDown→SpinUp,
    TrionUp→SpinDown, TrionUp→SpinUp. For δ_h > δ_e this is also the order of
    increasing photon frequency.
    """
    energies = params.level_energies()
    polarizations = {
        (LevelIndex.TrionDown, LevelIndex.SpinDown): Polarization.V,
        (LevelIndex.TrionDown, LevelIndex.SpinUp): Polarization.H,
        (LevelIndex.TrionUp, LevelIndex.SpinDown): Polarization.H,
        (LevelIndex.TrionUp, LevelIndex.SpinUp): Polarization.V,
    }
    channels = []
    for source in TRION_LEVELS:
        for target, probability in zip(GROUND_LEVELS, params.branching[source]):
            if params.electron_splitting == 0:
                branch = Branch.Other
            else:
                branch = Branch.Red if target == LevelIndex.SpinDown else Branch.Blue
            channels.append(TransitionChannel(
                label=f'T{len(channels) + 1}',
                source=source,
                target=target,
                polarization=polarizations[(source, target)],
                frequency_offset=float(energies[source] - energies[target]),
                branch_label=branch,
                rate=params.decay_rate * probability,
            ))
    return channels


def channel_by_label(channels: Sequence[TransitionChannel], label: str) -> Optional[TransitionChannel]:
    for channel in channels:
        if channel.label == label:
            return channel
    return None


@dataclass(frozen=True)
class ActiveDrive:
    """A laser drive acting at one instant.

    Attributes:
        channel: driven transition.
        rabi: Rabi frequency Ω(t) in rad/ns, already scaled by the envelope.
        detuning: laser detuning Δ from the transition in rad/ns.
    """
    channel: TransitionChannel
    rabi: float
    detuning: float = 0.0

    @property
    def laser_offset(self) -> float:
        return self.channel.frequency_offset + self.detuning


def drive_frame(drives: Sequence[ActiveDrive]) -> Dict[LevelIndex, float]:
    """Laser frequency (relative to line center) defining each trion's frame."""
    frame: Dict[LevelIndex, float] = {}
    detunings: Dict[str, float] = {}
    for drive in drives:
        label = drive.channel.label
        if label in detunings and detunings[label] != drive.detuning:
            raise DriveConflict(f'two drives on {label} with different detunings')
        detunings[label] = drive.detuning
        source = drive.channel.source
        if source in frame and frame[source] != drive.laser_offset:
            raise DriveConflict(f'{source.name} is coupled by two laser frequencies')
        frame[source] = drive.laser_offset
    return frame


def hamiltonian(params: SystemParams, drives: Sequence[ActiveDrive], t: float = 0.0,
                ground_detuning: float = 0.0) -> np.ndarray:
    """Hermitian 4×4 Hamiltonian in the frame rotating with the drive laser.

    Args:
        params: system parameters.
        drives: drives active at ``t`` (envelope already applied to ``rabi``).
        t: time in ns. The rotating-wave Hamiltonian is time independent apart
            from the envelopes, so ``t`` only documents the evaluation instant.
        ground_detuning: quasi-static offset added to the ground splitting.

    Returns:
        numpy.ndarray: complex matrix of shape (4, 4).
    """
    energies = params.level_energies()
    energies[LevelIndex.SpinDown] += ground_detuning / 2
    energies[LevelIndex.SpinUp] -= ground_detuning / 2
    for level, laser_offset in drive_frame(drives).items():
        energies[level] -= laser_offset
    H = np.diag(energies).astype(complex)
    for drive in drives:
        g, e = drive.channel.target, drive.channel.source
        H[g, e] += drive.rabi / 2
        H[e, g] += drive.rabi / 2
    return H


@dataclass(frozen=True)
class QuantumState:
    """State vector (shape (4,)) or density matrix (shape (4, 4))."""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        object.__setattr__(self, 'data', data)
        if data.shape == (4,):
            norm = np.vdot(data, data).real
            if abs(norm - 1.0) > 1e-9:
                raise InvalidParameter(f'state vector norm {norm} differs from 1')
        elif data.shape == (4, 4):
            if np.max(np.abs(data - data.conj().T)) > 1e-12:
                raise InvalidParameter('density matrix is not Hermitian')
            trace = np.trace(data).real
            if abs(trace - 1.0) > 1e-9:
                raise InvalidParameter(f'density matrix trace {trace} differs from 1')
            smallest = np.linalg.eigvalsh(data).min()
            if smallest < -1e-9:
                raise InvalidParameter(f'density matrix has eigenvalue {smallest}')
        else:
            raise InvalidParameter(f'unsupported state shape {data.shape}')

    @property
    def is_vector(self) -> bool:
        return self.data.ndim == 1

    @classmethod
    def basis(cls, level: LevelIndex) -> 'QuantumState':
        psi = np.zeros(4, dtype=complex)
        psi[level] = 1.0
        return cls(psi)

    @classmethod
    def from_amplitudes(cls, amplitudes: Dict[LevelIndex, complex]) -> 'QuantumState':
        psi = np.zeros(4, dtype=complex)
        for level, amplitude in amplitudes.items():
            psi[level] = amplitude
        return cls(psi / np.linalg.norm(psi))

    @classmethod
    def mixed_ground(cls) -> 'QuantumState':
        return cls(np.diag([0.5, 0.5, 0.0, 0.0]).astype(complex))

    def density(self) -> np.ndarray:
        if self.is_vector:
            return np.outer(self.data, self.data.conj())
        return self.data

    def to_density(self) -> 'QuantumState':
        return QuantumState(self.density())

    def populations(self) -> np.ndarray:
        if self.is_vector:
            return np.abs(self.data) ** 2
        return np.diag(self.data).real.copy()

    def apply(self, U: np.ndarray) -> 'QuantumState':
        if self.is_vector:
            return QuantumState(U @ self.data)
        return QuantumState(U @ self.data @ U.conj().T)


def rotation_matrix(theta: float, tilt: float = 0.0) -> np.ndarray:
    """exp(−iθ n·σ/2) on the spin subspace, identity on the trions.

    ``n = (cos tilt, 0, sin tilt)``; ``tilt = 0`` is a rotation about x.
    σ_z is taken as |↑⟩⟨↑| − |↓⟩⟨↓|.
    """
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    nx, nz = math.cos(tilt), math.sin(tilt)
    U = np.eye(4, dtype=complex)
    down, up = LevelIndex.SpinDown, LevelIndex.SpinUp
    U[up, up] = c - 1j * s * nz
    U[down, down] = c + 1j * s * nz
    U[up, down] = -1j * s * nx
    U[down, up] = -1j * s * nx
    return U


def rotate_spin(state: QuantumState, theta: float, tilt: float = 0.0) -> QuantumState:
    return state.apply(rotation_matrix(theta, tilt))


class Unraveling(enum.Enum):
    """How emitted photons are measured.

    ``frequency``: each channel is recorded separately (frequency resolved).
    ``erased``: detection erases which-path information; each trion has two
    output ports projecting onto the red ± i·blue superpositions.
    """
    Frequency = 'frequency'
    Erased = 'erased'


@dataclass(frozen=True)
class JumpOperator:
    operator: np.ndarray
    channel: TransitionChannel
    port: int = 0


def jump_operators(params: SystemParams, unraveling: Unraveling = Unraveling.Frequency) -> List[JumpOperator]:
    """Collapse operators of the chosen unraveling.

    Both unravelings produce the same Lindblad dissipator. In the erased case
    the channel attached to an operator is the red channel of its trion, and
    ``port`` is +1 or −1.
    """
    channels = build_channels(params)
    if unraveling is Unraveling.Frequency:
        ops = []
        for channel in channels:
            L = np.zeros((4, 4), dtype=complex)
            L[channel.target, channel.source] = math.sqrt(channel.rate)
            ops.append(JumpOperator(L, channel))
        return ops
    ops = []
    for source in TRION_LEVELS:
        p_down, p_up = params.branching[source]
        red = next(c for c in channels if c.source == source and c.target == LevelIndex.SpinDown)
        for port in (+1, -1):
            L = np.zeros((4, 4), dtype=complex)
            L[LevelIndex.SpinDown, source] = math.sqrt(params.decay_rate * p_down / 2)
            L[LevelIndex.SpinUp, source] = port * 1j * math.sqrt(params.decay_rate * p_up / 2)
            ops.append(JumpOperator(L, red, port))
    return ops


def bloch_vector(state: QuantumState) -> np.ndarray:
    """Spin Bloch vector with |↓⟩ at the north pole.

    The ground-subspace block is normalised, so the vector has unit length
    for any pure spin state even when the trions carry population.
    """
    rho = state.density()
    down, up = LevelIndex.SpinDown, LevelIndex.SpinUp
    weight = (rho[down, down] + rho[up, up]).real
    if weight <= 0:
        return np.zeros(3)
    coherence = rho[up, down] / weight
    return np.array([2 * coherence.real, 2 * coherence.imag,
                     (rho[down, down] - rho[up, up]).real / weight])
