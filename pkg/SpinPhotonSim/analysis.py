"""Correlation analysis and fits on time-tag streams.

Times of tags are integer ps; windows and fit abscissae are in ns unless a
name says otherwise.
"""
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .detection import FWHM_TO_SIGMA, TagStream
from .dynamics import EmissionTable, spin_pumping_oracle
from .errors import (AnalysisError, FitDiverged, InsufficientCounts, InsufficientPoints, NoConditioningEvents,
                     PeriodUnderResolved, PhaseInconsistent, ZeroDenominator)
from .fitting import FitResult, least_squares_fit
from .system import DephasingShape, LevelIndex, SystemParams

logger = logging.getLogger('SpinPhotonSim.analysis')

MIN_NORMALIZATION_COUNTS = 100
BOOTSTRAP_RESAMPLES = 200


class Normalization(enum.Enum):
    Raw = 'raw'
    PerTrigger = 'per_trigger'
    PoissonLevel = 'poisson_level'


@dataclass
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    normalization: Normalization = Normalization.Raw
    n_triggers: int = 0
    poisson_level: float = 0.0

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        assert len(self.counts) == len(self.bin_edges) - 1

    @property
    def scale(self) -> float:
        if self.normalization is Normalization.PerTrigger:
            return 1.0 / self.n_triggers
        if self.normalization is Normalization.PoissonLevel:
            return 1.0 / self.poisson_level
        return 1.0

    @property
    def normalized(self) -> np.ndarray:
        return self.counts * self.scale

    @property
    def centers_ns(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1]) / 1000.0

    @property
    def bin_width_ns(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0]) / 1000.0

    def __add__(self, other: 'Histogram') -> 'Histogram':
        if not np.array_equal(self.bin_edges, other.bin_edges):
            raise AnalysisError('histograms have different binning')
        return Histogram(self.bin_edges, self.counts + other.counts, self.normalization,
                         self.n_triggers + other.n_triggers, self.poisson_level)

    def write_csv(self, path):
        with open(path, 'w', newline='\n') as f:
            f.write('bin_start_ps,bin_end_ps,count,normalized\n')
            for start, end, count, value in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts,
                                                self.normalized):
                f.write(f'{start:.0f},{end:.0f},{count},{float(value)!r}\n')


def _in_window(tags: TagStream, window: Tuple[float, float]) -> np.ndarray:
    lo, hi = window
    return (tags.t_ps >= lo * 1000.0) & (tags.t_ps < hi * 1000.0)


def window_counts(tags: TagStream, window: Tuple[float, float], channel=None,
                  cycles: Optional[np.ndarray] = None) -> np.ndarray:
    """Tags per cycle inside ``window`` (ns); restricted to ``cycles`` if given."""
    tags = tags.of_channel(channel)
    counts = np.bincount(tags.cycle[_in_window(tags, window)], minlength=tags.n_cycles)
    return counts if cycles is None else counts[np.asarray(cycles, dtype=np.int64)]


def _bin_edges(window: Tuple[float, float], bin_ps: float) -> np.ndarray:
    lo, hi = window[0] * 1000.0, window[1] * 1000.0
    n_bins = max(1, int(round((hi - lo) / bin_ps)))
    return lo + bin_ps * np.arange(n_bins + 1)


def histogram(tags: TagStream, window: Tuple[float, float], bin_ps: float = 50.0, channel=None,
              normalization: Normalization = Normalization.Raw) -> Histogram:
    """Unconditional arrival-time histogram over all cycles."""
    tags = tags.of_channel(channel)
    edges = _bin_edges(window, bin_ps)
    counts, _ = np.histogram(tags.t_ps, bins=edges)
    return Histogram(edges, counts, normalization, n_triggers=tags.n_cycles)


def conditional_histogram(ent_tags: TagStream, readout_tags: TagStream, readout_window: Tuple[float, float],
                          bin_ps: float = 10.0, ent_window: Optional[Tuple[float, float]] = None,
                          channel=None, readout_channel=None) -> Histogram:
    """Histogram of ``ent_tags`` restricted to cycles with a readout click.

    Raises:
        NoConditioningEvents: no readout tag falls into ``readout_window``.
    """
    readout_tags = readout_tags.of_channel(readout_channel)
    trigger_cycles = np.unique(readout_tags.cycle[_in_window(readout_tags, readout_window)])
    if len(trigger_cycles) == 0:
        raise NoConditioningEvents()
    ent_tags = ent_tags.of_channel(channel)
    ent_window = ent_window or (0.0, ent_tags.period)
    selected = ent_tags.t_ps[np.isin(ent_tags.cycle, trigger_cycles)]
    edges = _bin_edges(ent_window, bin_ps)
    counts, _ = np.histogram(selected, bins=edges)
    return Histogram(edges, counts, Normalization.PerTrigger, n_triggers=len(trigger_cycles))


def g2_zero(tags: TagStream, window: Tuple[float, float], channels: Tuple[int, int] = (0, 1),
            n_lags: int = 10) -> Tuple[float, float]:
    """Pulsed Hanbury Brown–Twiss g²(0) between two detectors.

    Coincidences within the same cycle are divided by the mean of the
    coincidences at cycle lags ±1..±n_lags.

    Raises:
        InsufficientCounts: the side peaks average fewer than 100 coincidences.
    """
    a = window_counts(tags, window, channels[0]).astype(float)
    b = window_counts(tags, window, channels[1]).astype(float)
    central = float(np.dot(a, b))
    side = []
    for k in range(1, n_lags + 1):
        side.append(float(np.dot(a[:-k], b[k:])))
        side.append(float(np.dot(a[k:], b[:-k])))
    mean_side = float(np.mean(side))
    if mean_side < MIN_NORMALIZATION_COUNTS:
        raise InsufficientCounts(f'side peaks average {mean_side:.1f} coincidences, need ≥ '
                                 f'{MIN_NORMALIZATION_COUNTS}')
    g2 = central / mean_side
    error = math.sqrt(max(central, 1.0)) / mean_side * math.sqrt(1 + central / sum(side))
    logger.debug('g2(0): central %d, side mean %.1f', central, mean_side)
    return g2, error


# ---------------------------------------------------------------------------
# Fidelities

def computational_fidelity(n_red_down: int, n_blue_down: int, n_blue_up: int,
                           n_red_up: int) -> Tuple[float, float]:
    """Mean probability of a correct colour/spin correlation, binomial error.

    Raises:
        ZeroDenominator: one of the two conditioning variants has no counts.
    """
    down, up = n_red_down + n_blue_down, n_blue_up + n_red_up
    if down == 0 or up == 0:
        raise ZeroDenominator('both readout variants need counts')
    p_down, p_up = n_red_down / down, n_blue_up / up
    f1 = 0.5 * p_down + 0.5 * p_up
    error = 0.5 * math.sqrt(p_down * (1 - p_down) / down + p_up * (1 - p_up) / up)
    return f1, error


def fidelity_from_ratios(ratio_down: float, ratio_up: float) -> float:
    """F1 from correct:wrong count ratios such as 16:1 and 29:1."""
    return 0.5 * ratio_down / (ratio_down + 1) + 0.5 * ratio_up / (ratio_up + 1)


def entanglement_bound(f1: float, f2: float, f1_error: float = 0.0,
                       f2_error: float = 0.0) -> Tuple[float, float]:
    """Lower bound (F1 + F2)/2 on the entanglement fidelity."""
    for value in (f1, f2):
        if not 0 <= value <= 1:
            raise AnalysisError(f'fidelity {value} outside [0, 1]')
    return (f1 + f2) / 2, 0.5 * math.hypot(f1_error, f2_error)


@dataclass
class FringeFit:
    visibility_raw: float
    visibility_deconvolved: float
    phase: float
    frequency: float
    decay_time: float
    residual_rms: float
    visibility_error: float = 0.0
    phase_error: float = 0.0
    overshoot: bool = False
    jacobian_error: Optional[float] = None


def jitter_attenuation(omega: float, jitter_fwhm_ps: float) -> float:
    """Visibility factor exp(−ω²σ²/2) of Gaussian timing jitter."""
    sigma = jitter_fwhm_ps * FWHM_TO_SIGMA / 1000.0
    return math.exp(-(omega * sigma) ** 2 / 2)


def _dominant_frequency(t: np.ndarray, y: np.ndarray) -> float:
    dt = t[1] - t[0]
    n = 8 * len(t)
    spectrum = np.abs(np.fft.rfft(y - np.mean(y), n))
    frequencies = 2 * np.pi * np.fft.rfftfreq(n, dt)
    spectrum[0] = 0
    return float(frequencies[np.argmax(spectrum)])


def fit_fringes(hist: Histogram, omega_z: float, jitter_fwhm: float, free_frequency: bool = False) -> FringeFit:
    """Fits O·e^{−(t−t₀)/τ}·[1 + V·sinc(ωb/2)·cos(ωt + φ)] and removes the jitter.

    Args:
        hist: coincidence histogram.
        omega_z: beat frequency in rad/ns (start value if ``free_frequency``).
        jitter_fwhm: detector jitter FWHM in ps.
        free_frequency: fit ω too.

    Raises:
        PeriodUnderResolved: bins wider than a quarter period.
        FitDiverged: no convergence.
    """
    t = hist.centers_ns
    b = hist.bin_width_ns
    if b > (2 * math.pi / omega_z) / 4:
        raise PeriodUnderResolved(f'bin width {b * 1000:.0f} ps exceeds a quarter of the '
                                  f'{2 * math.pi / omega_z * 1000:.0f} ps period')
    y = hist.normalized
    sigma = np.sqrt(np.maximum(hist.counts, 1)) * hist.scale
    t_ref = float(t[0])
    if free_frequency:
        omega_z = _dominant_frequency(t, y) or omega_z

    def model(t, level, rate, a, b_, omega):
        averaging = np.sinc(omega * b / (2 * np.pi))
        return level * np.exp(-rate * (t - t_ref)) * (1 + averaging * (a * np.cos(omega * t) + b_ * np.sin(omega * t)))

    # linear start values for the cosine and sine quadratures
    level0 = max(float(np.mean(y)), 1e-12)
    design = np.column_stack([np.cos(omega_z * t), np.sin(omega_z * t)]) * np.sinc(omega_z * b / (2 * np.pi))
    (a0, b0), *_ = np.linalg.lstsq(design, y / level0 - 1, rcond=None)
    if free_frequency:
        fit = least_squares_fit(model, t, y, [level0, 0.0, a0, b0, omega_z],
                                ('level', 'rate', 'a', 'b', 'omega'), sigma)
        omega = fit['omega']
    else:
        fit = least_squares_fit(lambda t, level, rate, a, b_: model(t, level, rate, a, b_, omega_z), t, y,
                                [level0, 0.0, a0, b0], ('level', 'rate', 'a', 'b'), sigma)
        omega = omega_z
    a, b_ = fit['a'], fit['b']
    visibility = math.hypot(a, b_)
    phase = math.atan2(-b_, a) % (2 * math.pi)
    if visibility > 0:
        visibility_error = math.hypot(a * fit.error('a'), b_ * fit.error('b')) / visibility
        phase_error = math.hypot(b_ * fit.error('a'), a * fit.error('b')) / visibility ** 2
    else:
        visibility_error, phase_error = math.hypot(fit.error('a'), fit.error('b')), math.pi
    factor = 1.0 / jitter_attenuation(omega, jitter_fwhm)
    deconvolved = visibility * factor
    overshoot = deconvolved > 1
    if overshoot:
        logger.warning('Deconvolved visibility %.3f exceeds 1', deconvolved)
    rate = fit['rate']
    residual = y - model(t, fit['level'], rate, a, b_, omega)
    return FringeFit(visibility_raw=visibility, visibility_deconvolved=deconvolved, phase=phase, frequency=omega,
                     decay_time=1.0 / rate if rate > 0 else math.inf,
                     residual_rms=float(np.sqrt(np.mean(residual ** 2)) / fit['level']),
                     visibility_error=visibility_error * factor, phase_error=phase_error, overshoot=overshoot,
                     jacobian_error=fit.jacobian_error)


def superposition_fidelity(fit_plus: FringeFit, fit_minus: FringeFit,
                           phase_tolerance: float = 0.5) -> Tuple[float, float]:
    """F2 = (1 + mean deconvolved visibility)/2 of two π-opposed fringe fits.

    Raises:
        PhaseInconsistent: the two phases are not π apart within tolerance.
    """
    difference = (fit_plus.phase - fit_minus.phase) % (2 * math.pi)
    if abs(difference - math.pi) > phase_tolerance:
        raise PhaseInconsistent(f'phase difference {difference:.3f} rad is not π within {phase_tolerance} rad')
    mean_visibility = 0.5 * (fit_plus.visibility_deconvolved + fit_minus.visibility_deconvolved)
    f2 = (1 + mean_visibility) / 2
    error = 0.25 * math.hypot(fit_plus.visibility_error, fit_minus.visibility_error)
    if f2 > 1:
        logger.warning('F2 = %.3f clamped to 1', f2)
        f2 = 1.0
    return f2, error


@dataclass
class FidelityReport:
    F1: float = math.nan
    F2: float = math.nan
    F_bound: float = math.nan
    F1_error: float = 0.0
    F2_error: float = 0.0
    F_bound_error: float = 0.0
    F1_from_ratios: Optional[float] = None
    visibilities: Dict[str, float] = field(default_factory=dict)
    phases_rad: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    bootstrap_resamples: int = 0

    def __post_init__(self):
        if not math.isnan(self.F1) and not math.isnan(self.F2):
            self.F_bound, self.F_bound_error = entanglement_bound(self.F1, self.F2, self.F1_error, self.F2_error)

    def to_json(self) -> str:
        def clean(value):
            if isinstance(value, float) and not math.isfinite(value):
                return None
            if isinstance(value, dict):
                return {k: clean(v) for k, v in value.items()}
            return value
        data = {'F1_probability': self.F1, 'F2_probability': self.F2, 'F_bound_probability': self.F_bound,
                'F1_error_probability': self.F1_error, 'F2_error_probability': self.F2_error,
                'F_bound_error_probability': self.F_bound_error,
                'F1_from_ratios_probability': self.F1_from_ratios,
                'visibilities': self.visibilities, 'phases_rad': self.phases_rad, 'counts': self.counts,
                'bootstrap_resamples': self.bootstrap_resamples}
        return json.dumps(clean(data), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Calibration fits

@dataclass
class InitializationFit:
    pump_rate: float
    pump_rate_error: float
    pump_durations: np.ndarray
    f_init: np.ndarray
    fit: FitResult


def fit_initialization(pump_durations, normalized_intensity, params: SystemParams,
                       pump_rate_guess: float = 1.0) -> InitializationFit:
    """Fits the pump rate W of the rate-equation model to a readout series.

    The readout intensity, normalised to no pumping, is 2·P(|↓⟩) = 2·(1 − P(|↑⟩)).
    """
    t = np.asarray(pump_durations, dtype=float)
    y = np.asarray(normalized_intensity, dtype=float)

    def model(t, log_rate):
        rate = math.exp(log_rate)
        return np.array([2 * (1 - spin_pumping_oracle(x, rate, params)) for x in t])

    fit = least_squares_fit(model, t, y, [math.log(pump_rate_guess)], ('log_rate',))
    rate = math.exp(fit['log_rate'])
    f_init = np.array([spin_pumping_oracle(x, rate, params) for x in t])
    return InitializationFit(rate, rate * fit.error('log_rate'), t, f_init, fit)


@dataclass
class PowerLawFit:
    exponent: float
    prefactor: float
    residual_rms: float
    degenerate: bool


def fit_power_law(points: Sequence[Tuple[float, float]]) -> PowerLawFit:
    """log θ = log c + α log P by linear regression.

    Raises:
        InsufficientPoints: fewer than 4 positive points, or the data span
            less than a decade in power and less than the π–3π range in θ.
    """
    data = np.array([(p, theta) for p, theta in points if p > 0 and theta > 0], dtype=float).reshape(-1, 2)
    if len(data) < 4:
        raise InsufficientPoints(f'{len(data)} usable points, need 4')
    power, theta = data[:, 0], data[:, 1]
    if power.max() / power.min() < 10 and theta.max() / theta.min() < 3 * (1 - 1e-9):
        raise InsufficientPoints('data span less than a decade in power and less than π–3π in angle')
    x, y = np.log(power), np.log(theta)
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    rms = float(np.sqrt(np.mean(residual ** 2)))
    degenerate = bool(np.ptp(y) == 0)
    if degenerate:
        logger.warning('Power-law fit on constant angles')
    return PowerLawFit(float(slope), float(math.exp(intercept)), rms, degenerate)


@dataclass
class RotationScanFit:
    power: np.ndarray
    theta: np.ndarray
    offset: float
    amplitude: float
    power_law: PowerLawFit
    fit: FitResult


def _rotation_terms(power, alpha):
    scaled = np.power(power, alpha)
    log_power = np.log(np.where(power > 0, power, 1.0))
    return scaled, log_power


def fit_rotation_scan(power, intensity) -> RotationScanFit:
    """Rotation angles from a readout scan over rotation pulse power.

    The spin starts in |↑⟩ and the readout measures the |↓⟩ population, so
    ``intensity = offset + amplitude·sin²(θ/2)`` with θ = c·P^α. A global fit
    fixes offset, amplitude and the branch of every point; each point is then
    inverted to its own θ and the angles go through ``fit_power_law``.
    """
    power = np.asarray(power, dtype=float)
    y = np.asarray(intensity, dtype=float)
    if len(power) < 5 or not power.max() > 0:
        raise InsufficientPoints(f'{len(power)} scan points, need at least 5 with nonzero power')
    if not np.ptp(y) > 0:
        raise FitDiverged('readout intensity does not change with rotation power')

    def model(p, offset, amplitude, c, alpha):
        return offset + amplitude * np.sin(c * np.power(p, alpha) / 2) ** 2

    def jacobian(p, offset, amplitude, c, alpha):
        scaled, log_power = _rotation_terms(p, alpha)
        theta = c * scaled
        slope = amplitude * np.sin(theta) / 2
        return np.column_stack([np.ones_like(p), np.sin(theta / 2) ** 2, slope * scaled, slope * theta * log_power])

    # coarse grid over (α, θ at the largest power); offset and amplitude are linear
    best = None
    basis = np.ones((len(power), 2))
    for alpha in np.linspace(0.3, 1.5, 25):
        scaled = np.power(power, alpha) / power.max() ** alpha
        for theta_max in np.linspace(0.5, 6.0, 45) * math.pi:
            basis[:, 1] = np.sin(theta_max * scaled / 2) ** 2
            coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
            cost = float(np.sum((basis @ coef - y) ** 2))
            if coef[1] > 0 and (best is None or cost < best[0]):
                best = (cost, coef[0], coef[1], theta_max / power.max() ** alpha, alpha)
    if best is None:
        raise FitDiverged('readout intensity does not oscillate with rotation power')
    fit = least_squares_fit(model, power, y, best[1:], ('offset', 'amplitude', 'c', 'alpha'), jacobian=jacobian)
    offset, amplitude = fit['offset'], fit['amplitude']
    guide = fit['c'] * np.power(power, fit['alpha'])
    base = 2 * np.arcsin(np.sqrt(np.clip((y - offset) / amplitude, 0.0, 1.0)))
    turns = np.round(guide / (2 * math.pi))
    candidates = np.stack([2 * math.pi * (turns + k) + sign * base for k in (-1, 0, 1) for sign in (-1, 1)])
    theta = candidates[np.argmin(np.abs(candidates - guide), axis=0), np.arange(len(power))]
    power_law = fit_power_law(list(zip(power, theta)))
    logger.debug('Rotation scan: alpha %.4f from the global fit, %.4f from per-point angles',
                 fit['alpha'], power_law.exponent)
    return RotationScanFit(power, theta, offset, amplitude, power_law, fit)


@dataclass
class RamseyFit:
    t2star: float
    omega: float
    visibility: float
    phase: float
    offset: float
    amplitude: float
    t2star_error: float
    omega_error: float
    fit: FitResult

    @property
    def pi_half_fidelity(self) -> float:
        return pi_half_fidelity(self.visibility)


def pi_half_fidelity(visibility: float) -> float:
    """π/2-pulse fidelity (1 + √V)/2 from a Ramsey fringe visibility."""
    return (1 + math.sqrt(max(visibility, 0.0))) / 2


def fit_ramsey(delta_tau, intensity, shape: DephasingShape = DephasingShape.Gaussian,
               omega_guess: Optional[float] = None, t2star_guess: Optional[float] = None) -> RamseyFit:
    """Fits offset + A·env(Δτ)·cos(ωΔτ + φ) to a Ramsey fringe."""
    t = np.asarray(delta_tau, dtype=float)
    y = np.asarray(intensity, dtype=float)
    omega0 = omega_guess or _dominant_frequency(t, y)
    rate0 = 1.0 / (t2star_guess or max(np.ptp(t) / 3, 1e-3))

    def envelope(t, rate):
        if shape is DephasingShape.Gaussian:
            return np.exp(-(rate * t) ** 2)
        return np.exp(-np.abs(rate * t))

    def model(t, offset, a, b, rate, omega):
        return offset + envelope(t, rate) * (a * np.cos(omega * t) + b * np.sin(omega * t))

    offset0 = float(np.mean(y))
    design = np.column_stack([np.cos(omega0 * t), np.sin(omega0 * t)]) * envelope(t, rate0)[:, None]
    (a0, b0), *_ = np.linalg.lstsq(design, y - offset0, rcond=None)
    fit = least_squares_fit(model, t, y, [offset0, a0, b0, rate0, omega0], ('offset', 'a', 'b', 'rate', 'omega'))
    a, b, rate = fit['a'], fit['b'], abs(fit['rate'])
    amplitude = math.hypot(a, b)
    if rate == 0:
        raise FitDiverged('fringe envelope did not decay')
    offset = fit['offset']
    return RamseyFit(t2star=1.0 / rate, omega=fit['omega'], visibility=amplitude / offset if offset else math.nan,
                     phase=math.atan2(-b, a) % (2 * math.pi), offset=offset, amplitude=amplitude,
                     t2star_error=fit.error('rate') / rate ** 2, omega_error=fit.error('omega'), fit=fit)


@dataclass
class LifetimeFit:
    lifetime: float
    lifetime_error: float
    amplitude: float
    background: float
    fit: FitResult


def fit_lifetime(hist: Histogram, t_start: Optional[float] = None) -> LifetimeFit:
    """Single exponential plus constant background on the histogram tail after ``t_start`` (ns)."""
    t = hist.centers_ns
    mask = t >= (t_start if t_start is not None else t[np.argmax(hist.counts)])
    t, counts = t[mask], hist.counts[mask].astype(float)
    if len(t) < 4:
        raise InsufficientPoints('fewer than 4 bins after the start time')
    t0 = t[0]
    tail = counts[counts > 0]
    background0 = float(np.min(tail)) if len(tail) else 0.0
    amplitude0 = max(counts[0] - background0, 1.0)
    lifetime0 = max(np.ptp(t) / 4, 1e-3)

    def model(t, amplitude, log_rate, background):
        return amplitude * np.exp(-np.exp(log_rate) * (t - t0)) + background

    fit = least_squares_fit(model, t, counts, [amplitude0, -math.log(lifetime0), background0],
                            ('amplitude', 'log_rate', 'background'), np.sqrt(np.maximum(counts, 1)))
    lifetime = math.exp(-fit['log_rate'])
    return LifetimeFit(lifetime, lifetime * fit.error('log_rate'), fit['amplitude'], fit['background'], fit)


@dataclass
class RabiFit:
    period: float
    period_error: float
    frequency: float
    damping: float
    fit: FitResult


def fit_rabi_period(t, intensity) -> RabiFit:
    """Damped sinusoid e^{−κ₁t}·[c + e^{−κ₂t}(a cos ωt + b sin ωt)] on an intensity trace."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(intensity, dtype=float)
    t = t - t[0]
    omega0 = _dominant_frequency(t, y)

    def model(t, c, k1, a, b, k2, omega):
        return np.exp(-k1 * t) * (c + np.exp(-k2 * t) * (a * np.cos(omega * t) + b * np.sin(omega * t)))

    c0 = float(np.mean(y))
    design = np.column_stack([np.cos(omega0 * t), np.sin(omega0 * t)])
    (a0, b0), *_ = np.linalg.lstsq(design, y - c0, rcond=None)
    fit = least_squares_fit(model, t, y, [c0, 0.0, a0, b0, 0.1, omega0], ('c', 'k1', 'a', 'b', 'k2', 'omega'))
    omega = abs(fit['omega'])
    period = 2 * math.pi / omega
    return RabiFit(period, period * fit.error('omega') / omega, omega, fit['k2'], fit)


# ---------------------------------------------------------------------------
# Emission-record statistics

def initialization_after_cycles(table: EmissionTable, n_max: int) -> np.ndarray:
    """Fraction of cycles whose spin reached |↑⟩ within the first n+1 emissions, n = 0..n_max.

    Frequency-resolved records only.
    """
    if len(table) and np.any(table.port != 0):
        raise AnalysisError('needs frequency-resolved emission records')
    targets = np.array([c.target for c in table.channels])[table.channel.astype(np.int64)] \
        if len(table) else np.zeros(0, dtype=np.int64)
    first = np.searchsorted(table.cycle, np.arange(table.n_cycles))
    rank = np.arange(len(table)) - first[table.cycle]
    first_up = np.full(table.n_cycles, np.iinfo(np.int64).max)
    up = targets == LevelIndex.SpinUp
    np.minimum.at(first_up, table.cycle[up], rank[up])
    return np.array([np.mean(first_up <= n) for n in range(n_max + 1)])


# ---------------------------------------------------------------------------
# Bootstrap

def resample_cycles(stream: TagStream, drawn: np.ndarray) -> TagStream:
    """New stream whose cycle k is the original cycle ``drawn[k]``."""
    cycles = np.arange(max(stream.n_cycles, int(drawn.max(initial=-1)) + 1))
    starts = np.searchsorted(stream.cycle, cycles)
    ends = np.searchsorted(stream.cycle, cycles, side='right')
    lengths = (ends - starts)[drawn]
    total = int(lengths.sum())
    offsets = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    rows = np.repeat(starts[drawn], lengths) + offsets
    return TagStream(np.repeat(np.arange(len(drawn)), lengths), stream.channel[rows], stream.t_ps[rows],
                     stream.truth[rows], stream.period, len(drawn))


@dataclass
class BootstrapResult:
    values: np.ndarray
    mean: float
    std: float
    failures: int


def bootstrap(streams: Sequence[TagStream], statistic: Callable[..., float], seed: int,
              n_resamples: int = BOOTSTRAP_RESAMPLES) -> BootstrapResult:
    """Resamples cycles with replacement (jointly across ``streams``).

    Resamples on which ``statistic`` raises an AnalysisError are skipped and
    counted in ``failures``.
    """
    n_cycles = max(s.n_cycles for s in streams)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xb007])))
    values, failures = [], 0
    for _ in range(n_resamples):
        drawn = rng.integers(n_cycles, size=n_cycles)
        try:
            values.append(statistic(*(resample_cycles(s, drawn) for s in streams)))
        except AnalysisError as e:
            failures += 1
            logger.debug('Bootstrap resample skipped: %s', e)
    values = np.array(values, dtype=float)
    if len(values) < 2:
        raise InsufficientCounts('bootstrap statistic failed on almost every resample')
    return BootstrapResult(values, float(values.mean()), float(values.std(ddof=1)), failures)
