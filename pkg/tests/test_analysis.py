import json
import math

import numpy as np
import pytest

from SpinPhotonSim.analysis import (FidelityReport, Histogram, Normalization, bootstrap, computational_fidelity,
                                    conditional_histogram, entanglement_bound, fidelity_from_ratios,
                                    fit_fringes, fit_initialization, fit_lifetime, fit_power_law, fit_rabi_period,
                                    fit_ramsey, fit_rotation_scan, g2_zero, histogram, initialization_after_cycles,
                                    jitter_attenuation, pi_half_fidelity, resample_cycles,
                                    superposition_fidelity, window_counts)
from SpinPhotonSim.detection import TagStream
from SpinPhotonSim.dynamics import EmissionTable, spin_pumping_oracle
from SpinPhotonSim.errors import (AnalysisError, InsufficientCounts, InsufficientPoints, NoConditioningEvents,
                                  PeriodUnderResolved, PhaseInconsistent, ZeroDenominator)
from SpinPhotonSim.system import build_channels, ghz_to_rad_per_ns

OMEGA_Z = ghz_to_rad_per_ns(8.5)


def stream(cycles, channels, t_ps, n_cycles, period=25.0):
    return TagStream(cycles, channels, t_ps, np.full(len(cycles), -1), period, n_cycles)


def fringe_histogram(visibility, phase, bin_ps=10.0, window=(1.0, 2.5), level=1000.0, rate=0.5):
    edges = window[0] * 1000 + bin_ps * np.arange(int(round((window[1] - window[0]) * 1000 / bin_ps)) + 1)
    t = 0.5 * (edges[1:] + edges[:-1]) / 1000
    averaging = np.sinc(OMEGA_Z * bin_ps / 1000 / (2 * np.pi))
    expected = level * np.exp(-rate * (t - t[0])) * (1 + averaging * visibility * np.cos(OMEGA_Z * t + phase))
    return Histogram(edges, np.rint(expected), Normalization.PerTrigger, n_triggers=10000)


def test_window_counts_and_histogram():
    tags = stream([0, 0, 1, 3], [0, 1, 0, 0], [1000, 1500, 2000, 9000], n_cycles=5)
    assert window_counts(tags, (0, 5)).tolist() == [2, 1, 0, 0, 0]
    assert window_counts(tags, (0, 5), channel=0).tolist() == [1, 1, 0, 0, 0]
    assert window_counts(tags, (0, 10), cycles=[3, 0]).tolist() == [1, 2]
    hist = histogram(tags, (0, 10), bin_ps=1000, normalization=Normalization.PerTrigger)
    assert hist.counts.sum() == 4
    assert hist.counts[1] == 2
    assert hist.normalized[1] == pytest.approx(2 / 5)
    assert hist.bin_width_ns == pytest.approx(1.0)
    assert hist.centers_ns[0] == pytest.approx(0.5)


def test_histogram_sum_and_csv(tmp_path):
    a = Histogram([0, 10, 20], [1, 2])
    total = a + Histogram([0, 10, 20], [3, 4])
    assert total.counts.tolist() == [4, 6]
    with pytest.raises(AnalysisError):
        a + Histogram([0, 5, 20], [1, 1])
    path = tmp_path / 'hist.csv'
    total.write_csv(path)
    assert path.read_text().splitlines()[:2] == ['bin_start_ps,bin_end_ps,count,normalized', '0,10,4,4.0']


def test_conditional_histogram():
    ent = stream([0, 1, 2], [0, 0, 0], [1200, 1300, 1400], n_cycles=3)
    readout = stream([0, 2, 2], [1, 1, 1], [9500, 9600, 20000], n_cycles=3)
    hist = conditional_histogram(ent, readout, (9.1, 14), bin_ps=100, ent_window=(1.0, 2.0))
    assert hist.n_triggers == 2
    assert hist.counts.sum() == 2
    assert hist.counts[2] == 1 and hist.counts[4] == 1
    with pytest.raises(NoConditioningEvents):
        conditional_histogram(ent, readout, (15, 18))


def test_g2_independent_sources():
    rng = np.random.default_rng(1)
    n = 20000
    cycles, channels = [], []
    for channel in (0, 1):
        hit = np.flatnonzero(rng.random(n) < 0.1)
        cycles.append(hit)
        channels.append(np.full(len(hit), channel))
    cycles = np.concatenate(cycles)
    tags = stream(cycles, np.concatenate(channels), np.full(len(cycles), 5000), n)
    g2, error = g2_zero(tags, (0, 25))
    assert g2 == pytest.approx(1.0, abs=0.3)
    assert 0 < error < 0.2


def test_g2_single_photons():
    rng = np.random.default_rng(2)
    n = 2000
    tags = stream(np.arange(n), rng.integers(2, size=n), np.full(n, 5000), n)
    g2, _ = g2_zero(tags, (0, 25))
    assert g2 == 0.0


def test_g2_needs_counts():
    tags = stream([0, 1, 5], [0, 1, 0], [5000, 5000, 5000], 10)
    with pytest.raises(InsufficientCounts):
        g2_zero(tags, (0, 25))


def test_computational_fidelity():
    f1, error = computational_fidelity(16, 1, 29, 1)
    assert f1 == pytest.approx(0.9539, abs=1e-4)
    assert f1 == pytest.approx(fidelity_from_ratios(16, 29))
    assert 0 < error < 0.05
    with pytest.raises(ZeroDenominator):
        computational_fidelity(0, 0, 5, 1)


def test_entanglement_bound():
    bound, error = entanglement_bound(0.954, 0.78, 0.02, 0.04)
    assert bound == pytest.approx(0.867)
    assert error == pytest.approx(0.5 * math.hypot(0.02, 0.04))
    with pytest.raises(AnalysisError):
        entanglement_bound(1.2, 0.5)


def test_fringe_fit():
    fit = fit_fringes(fringe_histogram(0.8, 1.0), OMEGA_Z, jitter_fwhm=0.0)
    assert fit.visibility_raw == pytest.approx(0.8, abs=0.01)
    assert fit.visibility_deconvolved == pytest.approx(fit.visibility_raw)
    assert fit.phase == pytest.approx(1.0, abs=0.02)
    assert fit.decay_time == pytest.approx(2.0, rel=0.02)
    assert fit.frequency == OMEGA_Z
    assert not fit.overshoot


def test_fringe_jitter_deconvolution():
    fit = fit_fringes(fringe_histogram(0.5, 0.0), OMEGA_Z, jitter_fwhm=40.0)
    assert fit.visibility_deconvolved == pytest.approx(fit.visibility_raw / jitter_attenuation(OMEGA_Z, 40.0))
    assert jitter_attenuation(OMEGA_Z, 0.0) == 1.0


def test_fringe_free_frequency():
    fit = fit_fringes(fringe_histogram(0.8, 0.3), 0.97 * OMEGA_Z, jitter_fwhm=0.0, free_frequency=True)
    assert fit.frequency == pytest.approx(OMEGA_Z, rel=5e-3)
    assert fit.visibility_raw == pytest.approx(0.8, abs=0.02)


def test_fringe_binning_check():
    with pytest.raises(PeriodUnderResolved):
        fit_fringes(fringe_histogram(0.8, 0.0, bin_ps=50.0), OMEGA_Z, jitter_fwhm=0.0)


def test_superposition_fidelity():
    plus = fit_fringes(fringe_histogram(0.6, 0.5), OMEGA_Z, 0.0)
    minus = fit_fringes(fringe_histogram(0.6, 0.5 + math.pi), OMEGA_Z, 0.0)
    f2, error = superposition_fidelity(plus, minus)
    assert f2 == pytest.approx(0.8, abs=0.01)
    assert error >= 0
    with pytest.raises(PhaseInconsistent):
        superposition_fidelity(plus, plus)


def test_fidelity_report_json():
    report = FidelityReport(F1=0.95, F2=0.79, F1_error=0.01, F2_error=0.02, counts={'readout': 42})
    assert report.F_bound == pytest.approx(0.87)
    data = json.loads(report.to_json())
    assert data['F_bound_probability'] == pytest.approx(0.87)
    assert data['counts'] == {'readout': 42}
    partial = json.loads(FidelityReport(F1=0.9).to_json())
    assert partial['F2_probability'] is None
    assert partial['F_bound_probability'] is None


def test_power_law():
    points = [(p, math.pi * p ** 0.77) for p in (0.1, 0.5, 1.0, 2.5, 4.15)]
    fit = fit_power_law(points)
    assert fit.exponent == pytest.approx(0.77)
    assert fit.prefactor == pytest.approx(math.pi)
    assert fit.residual_rms < 1e-12
    with pytest.raises(InsufficientPoints):
        fit_power_law(points[:3])
    with pytest.raises(InsufficientPoints):
        fit_power_law([(p, math.pi * p ** 0.77) for p in (1.0, 1.2, 1.4, 1.6)])


def test_rotation_scan():
    power = np.linspace(0, 4, 41)
    theta = math.pi * power ** 0.77
    scan = fit_rotation_scan(power, 0.05 + 0.4 * np.sin(theta / 2) ** 2)
    assert scan.offset == pytest.approx(0.05, abs=1e-6)
    assert scan.amplitude == pytest.approx(0.4, abs=1e-6)
    assert scan.theta == pytest.approx(theta, abs=1e-4)
    assert scan.power_law.exponent == pytest.approx(0.77, abs=1e-4)
    assert scan.power_law.prefactor == pytest.approx(math.pi, rel=1e-4)
    assert scan.fit.jacobian_error < 1e-4


def test_rotation_scan_with_noise():
    rng = np.random.default_rng(4)
    power = np.linspace(0, 4, 41)
    y = 0.05 + 0.4 * np.sin(math.pi * power ** 0.77 / 2) ** 2 + rng.normal(0, 0.005, len(power))
    scan = fit_rotation_scan(power, y)
    assert scan.fit['alpha'] == pytest.approx(0.77, abs=0.01)
    assert scan.power_law.exponent == pytest.approx(0.77, abs=0.05)


def test_rotation_scan_needs_oscillation():
    with pytest.raises(InsufficientPoints):
        fit_rotation_scan([0, 1, 2], [0.1, 0.2, 0.3])
    with pytest.raises(AnalysisError):
        fit_rotation_scan(np.linspace(0, 4, 21), np.full(21, 0.3))


def test_ramsey_fit():
    tau = np.linspace(0, 2, 201)
    omega = ghz_to_rad_per_ns(8.5)
    y = 0.5 + 0.5 * np.exp(-(tau / 0.83) ** 2) * np.cos(omega * tau)
    fit = fit_ramsey(tau, y, omega_guess=omega, t2star_guess=1.0)
    assert fit.t2star == pytest.approx(0.83, rel=1e-3)
    assert fit.omega == pytest.approx(omega, rel=1e-4)
    assert fit.visibility == pytest.approx(1.0, abs=1e-3)
    assert fit.pi_half_fidelity == pytest.approx(1.0, abs=1e-3)
    assert pi_half_fidelity(0.81) == pytest.approx(0.95)


def test_lifetime_fit():
    edges = 100.0 * np.arange(201)
    t = 0.5 * (edges[1:] + edges[:-1]) / 1000
    counts = np.rint(5000 * np.exp(-(t - t[0]) / 1.32) + 2)
    fit = fit_lifetime(Histogram(edges, counts))
    assert fit.lifetime == pytest.approx(1.32, rel=2e-3)
    assert fit.background == pytest.approx(2.0, abs=0.5)
    with pytest.raises(InsufficientPoints):
        fit_lifetime(Histogram(edges[:4], counts[:3]))


def test_rabi_fit():
    t = np.linspace(0, 5, 501)
    omega = ghz_to_rad_per_ns(1.158)
    y = np.exp(-0.1 * t) * (0.5 - 0.5 * np.exp(-0.3 * t) * np.cos(omega * t))
    fit = fit_rabi_period(t + 5.0, y)
    assert fit.period == pytest.approx(1 / 1.158, rel=5e-3)
    assert fit.damping == pytest.approx(0.3, abs=0.05)


def test_initialization_fit(params):
    durations = np.arange(0.0, 13.0)
    intensity = [2 * (1 - spin_pumping_oracle(t, 0.8, params)) for t in durations]
    fit = fit_initialization(durations, intensity, params)
    assert fit.pump_rate == pytest.approx(0.8, rel=1e-4)
    assert fit.f_init[0] == 0.5
    assert fit.f_init[-1] > 0.9


def test_initialization_after_cycles(params):
    channels = build_channels(params)
    table = EmissionTable(np.array([0, 0, 1]), np.array([1.0, 3.0, 2.0]), np.array([0, 1, 1], np.int8),
                          np.zeros(3, np.int8), np.zeros(3, np.int8), channels, 25.0, 3)
    assert initialization_after_cycles(table, 2) == pytest.approx([1 / 3, 2 / 3, 2 / 3])
    erased = EmissionTable(np.array([0]), np.array([1.0]), np.zeros(1, np.int8), np.zeros(1, np.int8),
                           np.ones(1, np.int8), channels, 25.0, 1)
    with pytest.raises(AnalysisError):
        initialization_after_cycles(erased, 1)


def test_resample_cycles():
    tags = stream([0, 0, 2], [0, 1, 0], [100, 200, 300], n_cycles=3)
    same = resample_cycles(tags, np.arange(3))
    assert same.cycle.tolist() == [0, 0, 2] and same.t_ps.tolist() == [100, 200, 300]
    swapped = resample_cycles(tags, np.array([2, 2, 0]))
    assert swapped.cycle.tolist() == [0, 1, 2, 2]
    assert swapped.t_ps.tolist() == [300, 300, 100, 200]


def test_bootstrap():
    rng = np.random.default_rng(3)
    n = 4000
    hit = np.flatnonzero(rng.random(n) < 0.3)
    tags = stream(hit, np.zeros(len(hit)), np.full(len(hit), 5000), n)

    def rate(s):
        return float(window_counts(s, (0, 25)).mean())

    result = bootstrap([tags], rate, seed=1, n_resamples=100)
    assert result.failures == 0
    assert result.mean == pytest.approx(rate(tags), abs=0.01)
    assert result.std == pytest.approx(math.sqrt(0.21 / n), rel=0.3)
    again = bootstrap([tags], rate, seed=1, n_resamples=100)
    assert np.array_equal(result.values, again.values)

    def failing(s):
        raise InsufficientCounts('no')

    with pytest.raises(InsufficientCounts):
        bootstrap([tags], failing, seed=1, n_resamples=10)
