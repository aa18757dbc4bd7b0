import numpy as np
import pytest

from SpinPhotonSim.errors import FitDiverged
from SpinPhotonSim.fitting import least_squares_fit


def decay(t, amplitude, tau):
    return amplitude * np.exp(-t / tau)


def test_exact_data():
    t = np.linspace(0, 10, 50)
    fit = least_squares_fit(decay, t, decay(t, 3.0, 1.32), [1.0, 2.0], ['amplitude', 'tau'])
    assert fit['amplitude'] == pytest.approx(3.0, rel=1e-8)
    assert fit['tau'] == pytest.approx(1.32, rel=1e-8)
    assert fit.reduced_chi2 < 1e-12
    assert fit.jacobian_error is None and fit.jacobian_ok
    assert fit.as_dict() == pytest.approx({'amplitude': 3.0, 'tau': 1.32}, rel=1e-8)
    assert fit.covariance.shape == (2, 2)


def decay_jacobian(t, amplitude, tau):
    e = np.exp(-t / tau)
    return np.column_stack([e, amplitude * t * e / tau ** 2])


def test_analytic_jacobian():
    t = np.linspace(0, 10, 50)
    fit = least_squares_fit(decay, t, decay(t, 3.0, 1.32), [1.0, 2.0], ['amplitude', 'tau'], jacobian=decay_jacobian)
    assert fit['tau'] == pytest.approx(1.32, rel=1e-8)
    assert fit.jacobian_error < 1e-5
    with pytest.raises(FitDiverged):
        least_squares_fit(decay, t, decay(t, 3.0, 1.32), [1.0, 2.0], ['amplitude', 'tau'],
                          jacobian=lambda t, a, tau: 2 * decay_jacobian(t, a, tau))


def test_noisy_data_has_unit_chi2():
    rng = np.random.default_rng(1)
    t = np.linspace(0, 10, 2000)
    y = decay(t, 3.0, 1.32) + rng.normal(0, 0.05, len(t))
    fit = least_squares_fit(decay, t, y, [1.0, 2.0], ['amplitude', 'tau'], sigma=np.full(len(t), 0.05))
    assert fit.reduced_chi2 == pytest.approx(1.0, abs=0.1)
    assert abs(fit['tau'] - 1.32) < 5 * fit.error('tau')
    assert 0 < fit.error('tau') < 0.05


def test_too_few_points():
    with pytest.raises(FitDiverged):
        least_squares_fit(decay, [0.0], [1.0], [1.0, 1.0], ['amplitude', 'tau'])


def test_non_finite_model():
    def broken(t, a, b):
        return np.full_like(t, np.nan)

    with pytest.raises(FitDiverged):
        least_squares_fit(broken, np.arange(5.0), np.ones(5), [1.0, 1.0], ['a', 'b'])
