"""Weighted nonlinear least squares shared by all fits."""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import scipy.optimize

from .errors import FitDiverged

logger = logging.getLogger('SpinPhotonSim.fitting')

JACOBIAN_TOLERANCE = 1e-4


@dataclass
class FitResult:
    """Optimum of a least-squares fit.

    ``jacobian_error`` is ‖J − J_fd‖/‖J_fd‖ between an analytic model
    Jacobian at the optimum and a forward difference, ``None`` when the fit
    ran on a finite-difference Jacobian.
    """
    names: Sequence[str]
    values: np.ndarray
    errors: np.ndarray
    covariance: np.ndarray
    residuals: np.ndarray
    reduced_chi2: float
    jacobian_error: Optional[float]
    n_evaluations: int

    def __getitem__(self, name: str) -> float:
        return float(self.values[list(self.names).index(name)])

    def error(self, name: str) -> float:
        return float(self.errors[list(self.names).index(name)])

    def as_dict(self) -> Dict[str, float]:
        return {name: float(v) for name, v in zip(self.names, self.values)}

    @property
    def jacobian_ok(self) -> bool:
        return self.jacobian_error is None or self.jacobian_error < JACOBIAN_TOLERANCE


def least_squares_fit(model: Callable[..., np.ndarray], x: np.ndarray, y: np.ndarray, p0: Sequence[float],
                      names: Sequence[str], sigma: Optional[np.ndarray] = None,
                      max_nfev: Optional[int] = None,
                      jacobian: Optional[Callable[..., np.ndarray]] = None) -> FitResult:
    """Levenberg–Marquardt fit of ``model(x, *p)`` to ``y``.

    Args:
        model: callable returning the model curve.
        x: abscissa passed through to ``model``.
        y: data.
        p0: initial parameters.
        names: parameter names, same order as ``p0``.
        sigma: standard deviations of ``y``; unit weights if omitted.
        max_nfev: evaluation budget, scipy default if omitted.
        jacobian: analytic derivative of ``model`` with shape (len(x), len(p0));
            a finite-difference Jacobian is used if omitted.

    Returns:
        FitResult: covariance scaled by the reduced χ².

    Raises:
        FitDiverged: the optimizer failed or produced non-finite values, or
            ``jacobian`` disagrees with a finite difference of ``model``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    sigma = np.ones_like(y) if sigma is None else np.asarray(sigma, dtype=float)
    if len(y) < len(p0):
        raise FitDiverged(f'{len(y)} points for {len(p0)} parameters')

    def residuals(p):
        return (model(x, *p) - y) / sigma

    def residual_jacobian(p):
        return np.asarray(jacobian(x, *p), dtype=float).reshape(len(y), len(p)) / sigma[:, None]

    try:
        result = scipy.optimize.least_squares(residuals, p0, jac='2-point' if jacobian is None else residual_jacobian,
                                              method='lm', x_scale='jac', max_nfev=max_nfev)
    except (ValueError, np.linalg.LinAlgError) as e:
        raise FitDiverged(str(e))
    if not result.success or not np.all(np.isfinite(result.x)) or not np.all(np.isfinite(result.fun)):
        raise FitDiverged(f'least squares did not converge: {result.message}')

    jac = np.atleast_2d(result.jac)
    jacobian_error = None
    if jacobian is not None:
        step = np.sqrt(np.finfo(float).eps) * np.maximum(np.abs(result.x), 1.0)
        jac_fd = np.atleast_2d(scipy.optimize.approx_fprime(result.x, residuals, step))
        scale = np.linalg.norm(jac_fd)
        jacobian_error = float(np.linalg.norm(jac - jac_fd) / scale) if scale > 0 else 0.0
        if jacobian_error >= JACOBIAN_TOLERANCE:
            raise FitDiverged(f'analytic Jacobian differs from finite differences by {jacobian_error:.2e}')

    dof = max(len(y) - len(p0), 1)
    reduced_chi2 = float(np.sum(result.fun ** 2) / dof)
    covariance = np.linalg.pinv(jac.T @ jac) * reduced_chi2
    errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    logger.debug('Fit %s -> %s (chi2_red %.3g, nfev %d)', list(names), result.x, reduced_chi2, result.nfev)
    return FitResult(tuple(names), result.x, errors, covariance, result.fun, reduced_chi2, jacobian_error,
                     result.nfev)
