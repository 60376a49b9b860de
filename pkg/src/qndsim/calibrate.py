"""Offline calibration of the mean-response model from fully pumped traces."""

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import CalibrationError, DomainError
from .probe import PumpingModel, mean_response

__all__ = ["GroupFit", "CalibrationResult", "fit_response", "calibrate"]

PARAMS = ("beta", "tau_at", "tau_loss")


@dataclass(frozen=True)
class GroupFit:
    n_shots: int
    phi0: float
    beta: float
    tau_at: float
    tau_loss: float
    errors: dict


@dataclass(frozen=True)
class CalibrationResult:
    model: PumpingModel
    errors: dict
    groups: tuple
    max_deviation_sigma: float


def _model(t, phi0, beta, tau_at, tau_loss):
    return phi0 * (beta - (beta - 1.0) * np.exp(-t / tau_at)) * np.exp(-t / tau_loss)


def fit_response(times, trace, guess=None, sigma=None):
    """Non-linear fit of phi0 * m(t) to one averaged trace; returns (params, covariance)."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(trace, dtype=float)
    g = guess or PumpingModel()
    p0 = [y[0], g.beta, g.tau_at, g.tau_loss]
    lower = [-np.inf, 1.0, 1e-3 * g.tau_at, 1e-3 * g.tau_loss]
    popt, pcov = optimize.curve_fit(_model, t, y, p0=p0, sigma=sigma, absolute_sigma=sigma is not None,
                                    bounds=(lower, np.inf), maxfev=20000)
    return popt, pcov


def calibrate(groups, times, guess=None, n_batches=10, tolerance_sigma=3.0):
    """Fit the response model to several atom-number groups.

    Each group is a (shots x samples) array of traces from atoms prepared in
    the probed level. The point estimate per group comes from its averaged
    trace; its errors from the scatter of fits to ``n_batches`` disjoint
    sub-averages, which keeps shot-internal correlations honest. Groups must
    agree within ``tolerance_sigma`` on every parameter.
    """
    if len(groups) < 3:
        raise DomainError("calibration needs at least three atom-number groups")
    fits = []
    for traces in groups:
        Y = np.atleast_2d(np.asarray(traces, dtype=float))
        if Y.shape[0] < 2 * n_batches:
            raise DomainError("too few shots per group for batch errors")
        popt, _ = fit_response(times, Y.mean(axis=0), guess)
        subs = np.array([fit_response(times, part.mean(axis=0), guess)[0]
                         for part in np.array_split(Y, n_batches)])
        err = subs.std(axis=0, ddof=1) / np.sqrt(n_batches)
        fits.append(GroupFit(Y.shape[0], float(popt[0]), float(popt[1]), float(popt[2]),
                             float(popt[3]), dict(zip(("phi0",) + PARAMS, map(float, err)))))
    combined = {}
    errors = {}
    worst = 0.0
    for name in PARAMS:
        v = np.array([getattr(f, name) for f in fits])
        e = np.array([f.errors[name] for f in fits])
        w = 1.0 / e**2
        mean = float(np.sum(w * v) / np.sum(w))
        combined[name] = mean
        errors[name] = float(1.0 / np.sqrt(np.sum(w)))
        worst = max(worst, float(np.max(np.abs(v - mean) / e)))
    if worst > tolerance_sigma:
        raise CalibrationError(
            f"response parameters disagree across atom-number groups ({worst:.1f} sigma)")
    try:
        model = PumpingModel(**combined)
    except DomainError as exc:
        raise CalibrationError(str(exc)) from exc
    return CalibrationResult(model, errors, tuple(fits), worst)
