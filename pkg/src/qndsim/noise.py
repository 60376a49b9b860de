"""Ensemble noise statistics: binning, projection-noise scaling, covariances."""

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DomainError, FitError

__all__ = [
    "ShotBin",
    "ScalingFit",
    "CovarianceDecomposition",
    "CorrelationCurve",
    "DampedCosine",
    "jackknife_variance",
    "bin_shots",
    "scaling_fit",
    "effective_atom_number",
    "noise_level_db",
    "variance_from_db",
    "estimate_covariance",
    "decompose_covariance",
    "correlation_curve",
    "fit_damped_cosine",
    "NOISE_UNDEFINED",
]

NOISE_UNDEFINED = float("nan")


def jackknife_variance(x):
    """Sample variance (ddof=1) of ``x`` and its leave-one-out jackknife error."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 3:
        raise DomainError("jackknife needs at least three samples")
    var = x.var(ddof=1)
    s1 = x.sum()
    s2 = (x**2).sum()
    # leave-one-out variances from running sums
    m1 = (s1 - x) / (n - 1)
    loo = ((s2 - x**2) - (n - 1) * m1**2) / (n - 2)
    err = np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return float(var), float(err)


@dataclass(frozen=True)
class ShotBin:
    n_shots: int
    mean_phi_N: float
    var_delta: float
    var_delta_err: float
    var4: float
    var4_err: float
    var3: float
    var3_err: float


def _columns(estimates):
    if hasattr(estimates, "phi4") and isinstance(estimates.phi4, np.ndarray):
        return np.asarray(estimates.phi4), np.asarray(estimates.phi3)
    phi4 = np.array([e.phi4 for e in estimates], dtype=float)
    phi3 = np.array([e.phi3 for e in estimates], dtype=float)
    return phi4, phi3


def bin_shots(estimates, target_bin_size=200):
    """Group shots with similar phi_N into contiguous bins of about ``target_bin_size``."""
    phi4, phi3 = _columns(estimates)
    n = phi4.size
    if n < target_bin_size or n < 3:
        raise DomainError("fewer shots than one bin")
    phi_N = phi4 + phi3
    order = np.argsort(phi_N, kind="stable")
    n_bins = max(1, int(round(n / target_bin_size)))
    sorted_phi = phi_N[order]
    # nominal cut points, pushed forward past runs of equal phi_N so ties stay together
    cuts = []
    for k in range(1, n_bins):
        c = int(round(k * n / n_bins))
        while 0 < c < n and sorted_phi[c] == sorted_phi[c - 1]:
            c += 1
        if c < n and (not cuts or c > cuts[-1]):
            cuts.append(c)
    groups = [g for g in np.split(order, cuts) if g.size]
    bins = []
    for g in groups:
        d = phi4[g] - phi3[g]
        vd, ed = jackknife_variance(d)
        v4, e4 = jackknife_variance(phi4[g])
        v3, e3 = jackknife_variance(phi3[g])
        bins.append(ShotBin(int(g.size), float(phi_N[g].mean()), vd, ed, v4, e4, v3, e3))
    return bins


@dataclass(frozen=True)
class ScalingFit:
    """Weighted fit var = intercept + slope * <phi_N> + quad_coeff * <phi_N>^2."""

    intercept: float
    slope: float
    quad_coeff: float
    intercept_err: float
    slope_err: float
    quad_coeff_err: float
    linear_intercept: float
    linear_slope: float
    linear_slope_err: float
    chi2_dof: float

    def quadratic_significance(self):
        return abs(self.quad_coeff) / self.quad_coeff_err

    def predict(self, phi_N):
        x = np.asarray(phi_N, dtype=float)
        return self.intercept + self.slope * x + self.quad_coeff * x**2


def _wls(x, y, err, degree):
    scale = max(np.max(np.abs(x)), 1e-300)
    xs = x / scale
    A = np.vander(xs, degree + 1, increasing=True)
    w = 1.0 / err
    Aw = A * w[:, None]
    coef, *_ = np.linalg.lstsq(Aw, y * w, rcond=None)
    cov = np.linalg.pinv(Aw.T @ Aw)
    resid = (y - A @ coef) * w
    dof = max(x.size - (degree + 1), 1)
    unscale = scale ** -np.arange(degree + 1)
    coef = coef * unscale
    cov = cov * np.outer(unscale, unscale)
    return coef, np.sqrt(np.diag(cov)), float(resid @ resid / dof)


def scaling_fit(bins, which="delta", quadratic=True):
    """Fit bin variances of phi_Delta (or phi4 / phi3) against <phi_N>.

    Weights are the inverse squared jackknife errors. The returned slope is
    the effective phase shift per atom.
    """
    if len(bins) < 3:
        raise DomainError("scaling fit needs at least three bins")
    x = np.array([b.mean_phi_N for b in bins])
    y = np.array([getattr(b, {"delta": "var_delta", "4": "var4", "3": "var3"}[which]) for b in bins])
    err = np.array([getattr(b, {"delta": "var_delta_err", "4": "var4_err", "3": "var3_err"}[which])
                    for b in bins])
    if np.any(y <= 0) or np.any(err <= 0):
        raise DomainError("bin variances and their errors must be positive")
    lin, lin_err, _ = _wls(x, y, err, 1)
    if quadratic:
        coef, cerr, chi2 = _wls(x, y, err, 2)
    else:
        coef, cerr, chi2 = _wls(x, y, err, 1)
        coef = np.append(coef, 0.0)
        cerr = np.append(cerr, 0.0)
    return ScalingFit(float(coef[0]), float(coef[1]), float(coef[2]),
                      float(cerr[0]), float(cerr[1]), float(cerr[2]),
                      float(lin[0]), float(lin[1]), float(lin_err[1]), chi2)


def effective_atom_number(phi_N, phi_eff1):
    if not phi_eff1 > 0:
        raise DomainError("phase per atom must be positive")
    return phi_N / phi_eff1


def noise_level_db(var_delta, shot_noise):
    """Atomic noise above detection noise in dB; NaN when not above it."""
    if not shot_noise > 0:
        raise DomainError("shot-noise variance must be positive")
    excess = var_delta - shot_noise
    if not excess > 0:
        return NOISE_UNDEFINED
    return float(10.0 * np.log10(excess / shot_noise))


def variance_from_db(db, shot_noise):
    return shot_noise * (1.0 + 10.0 ** (db / 10.0))


def estimate_covariance(series):
    """Unbiased sample covariance of equal-length series (rows are realisations)."""
    try:
        X = np.asarray(series, dtype=float)
    except ValueError as exc:
        raise DomainError("series must have equal length") from exc
    if X.ndim != 2:
        raise DomainError("series must have equal length")
    if X.shape[0] < 2:
        raise DomainError("need at least two series")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / (X.shape[0] - 1)
    return 0.5 * (C + C.T)


@dataclass
class CovarianceDecomposition:
    C0: np.ndarray
    C1: np.ndarray
    shot_noise_level: float
    residual_quadratic_norm: float
    phi_N_range: tuple
    min_eigenvalue: float

    def reconstruct(self, phi_N):
        return self.C0 + phi_N * self.C1

    @property
    def is_psd(self):
        scale = max(np.abs(self.reconstruct(self.phi_N_range[1])).max(), 1e-300)
        return self.min_eigenvalue >= -1e-10 * scale


def decompose_covariance(groups, weights=None):
    """Element-wise regression C(phi_N) = C0 + phi_N C1 over groups.

    ``groups`` is a sequence of (phi_N, C). ``weights`` (e.g. shot counts)
    turns on weighted regression. With three or more groups a quadratic term
    is fitted as a diagnostic; ``residual_quadratic_norm`` is its Frobenius
    norm at the largest phi_N relative to that of the linear part.
    """
    phis = np.array([float(g[0]) for g in groups])
    Cs = np.array([np.asarray(g[1], dtype=float) for g in groups])
    if len(groups) < 2 or np.unique(phis).size < 2:
        raise DomainError("need at least two distinct phi_N groups")
    if np.ptp(phis) <= 1e-12 * max(np.abs(phis).max(), 1e-300):
        raise DomainError("degenerate phi_N spread")
    w = np.ones_like(phis) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    flat = Cs.reshape(len(groups), -1)
    A = np.column_stack([np.ones_like(phis), phis])
    coef, *_ = np.linalg.lstsq(A * sw[:, None], flat * sw[:, None], rcond=None)
    n = Cs.shape[1]
    C0 = coef[0].reshape(n, n)
    C1 = coef[1].reshape(n, n)
    C0 = 0.5 * (C0 + C0.T)
    C1 = 0.5 * (C1 + C1.T)
    quad = 0.0
    if np.unique(phis).size >= 3:
        A2 = np.column_stack([A, phis**2])
        c2, *_ = np.linalg.lstsq(A2 * sw[:, None], flat * sw[:, None], rcond=None)
        pmax = np.abs(phis).max()
        quad = float(np.linalg.norm(c2[2]) * pmax**2 / max(np.linalg.norm(c2[1]) * pmax, 1e-300))
    lo, hi = float(phis.min()), float(phis.max())
    min_eig = min(np.linalg.eigvalsh(C0 + p * C1).min() for p in (lo, hi))
    return CovarianceDecomposition(C0, C1, float(np.mean(np.diag(C0))), quad, (lo, hi),
                                   float(min_eig))


@dataclass(frozen=True)
class DampedCosine:
    """A exp(-t/tau) cos(2 pi t / period + phase) + offset."""

    amplitude: float
    damping_time: float
    period: float
    phase: float
    offset: float

    def __call__(self, t):
        return _damped(np.asarray(t, dtype=float), self.amplitude, self.damping_time,
                       self.period, self.phase, self.offset)


def _damped(t, a, tau, period, phase, offset):
    return a * np.exp(-t / tau) * np.cos(2 * np.pi * t / period + phase) + offset


def fit_damped_cosine(t, y, sigma=None):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    tail = y[len(y) // 2:].mean()
    # first local minimum gives the half period
    dips = np.flatnonzero((y[1:-1] < y[:-2]) & (y[1:-1] <= y[2:])) + 1
    half = t[dips[0]] if dips.size else t[-1] / 2
    best = None
    for scale in (1.0, 0.8, 1.25):
        p0 = [y[0] - tail, max(2 * half * scale, t[1]), 2 * half * scale, 0.0, tail]
        try:
            popt, _ = optimize.curve_fit(
                _damped, t, y, p0=p0, sigma=sigma, maxfev=20000,
                bounds=([-np.inf, 1e-3 * t[-1], 2 * (t[1] - t[0]), -np.pi, -np.inf],
                        [np.inf, 1e3 * t[-1], 10 * t[-1], np.pi, np.inf]))
        except RuntimeError:
            continue
        r = y - _damped(t, *popt)
        cost = np.sum((r / (1 if sigma is None else sigma)) ** 2)
        if best is None or cost < best[0]:
            best = (cost, popt)
    if best is None:
        raise FitError("damped-cosine fit did not converge")
    return DampedCosine(*map(float, best[1]))


@dataclass
class CorrelationCurve:
    lags: np.ndarray
    rho: np.ndarray
    counts: np.ndarray
    fit: DampedCosine | None

    @property
    def floor(self):
        """Late-lag level of the fitted oscillation relative to rho(0)."""
        return None if self.fit is None else self.fit.offset / self.rho[0]


def correlation_curve(C1, diag_model=None, sample_period=1.0, fit=True):
    """Average the minor diagonals of C1 normalised by sqrt(d d^T).

    ``diag_model`` defaults to the diagonal of ``C1`` itself.
    """
    C1 = np.asarray(C1, dtype=float)
    if C1.ndim != 2 or C1.shape[0] != C1.shape[1]:
        raise DomainError("C1 must be square")
    d = np.diag(C1) if diag_model is None else np.asarray(diag_model, dtype=float)
    if d.shape != (C1.shape[0],) or np.any(d <= 0):
        raise DomainError("diagonal entries must be positive")
    R = C1 / np.sqrt(np.outer(d, d))
    n = C1.shape[0]
    rho = np.array([np.diagonal(R, k).mean() for k in range(n)])
    counts = n - np.arange(n)
    lags = np.arange(n) * sample_period
    dc = None
    if fit and n >= 6:
        use = counts >= max(3, n // 4)
        dc = fit_damped_cosine(lags[use], rho[use], sigma=1 / np.sqrt(counts[use]))
    return CorrelationCurve(lags, rho, counts, dc)
