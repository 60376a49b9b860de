"""Linear least-squares population estimates from two-segment traces."""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FitError

__all__ = [
    "EstimatePair",
    "EstimateTable",
    "fit_shot",
    "fit_batch",
    "derive_estimators",
    "populations_from_estimators",
    "segment_fluctuations",
    "gram_matrix",
    "estimator_covariance",
    "delta_noise_variance",
    "CONDITION_WARNING",
]

CONDITION_WARNING = 1e6


@dataclass(frozen=True)
class EstimatePair:
    phi4: float
    phi3: float
    phi_N: float
    phi_Delta: float
    fit_residual_rms: float
    gram_condition: float

    @property
    def ill_conditioned(self):
        return self.gram_condition > CONDITION_WARNING


@dataclass
class EstimateTable:
    """Column-wise estimates for a batch of shots."""

    phi4: np.ndarray
    phi3: np.ndarray
    residual_rms: np.ndarray
    gram_condition: float

    @property
    def phi_N(self):
        return self.phi4 + self.phi3

    @property
    def phi_Delta(self):
        return self.phi4 - self.phi3

    @property
    def ill_conditioned(self):
        return self.gram_condition > CONDITION_WARNING

    def __len__(self):
        return self.phi4.size

    def __getitem__(self, i):
        return EstimatePair(float(self.phi4[i]), float(self.phi3[i]), float(self.phi_N[i]),
                            float(self.phi_Delta[i]), float(self.residual_rms[i]),
                            self.gram_condition)

    def select(self, mask):
        return EstimateTable(self.phi4[mask], self.phi3[mask], self.residual_rms[mask],
                             self.gram_condition)


def derive_estimators(phi4, phi3):
    """Total-number and difference estimators (phi4 + phi3, phi4 - phi3)."""
    return phi4 + phi3, phi4 - phi3


def populations_from_estimators(phi_N, phi_Delta):
    return 0.5 * (phi_N + phi_Delta), 0.5 * (phi_N - phi_Delta)


def _design(schedule, m, include_segment1):
    b1, b2 = schedule.basis(m)
    keep = np.ones(b1.size, dtype=bool) if include_segment1 else ~schedule.segment1_mask()
    return np.column_stack([b1, b2]), keep


def gram_matrix(schedule, m, include_segment1=True, weights=None):
    B, keep = _design(schedule, m, include_segment1)
    B = B[keep]
    if weights is None:
        return B.T @ B
    W = np.asarray(weights)[np.ix_(keep, keep)]
    return B.T @ W @ B


def _solve2(G):
    a, b, d = G[0, 0], G[0, 1], G[1, 1]
    det = a * d - b * b
    if not det > 1e-12 * max(a * d, 1e-300):
        raise FitError("singular Gram matrix; both basis functions must be sampled")
    inv = np.array([[d, -b], [-b, a]]) / det
    # closed-form eigenvalues of a symmetric 2x2 matrix
    half_tr = 0.5 * (a + d)
    disc = np.hypot(0.5 * (a - d), b)
    cond = (half_tr + disc) / (half_tr - disc)
    return inv, float(cond)


def fit_batch(traces, schedule, m, include_segment1=True, weights=None):
    """Fit every row of ``traces`` against m(t) and m(t - t_flip).

    ``weights`` optionally supplies a (n_samples x n_samples) weight matrix,
    e.g. an inverse covariance, for generalised least squares.
    """
    Y = np.atleast_2d(np.asarray(traces, dtype=float))
    if Y.shape[1] != schedule.n_samples:
        raise DomainError("trace length does not match the schedule")
    if not np.all(np.isfinite(Y)):
        raise DomainError("traces contain NaN or infinite samples")
    B, keep = _design(schedule, m, include_segment1)
    B = B[keep]
    Yk = Y[:, keep]
    if weights is None:
        G = B.T @ B
        rhs = Yk @ B
    else:
        W = np.asarray(weights)[np.ix_(keep, keep)]
        G = B.T @ W @ B
        rhs = Yk @ (W @ B)
    Ginv, cond = _solve2(G)
    coef = rhs @ Ginv
    resid = Yk - coef @ B.T
    rms = np.sqrt(np.mean(resid**2, axis=1))
    if cond > CONDITION_WARNING:
        warnings.warn(f"ill-conditioned fit (condition number {cond:.3g})", RuntimeWarning)
    return EstimateTable(coef[:, 0], coef[:, 1], rms, cond)


def fit_shot(trace, m, schedule=None, include_segment1=True, weights=None):
    """Least-squares (phi4, phi3) for one shot.

    ``trace`` is a ``ShotRecord`` or a bare array (then ``schedule`` is required).
    """
    if schedule is None:
        schedule = trace.schedule
        trace = trace.trace
    return fit_batch(trace, schedule, m, include_segment1, weights)[0]


def estimator_covariance(schedule, m, sigma, include_segment1=True):
    """Covariance sigma^2 G^-1 of (phi4, phi3) under white sample noise."""
    Ginv, _ = _solve2(gram_matrix(schedule, m, include_segment1))
    return sigma**2 * Ginv


def delta_noise_variance(schedule, m, sigma, include_segment1=True):
    """Variance of phi4 - phi3 produced by white sample noise alone."""
    cov = estimator_covariance(schedule, m, sigma, include_segment1)
    return float(cov[0, 0] + cov[1, 1] - 2 * cov[0, 1])


def segment_fluctuations(traces, schedule, m, phi_N):
    """Pre-flip samples minus their expectation (phi_N / 2) m(t)."""
    Y = np.asarray(traces, dtype=float)
    mask = schedule.segment1_mask()
    mhat = schedule.basis(m)[0][mask]
    phi_N = np.asarray(phi_N, dtype=float)
    if Y.ndim == 1:
        return Y[mask] - 0.5 * phi_N * mhat
    return Y[:, mask] - 0.5 * phi_N[:, None] * mhat[None, :]
