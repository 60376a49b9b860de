"""Matched filtering, linear QND conditioning and the Wineland criterion."""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import estimation, noise
from . import rng as rngmod
from .errors import DomainError
from .probe import RamseyContrast, mean_response, ramsey_contrast, synthesize_batch

__all__ = [
    "SignalModel",
    "FilterResult",
    "SqueezingVerdict",
    "QNDPairs",
    "build_signal",
    "snr",
    "optimal_mode",
    "conditional_variance",
    "wineland_check",
    "qnd_protocol",
    "CONDITION_LIMIT",
]

CONDITION_LIMIT = 1e8


@dataclass(frozen=True)
class SignalModel:
    times: np.ndarray
    s: np.ndarray

    def __len__(self):
        return self.s.size


def build_signal(phi_N, m, eta, times):
    """Decoherence-weighted signal phi_N m(t) eta(t) on ``times``.

    ``eta`` is a ``RamseyContrast``, a parameter dict, an array matching
    ``times`` or ``None`` for unit contrast.
    """
    t = np.asarray(times, dtype=float)
    if eta is None:
        e = np.ones_like(t)
    elif isinstance(eta, (RamseyContrast, dict)):
        e = np.asarray(ramsey_contrast(t, eta), dtype=float)
    else:
        e = np.asarray(eta, dtype=float)
        if e.shape != t.shape:
            raise DomainError("contrast samples do not match the time grid")
    s = phi_N * np.asarray(mean_response(m, t)) * e
    if not np.all(np.isfinite(s)):
        raise DomainError("signal must be finite")
    return SignalModel(t, np.atleast_1d(s))


def _vec(s):
    return np.asarray(s.s if isinstance(s, SignalModel) else s, dtype=float)


def snr(q, s, C):
    """Rayleigh-type quotient (q.s)^2 / (q^T C q)."""
    q = np.asarray(q, dtype=float)
    sv = _vec(s)
    C = np.asarray(C, dtype=float)
    if q.shape != sv.shape or C.shape != (sv.size, sv.size):
        raise DomainError("dimensions of mode, signal and covariance disagree")
    den = q @ C @ q
    if not den > 0:
        raise DomainError("mode has zero noise power")
    return float((q @ sv) ** 2 / den)


@dataclass(frozen=True)
class FilterResult:
    q_opt: np.ndarray
    snr: float
    condition_used: float
    regularization: float


def _check_psd(C):
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DomainError("covariance must be square")
    scale = np.abs(C).max()
    if not np.allclose(C, C.T, rtol=0, atol=1e-10 * scale):
        raise DomainError("covariance must be symmetric")
    w = np.linalg.eigvalsh(0.5 * (C + C.T))
    if w[0] < -1e-10 * max(w[-1], 1e-300):
        raise DomainError("covariance is not positive semi-definite")
    return w


def optimal_mode(C, s, regularization=None, epsilon=1e-9):
    """Matched filter q = C^-1 s, normalised to unit length.

    A shift ``epsilon * tr(C) / n`` is added to the diagonal when the
    condition number exceeds ``CONDITION_LIMIT``; passing ``regularization``
    forces that absolute shift instead.
    """
    C = np.asarray(C, dtype=float)
    sv = _vec(s)
    if C.shape != (sv.size, sv.size):
        raise DomainError("dimensions of signal and covariance disagree")
    if not np.any(sv):
        raise DomainError("signal is identically zero")
    w = _check_psd(C)
    cond = np.inf if w[0] <= 0 else w[-1] / w[0]
    shift = 0.0
    if regularization is not None:
        shift = float(regularization)
    elif cond > CONDITION_LIMIT:
        shift = epsilon * np.trace(C) / C.shape[0]
    Cr = 0.5 * (C + C.T) + shift * np.eye(sv.size)
    q = linalg.solve(Cr, sv, assume_a="pos")
    q = q / np.linalg.norm(q)
    used = (w[-1] + shift) / (w[0] + shift) if w[0] + shift > 0 else np.inf
    return FilterResult(q, snr(q, sv, C if w[0] > 0 else Cr), float(used), shift)


def conditional_variance(pre, final):
    """Residual variance of ``final`` after optimal linear prediction from ``pre``."""
    x = np.asarray(pre, dtype=float)
    y = np.asarray(final, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("pre and final estimates must be paired 1-D sequences")
    if x.size < 100:
        raise DomainError("need at least 100 pairs")
    vx = x.var(ddof=1)
    if not vx > 0:
        raise DomainError("pre-measurement has zero variance")
    cxy = np.cov(x, y, ddof=1)[0, 1]
    resid = y - (cxy / vx) * x
    return float(resid.var(ddof=1))


@dataclass(frozen=True)
class SqueezingVerdict:
    conditional_variance: float
    contrast: float
    xi_squared: float
    improves: bool


def wineland_check(var_cond, var_css, eta):
    """xi^2 = (var_cond / var_css) / eta^2; squeezing is useful when xi^2 < 1."""
    if var_cond < 0 or not var_css > 0:
        raise DomainError("variances must be positive")
    if not 0 < eta <= 1:
        raise DomainError("contrast must lie in (0, 1]")
    xi2 = (var_cond / var_css) / eta**2
    return SqueezingVerdict(float(var_cond), float(eta), float(xi2), bool(xi2 < 1))


@dataclass
class QNDPairs:
    """Held-out (pre, final) estimates of phi_Delta plus what produced them."""

    pre: np.ndarray
    final: np.ndarray
    phi_N: np.ndarray
    mode: FilterResult
    covariance: np.ndarray
    contrast: float

    @property
    def correlation(self):
        return float(np.corrcoef(self.pre, self.final)[0, 1])

    def verdict(self):
        var_final = float(self.final.var(ddof=1))
        return wineland_check(conditional_variance(self.pre, self.final), var_final, self.contrast)


def effective_contrast(schedule, eta):
    """Mean fringe contrast over the final-measurement samples, timed from probe restart."""
    if eta is None:
        return 1.0
    t = schedule.times()[~schedule.segment1_mask()] - schedule.t_flip
    return float(np.mean(ramsey_contrast(t, eta)))


def qnd_protocol(cfg, schedule, shots, seed, pool=None, eta=None, training_fraction=0.5):
    """Simulate pre/final measurement pairs.

    The pre-measurement is the matched-filter estimate of phi_Delta from the
    first probe segment; its mode comes from the segment covariance of a
    training subset of shots. The final estimate is the two-segment fit
    restricted to the second segment. Pairs are returned for the held-out
    shots only.
    """
    batch = synthesize_batch(cfg, schedule, shots, seed, pool=pool, stream=rngmod.QND)
    m = cfg.pumping
    full = estimation.fit_batch(batch.traces, schedule, m)
    dphi = estimation.segment_fluctuations(batch.traces, schedule, m, full.phi_N)
    late = estimation.fit_batch(batch.traces, schedule, m, include_segment1=False)
    n_train = int(round(training_fraction * shots))
    if n_train < 2 or shots - n_train < 100:
        raise DomainError("too few shots for training and evaluation")
    C = noise.estimate_covariance(dphi[:n_train])
    mhat = schedule.basis(m)[0][schedule.segment1_mask()]
    t1 = schedule.times()[schedule.segment1_mask()]
    sig = build_signal(float(full.phi_N[:n_train].mean()), m, None, t1)
    mode = optimal_mode(C, sig)
    q = mode.q_opt
    pre = 2.0 * (dphi[n_train:] @ q) / (q @ mhat)
    final = late.phi_Delta[n_train:]
    return QNDPairs(pre, final, full.phi_N[n_train:], mode, C, effective_contrast(schedule, eta))
