import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from qndsim.errors import DomainError
from qndsim.probe import EnsembleConfig, ProbeSchedule, PumpingModel, RamseyContrast
from qndsim.qnd import (build_signal, conditional_variance, effective_contrast, optimal_mode,
                        qnd_protocol, snr, wineland_check)

elements = st.floats(-1, 1, allow_nan=False, allow_infinity=False)


def _psd(A, floor=1e-3):
    return A @ A.T + floor * np.eye(A.shape[0])


def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z**2)
    phi = np.pi * (1 + 5**0.5) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


@given(arrays(float, (3, 3), elements=elements), arrays(float, 3, elements=elements))
def test_matches_sphere_search(A, s):
    if np.linalg.norm(s) < 1e-2:
        s = s + np.array([1.0, 0.0, 0.0])
    C = _psd(A, 0.05)
    res = optimal_mode(C, s)
    Q = _fibonacci_sphere(200_000)
    brute = ((Q @ s) ** 2 / np.einsum("ij,jk,ik->i", Q, C, Q)).max()
    assert res.snr == pytest.approx(brute, rel=1e-3)
    assert res.snr >= brute * (1 - 1e-12)
    # closed form s^T C^-1 s
    assert res.snr == pytest.approx(s @ np.linalg.solve(C, s), rel=1e-10)


@given(arrays(float, (8, 8), elements=elements), arrays(float, 8, elements=elements),
       st.integers(0, 2**32 - 1))
def test_beats_random_modes(A, s, seed):
    if np.linalg.norm(s) < 1e-2:
        s = s + 1.0
    C = _psd(A)
    best = optimal_mode(C, s).snr
    Q = np.random.default_rng(seed).standard_normal((1000, 8))
    Q /= np.linalg.norm(Q, axis=1, keepdims=True)
    vals = (Q @ s) ** 2 / np.einsum("ij,jk,ik->i", Q, C, Q)
    assert np.all(vals <= best * (1 + 1e-9))


def test_white_noise_mode_is_signal():
    s = np.linspace(1, 2, 10)
    res = optimal_mode(2.0 * np.eye(10), s)
    np.testing.assert_allclose(res.q_opt, s / np.linalg.norm(s), rtol=1e-12)
    assert res.regularization == 0.0


def test_regularisation_of_singular_covariance():
    v = np.array([1.0, -1.0, 0.0])
    C = np.outer(v, v)
    res = optimal_mode(C, np.array([1.0, 1.0, 1.0]))
    assert res.regularization > 0
    assert np.isfinite(res.snr)


def test_rejects_bad_covariance():
    with pytest.raises(DomainError):
        optimal_mode(np.array([[1.0, 0.0], [0.0, -1.0]]), np.ones(2))
    with pytest.raises(DomainError):
        optimal_mode(np.array([[1.0, 0.5], [0.0, 1.0]]), np.ones(2))
    with pytest.raises(DomainError):
        optimal_mode(np.eye(2), np.zeros(2))
    with pytest.raises(DomainError):
        snr(np.ones(3), np.ones(2), np.eye(2))


def test_signal_model():
    m = PumpingModel()
    t = np.linspace(0, 8e-6, 17)
    s = build_signal(0.6, m, None, t)
    assert s.s[0] == pytest.approx(0.6)
    eta = RamseyContrast()
    s2 = build_signal(0.6, m, eta, t)
    assert s2.s[0] == pytest.approx(0.6 * eta.eta0)
    with pytest.raises(DomainError):
        build_signal(0.6, m, np.ones(3), t)


@pytest.mark.parametrize("rho", [0.0, 0.5, 0.95])
def test_conditional_variance_gaussian(rho, rng):
    # closed form: var(y | x) = var(y) (1 - rho^2)
    C = np.array([[1.0, rho * 2.0], [rho * 2.0, 4.0]])
    x, y = rng.multivariate_normal([0, 0], C, 100_000).T
    assert conditional_variance(x, y) == pytest.approx(4.0 * (1 - rho**2), rel=0.02, abs=0.01)


def test_conditional_variance_errors():
    with pytest.raises(DomainError):
        conditional_variance(np.ones(50), np.ones(50))
    with pytest.raises(DomainError):
        conditional_variance(np.ones(200), np.arange(200.0))


def test_wineland():
    v = wineland_check(0.25, 1.0, 0.5)
    assert v.xi_squared == pytest.approx(1.0) and not v.improves
    assert wineland_check(0.1, 1.0, 0.9).improves
    with pytest.raises(DomainError):
        wineland_check(0.1, 1.0, 0.0)


def test_effective_contrast(schedule):
    assert effective_contrast(schedule, None) == 1.0
    eta = RamseyContrast(0.5, 0.5, 1e-5)
    assert effective_contrast(schedule, eta) == pytest.approx(0.5)


def test_protocol_homogeneous_pairs_correlate():
    s = ProbeSchedule()
    cfg = EnsembleConfig(mean_atom_number=750, loading="fixed", coupling_multiplier=3.0)
    pairs = qnd_protocol(cfg, s, 600, seed=2)
    assert pairs.pre.size == 300
    assert pairs.correlation > 0.9
    assert pairs.verdict().improves


def test_snr_elementary_cases():
    s = np.array([1.0, 2.0, 0.0])
    assert snr(np.array([0.0, 0.0, 1.0]), s, np.eye(3)) == 0.0
    assert snr(s, s, np.eye(3)) == pytest.approx(s @ s)


@given(arrays(float, (5, 5), elements=elements), arrays(float, 5, elements=elements),
       st.floats(0.01, 100))
def test_mode_scale_invariance(A, s, c):
    if np.linalg.norm(s) < 1e-2:
        s = s + 1.0
    C = _psd(A)
    a, b = optimal_mode(C, s), optimal_mode(c * C, s)
    np.testing.assert_allclose(a.q_opt, b.q_opt, atol=1e-8)
    assert b.snr == pytest.approx(a.snr / c, rel=1e-8)
    assert snr(-3.0 * a.q_opt, s, C) == pytest.approx(a.snr, rel=1e-12)


def test_tikhonov_limit(rng):
    A = rng.standard_normal((6, 6))
    C = _psd(A, 0.5)
    s = rng.standard_normal(6)
    plain = optimal_mode(C, s).q_opt
    tiny = optimal_mode(C, s, regularization=1e-12).q_opt
    assert np.linalg.norm(tiny - plain) / np.linalg.norm(plain) < 1e-6


def test_injected_correlation_reduction(rng):
    x, y = rng.multivariate_normal([0, 0], [[1, 0.6], [0.6, 1]], 200_000).T
    assert conditional_variance(x, y) / np.var(y, ddof=1) == pytest.approx(0.64, rel=0.05)


@given(st.floats(0.0, 0.99), st.floats(0.0, 0.99), st.floats(0.3, 1.0))
def test_xi_monotone_in_rho(r1, r2, eta):
    lo, hi = sorted((r1, r2))
    assert wineland_check(1 - hi**2, 1.0, eta).xi_squared <= \
        wineland_check(1 - lo**2, 1.0, eta).xi_squared


def test_protocol_gaussian_conditioning_oracle():
    # motion off, unit contrast: both estimates are phi_Delta plus independent noise
    from qndsim import rng as rngmod
    from qndsim.probe import synthesize_batch
    s = ProbeSchedule()
    cfg = EnsembleConfig(mean_atom_number=300, loading="fixed", phase_shot_noise=4e-3)
    pairs = qnd_protocol(cfg, s, 4000, seed=8)
    b = synthesize_batch(cfg, s, 4000, 8, stream=rngmod.QND)
    truth = (b.phi4_true - b.phi3_true)[2000:]
    v_at = truth.var(ddof=1)
    v_pre = np.var(pairs.pre - truth, ddof=1)
    v_fin = np.var(pairs.final - truth, ddof=1)
    rho2 = v_at**2 / ((v_at + v_pre) * (v_at + v_fin))
    assert pairs.correlation**2 == pytest.approx(rho2, abs=0.02)
    assert conditional_variance(pairs.pre, pairs.final) <= pairs.final.var(ddof=1)


def test_protocol_noise_dominated_pairs_decorrelate():
    s = ProbeSchedule()
    cfg = EnsembleConfig(mean_atom_number=50, loading="fixed", phase_shot_noise=1.0)
    pairs = qnd_protocol(cfg, s, 1000, seed=3)
    assert abs(pairs.correlation) < 0.15
