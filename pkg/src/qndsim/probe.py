"""Single-shot phase-trace synthesis.

A shot is: loading, a pi/2 pulse that projects every atom onto one clock
state, probing of the upper level, a pi pulse at ``t_flip`` that brings the
lower-level atoms into the probed level, and white detection noise on every
sample. Probe-off samples are never part of a trace.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from . import trap as trapmod
from .constants import KB, MICRO, MILLI
from .errors import DomainError

__all__ = [
    "PumpingModel",
    "ProbeSchedule",
    "RamseyContrast",
    "EnsembleConfig",
    "AtomPool",
    "ShotRecord",
    "ShotBatch",
    "mean_response",
    "two_segment_mean",
    "sample_loading",
    "apply_pulse",
    "build_atom_pool",
    "synthesize_shot",
    "synthesize_batch",
    "ramsey_contrast",
    "PI_HALF",
    "PI",
    "THREE_PI_HALF",
]

PI_HALF = np.pi / 2
PI = np.pi
THREE_PI_HALF = 3 * np.pi / 2


@dataclass(frozen=True)
class PumpingModel:
    """Mean-response parameters: gain ``beta``, pumping and loss time constants (s)."""

    beta: float = 1.6
    tau_at: float = 10 * MICRO
    tau_loss: float = 400 * MICRO

    def __post_init__(self):
        if self.beta < 1:
            raise DomainError("beta must be >= 1")
        if self.tau_at <= 0:
            raise DomainError("tau_at must be positive")
        if not self.tau_loss > self.tau_at:
            raise DomainError("tau_loss must exceed tau_at")

    def __call__(self, t):
        return mean_response(self, t)


def mean_response(m, t):
    """Normalised mean phase response (beta - (beta-1) e^{-t/tau_at}) e^{-t/tau_loss}."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("time must be non-negative")
    out = (m.beta - (m.beta - 1.0) * np.exp(-t / m.tau_at)) * np.exp(-t / m.tau_loss)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ProbeSchedule:
    segment1_duration: float = 8 * MICRO
    gap_duration: float = 32 * MICRO
    segment2_duration: float = 120 * MICRO
    sample_period: float = 0.5 * MICRO

    def __post_init__(self):
        for name in ("segment1_duration", "gap_duration", "segment2_duration"):
            val = getattr(self, name)
            k = val / self.sample_period
            if val <= 0 or abs(k - round(k)) > 1e-6:
                raise DomainError(f"{name} must be a positive multiple of the sample period")

    @property
    def t_flip(self):
        return self.segment1_duration + self.gap_duration

    @property
    def total_duration(self):
        return self.t_flip + self.segment2_duration

    @property
    def n_segment1(self):
        return int(round(self.segment1_duration / self.sample_period))

    @property
    def n_segment2(self):
        return int(round(self.segment2_duration / self.sample_period))

    @property
    def n_flip(self):
        """Index of ``t_flip`` on the uninterrupted sample grid."""
        return int(round(self.t_flip / self.sample_period))

    @property
    def n_samples(self):
        return self.n_segment1 + self.n_segment2

    def grid_indices(self):
        """Positions of the trace samples on the uninterrupted grid starting at t = 0."""
        return np.concatenate([np.arange(self.n_segment1),
                               self.n_flip + np.arange(self.n_segment2)])

    def times(self):
        return self.grid_indices() * self.sample_period

    def segment1_mask(self):
        mask = np.zeros(self.n_samples, dtype=bool)
        mask[: self.n_segment1] = True
        return mask

    def in_gap(self, t):
        t = np.asarray(t, dtype=float)
        return (t >= self.segment1_duration) & (t < self.t_flip)

    def basis(self, m):
        """Columns m(t) and m(t - t_flip)[t >= t_flip] on the trace grid."""
        t = self.times()
        b1 = mean_response(m, t)
        b2 = np.where(t >= self.t_flip, mean_response(m, np.maximum(t - self.t_flip, 0.0)), 0.0)
        return b1, b2


def two_segment_mean(m, s, phi4, phi3, t):
    """Two-segment mean trace; NaN marks probe-off times."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > s.total_duration):
        raise DomainError("time outside the schedule")
    first = phi4 * mean_response(m, t)
    second = phi3 * mean_response(m, np.maximum(t - s.t_flip, 0.0))
    out = np.where(t >= s.t_flip, first + second, first)
    out = np.where(s.in_gap(t), np.nan, out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RamseyContrast:
    eta0: float = 0.55
    eta_inf: float = 0.65
    tau_rec: float = 60 * MICRO

    def __post_init__(self):
        for v in (self.eta0, self.eta_inf):
            if not 0.0 <= v <= 1.0:
                raise DomainError("contrast values must lie in [0, 1]")
        if self.tau_rec <= 0:
            raise DomainError("recovery time must be positive")

    def __call__(self, t):
        return ramsey_contrast(t, self)


def ramsey_contrast(t, params):
    """Fringe contrast eta_inf - (eta_inf - eta0) e^{-t/tau_rec}."""
    if isinstance(params, dict):
        params = RamseyContrast(**params)
    else:
        RamseyContrast.__post_init__(params)
    t = np.asarray(t, dtype=float)
    out = params.eta_inf - (params.eta_inf - params.eta0) * np.exp(-t / params.tau_rec)
    return float(out) if out.ndim == 0 else out


LOADING_MODELS = ("poisson", "fixed", "scaled", "uniform")
COUPLING_MODELS = ("homogeneous", "thermal")


@dataclass(frozen=True)
class EnsembleConfig:
    """Everything needed to synthesise shots of one ensemble.

    ``phase_shot_noise`` is the white detection noise per trace sample (rad).
    With ``coupling_model="homogeneous"`` every atom shifts the phase by the
    peak coupling; ``"thermal"`` draws atoms from a pool of thermal
    trajectories, using their time-averaged coupling unless
    ``motion_enabled`` is set, in which case the full time dependence is used.
    """

    mean_atom_number: float = 750.0
    loading: str = "poisson"
    loading_scale: float = 1.0
    loading_range: tuple = (50, 1500)
    temperature: float = 90 * MICRO
    phase_shot_noise: float = 1.4 * MILLI
    trap: trapmod.TrapPotential = field(default_factory=trapmod.default_trap)
    coupling: trapmod.CouplingProfile | None = None
    pumping: PumpingModel = field(default_factory=PumpingModel)
    coupling_model: str = "homogeneous"
    motion_enabled: bool = False
    coupling_multiplier: float = 1.0
    pulse_amplitude_error: float = 0.0
    preparation_pulse: float = PI_HALF
    pool_size: int = 8192
    integrator_substeps: int = 64
    pool_time_span: float = 160 * MICRO

    def __post_init__(self):
        if self.mean_atom_number < 0:
            raise DomainError("mean atom number must be non-negative")
        if self.phase_shot_noise <= 0:
            raise DomainError("phase shot noise must be positive")
        if self.loading not in LOADING_MODELS:
            raise DomainError(f"unknown loading model {self.loading!r}")
        if self.coupling_model not in COUPLING_MODELS:
            raise DomainError(f"unknown coupling model {self.coupling_model!r}")
        if self.motion_enabled and self.coupling_model != "thermal":
            raise DomainError("motion requires the thermal coupling model")
        if self.pool_time_span < 0:
            raise DomainError("pool time span must be non-negative")
        if self.coupling_multiplier <= 0:
            raise DomainError("coupling multiplier must be positive")
        if self.coupling is None:
            object.__setattr__(self, "coupling", trapmod.default_coupling(self.trap))

    @property
    def effective_coupling(self):
        c = self.coupling
        if self.coupling_multiplier == 1.0:
            return c
        return replace(c, peak_phase_per_atom=c.peak_phase_per_atom * self.coupling_multiplier)

    def with_(self, **kw):
        return replace(self, **kw)


def sample_loading(cfg, rng):
    """Draw the loaded atom number for one shot."""
    mean = cfg.mean_atom_number
    if cfg.loading == "fixed":
        return int(round(mean))
    if cfg.loading == "poisson":
        return int(rng.poisson(mean))
    if cfg.loading == "uniform":
        lo, hi = cfg.loading_range
        return int(rng.integers(int(lo), int(hi) + 1))
    # scaled: variance kappa * mean, realised as a negative binomial (kappa > 1)
    # or a binomial (kappa < 1) with the requested mean
    kappa = cfg.loading_scale
    if mean == 0:
        return 0
    if np.isclose(kappa, 1.0):
        return int(rng.poisson(mean))
    if kappa > 1:
        p = 1.0 / kappa
        return int(rng.negative_binomial(mean * p / (1 - p), p))
    n = int(round(mean / (1 - kappa)))
    return int(rng.binomial(n, mean / n))


def apply_pulse(n4, n3, angle, rng, amplitude_error=0.0):
    """Populations after a resonant pulse of rotation ``angle``.

    Each atom independently ends in the other clock state with probability
    sin^2(angle (1 + amplitude_error) / 2); a perfect pi pulse swaps the
    populations, a pi/2 or 3pi/2 pulse projects every atom with probability 1/2.
    """
    if not any(np.isclose(angle, a) for a in (PI_HALF, PI, THREE_PI_HALF)):
        raise DomainError("supported pulse angles are pi/2, pi and 3pi/2")
    p = np.sin(0.5 * angle * (1.0 + amplitude_error)) ** 2
    if np.isclose(p, 1.0, rtol=0, atol=1e-15):
        return int(n3), int(n4)
    flip4 = rng.binomial(int(n4), p)
    flip3 = rng.binomial(int(n3), p)
    return int(n4 - flip4 + flip3), int(n3 - flip3 + flip4)


@dataclass
class AtomPool:
    """Thermal trajectories of a fixed atom sample, as couplings on the sample grid.

    ``series`` has shape (n_atoms, n_records) and covers the probe window plus
    ``pool_time_span``. Each drawn atom enters a shot at a random record
    offset, so the shot-averaged coupling is stationary even though the pool
    is finite. ``static`` is each atom's mean over its whole record.
    """

    series: np.ndarray
    static: np.ndarray
    escaped: np.ndarray
    energy_drift: float
    grid: np.ndarray
    max_offset: int

    @property
    def size(self):
        return self.static.size

    def window(self, atoms, offsets):
        """Coupling series of the given atoms on the probe grid, shape (n, n_samples)."""
        return self.series[atoms[:, None], offsets[:, None] + self.grid[None, :]]


def build_atom_pool(cfg, schedule, seed):
    trap = cfg.trap
    r, v = trapmod.sample_thermal_ensemble(trap, cfg.temperature, cfg.pool_size,
                                           rngmod.child_seed(seed, rngmod.ATOMS))
    dt = schedule.sample_period / cfg.integrator_substeps
    extra = int(np.floor(cfg.pool_time_span / schedule.sample_period + 1e-9))
    ens = trapmod.simulate_ensemble(r, v, trap, dt,
                                    schedule.total_duration + extra * schedule.sample_period,
                                    record_every=cfg.integrator_substeps)
    series = np.ascontiguousarray(ens.couplings(cfg.effective_coupling).T)
    grid = schedule.grid_indices()
    max_offset = series.shape[1] - 1 - int(grid[-1])
    return AtomPool(series, series.mean(axis=1), ens.escaped, float(ens.energy_drift.max()),
                    grid, max_offset)


@dataclass
class ShotRecord:
    trace: np.ndarray
    schedule: ProbeSchedule
    n_total: int
    n4: int
    n3: int
    phi4_true: float
    phi3_true: float
    seed: tuple
    couplings4: np.ndarray | None = None
    couplings3: np.ndarray | None = None


@dataclass
class ShotBatch:
    """Many shots of one configuration; row ``i`` is shot ``first_index + i``."""

    traces: np.ndarray
    schedule: ProbeSchedule
    n_total: np.ndarray
    n4: np.ndarray
    n3: np.ndarray
    phi4_true: np.ndarray
    phi3_true: np.ndarray
    seed: int
    first_index: int = 0

    def __len__(self):
        return self.traces.shape[0]

    def shot(self, i):
        return ShotRecord(self.traces[i], self.schedule, int(self.n_total[i]), int(self.n4[i]),
                          int(self.n3[i]), float(self.phi4_true[i]), float(self.phi3_true[i]),
                          (self.seed, self.first_index + i))


def _needs_pool(cfg):
    return cfg.coupling_model == "thermal"


def _shot(cfg, schedule, rng, basis, pool, keep_atoms=False):
    n = sample_loading(cfg, rng)
    n4, n3 = apply_pulse(0, n, cfg.preparation_pulse, rng, cfg.pulse_amplitude_error)
    b1, b2 = basis
    c4 = c3 = None
    if pool is None:
        phi1 = cfg.effective_coupling.peak_phase_per_atom
        mean = phi1 * (n4 * b1 + n3 * b2)
        phi4, phi3 = n4 * phi1, n3 * phi1
    else:
        i4 = rng.integers(pool.size, size=n4)
        i3 = rng.integers(pool.size, size=n3)
        if cfg.motion_enabled:
            s4 = pool.window(i4, rng.integers(pool.max_offset + 1, size=n4)).sum(axis=0)
            s3 = pool.window(i3, rng.integers(pool.max_offset + 1, size=n3)).sum(axis=0)
        else:
            s4 = np.full(b1.size, pool.static[i4].sum())
            s3 = np.full(b1.size, pool.static[i3].sum())
        mean = s4 * b1 + s3 * b2
        c4, c3 = pool.static[i4], pool.static[i3]
        phi4, phi3 = float(c4.sum()), float(c3.sum())
    trace = mean + rng.normal(0.0, cfg.phase_shot_noise, b1.size)
    if not keep_atoms:
        c4 = c3 = None
    return trace, n, n4, n3, phi4, phi3, c4, c3


def synthesize_shot(cfg, schedule, rng, pool=None, seed=None):
    """Simulate one shot with the given generator.

    For thermal coupling a pool must be supplied (see ``build_atom_pool``).
    """
    if _needs_pool(cfg) and pool is None:
        raise DomainError("thermal coupling needs an atom pool")
    basis = schedule.basis(cfg.pumping)
    trace, n, n4, n3, phi4, phi3, c4, c3 = _shot(
        cfg, schedule, rng, basis, pool if _needs_pool(cfg) else None, keep_atoms=True)
    if c4 is None:
        phi1 = cfg.effective_coupling.peak_phase_per_atom
        c4, c3 = np.full(n4, phi1), np.full(n3, phi1)
    return ShotRecord(trace, schedule, n, n4, n3, phi4, phi3, seed, c4, c3)


def synthesize_batch(cfg, schedule, n_shots, seed, pool=None, first_index=0, stream=rngmod.SHOTS):
    """Simulate shots ``first_index .. first_index + n_shots - 1``.

    Shot ``i`` draws from ``substream(seed, stream, i)``, so any split of a
    batch reproduces the same shots.
    """
    if _needs_pool(cfg) and pool is None:
        pool = build_atom_pool(cfg, schedule, seed)
    basis = schedule.basis(cfg.pumping)
    traces = np.empty((n_shots, schedule.n_samples))
    ints = np.empty((n_shots, 3), dtype=np.int64)
    phis = np.empty((n_shots, 2))
    use_pool = pool if _needs_pool(cfg) else None
    for k in range(n_shots):
        gen = rngmod.substream(seed, stream, first_index + k)
        trace, n, n4, n3, phi4, phi3, _, _ = _shot(cfg, schedule, gen, basis, use_pool)
        traces[k] = trace
        ints[k] = n, n4, n3
        phis[k] = phi4, phi3
    return ShotBatch(traces, schedule, ints[:, 0], ints[:, 1], ints[:, 2],
                     phis[:, 0], phis[:, 1], seed, first_index)
