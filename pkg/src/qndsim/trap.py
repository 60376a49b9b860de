"""Radial trap potential, thermal trajectories and probe-coupling inhomogeneity.

The potential is the sum of a short-range repulsive and a longer-range
attractive evanescent tail,

    U(r) = A_b exp(-2 d / l_b) - A_r exp(-2 d / l_r),    d = r - surface_offset,

and atoms move along the single radial coordinate. Couplings decay as
``exp(-2 (r - r_min) / l_p)``, normalised to the per-atom phase at the trap
minimum.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, optimize

from . import rng as rngmod
from .constants import CESIUM_MASS, HBAR, KB, MICRO, MILLI, NANO
from .errors import DomainError, SamplingError

__all__ = [
    "TrapPotential",
    "CouplingProfile",
    "AtomState",
    "Trajectory",
    "EnsembleTrajectories",
    "evaluate_potential",
    "coupling_strength",
    "sample_thermal_state",
    "sample_thermal_ensemble",
    "simulate_trajectory",
    "simulate_ensemble",
    "time_averaged_coupling",
    "ensemble_time_averaged_coupling",
    "inhomogeneity_factor",
    "lamb_dicke",
    "recoil_frequency",
    "orbit_period",
    "default_trap",
    "default_coupling",
]


@dataclass(frozen=True)
class TrapPotential:
    repulsive_amplitude: float
    repulsive_decay_length: float
    attractive_amplitude: float
    attractive_decay_length: float
    surface_offset: float = 0.0
    mass: float = CESIUM_MASS

    def __post_init__(self):
        if min(self.repulsive_amplitude, self.attractive_amplitude) <= 0:
            raise DomainError("potential amplitudes must be positive")
        if min(self.repulsive_decay_length, self.attractive_decay_length) <= 0:
            raise DomainError("decay lengths must be positive")
        if not self.repulsive_decay_length < self.attractive_decay_length:
            raise DomainError("repulsive tail must decay faster than the attractive one")
        if self._d_min <= 0:
            raise DomainError("potential minimum lies inside the surface")

    @classmethod
    def from_shape(cls, depth, r_min, attractive_decay_length, repulsive_decay_length,
                   surface_offset=0.0, mass=CESIUM_MASS):
        """Build the potential from its depth (J, positive) and minimum position."""
        ratio = repulsive_decay_length / attractive_decay_length
        if not 0 < ratio < 1:
            raise DomainError("need 0 < repulsive_decay_length < attractive_decay_length")
        # amplitudes of both tails evaluated at r_min
        attractive_at_min = depth / (1.0 - ratio)
        repulsive_at_min = attractive_at_min * ratio
        d_min = r_min - surface_offset
        return cls(
            repulsive_amplitude=repulsive_at_min * np.exp(2 * d_min / repulsive_decay_length),
            repulsive_decay_length=repulsive_decay_length,
            attractive_amplitude=attractive_at_min * np.exp(2 * d_min / attractive_decay_length),
            attractive_decay_length=attractive_decay_length,
            surface_offset=surface_offset,
            mass=mass,
        )

    @property
    def _d_min(self):
        lb, lr = self.repulsive_decay_length, self.attractive_decay_length
        ratio = (self.repulsive_amplitude * lr) / (self.attractive_amplitude * lb)
        return np.log(ratio) / (2.0 * (1.0 / lb - 1.0 / lr))

    def __call__(self, r):
        return evaluate_potential(self, r)

    def _terms(self, r):
        d = np.asarray(r, dtype=float) - self.surface_offset
        rep = self.repulsive_amplitude * np.exp(-2.0 * d / self.repulsive_decay_length)
        att = self.attractive_amplitude * np.exp(-2.0 * d / self.attractive_decay_length)
        return rep, att

    def force(self, r):
        """Radial force -dU/dr (no domain check; used inside the integrator)."""
        rep, att = self._terms(r)
        return 2.0 * rep / self.repulsive_decay_length - 2.0 * att / self.attractive_decay_length

    def curvature(self, r):
        rep, att = self._terms(r)
        return (4.0 * rep / self.repulsive_decay_length**2
                - 4.0 * att / self.attractive_decay_length**2)

    def energy(self, r, v):
        rep, att = self._terms(r)
        return rep - att + 0.5 * self.mass * np.asarray(v, dtype=float) ** 2

    @cached_property
    def r_min(self):
        return self.surface_offset + self._d_min

    @cached_property
    def u_min(self):
        return float(evaluate_potential(self, self.r_min))

    @property
    def depth(self):
        return -self.u_min

    @cached_property
    def harmonic_frequency(self):
        """Small-oscillation angular frequency at the minimum (rad/s)."""
        return float(np.sqrt(self.curvature(self.r_min) / self.mass))

    @property
    def harmonic_period(self):
        return 2 * np.pi / self.harmonic_frequency

    def turning_points(self, energy):
        """Inner and outer turning points of a bound orbit with total ``energy`` < 0."""
        if not self.u_min < energy < 0:
            raise DomainError("orbit energy must lie between the trap bottom and zero")
        if energy - self.u_min < 1e-12 * self.depth:
            return self.r_min, self.r_min
        f = lambda r: float(evaluate_potential(self, r)) - energy
        inner_lo = self.r_min - self.repulsive_decay_length
        while f(inner_lo) < 0:
            inner_lo = self.surface_offset + 0.5 * (inner_lo - self.surface_offset)
        outer_hi = self.r_min + self.attractive_decay_length
        while f(outer_hi) < 0:
            outer_hi += self.attractive_decay_length
        return (optimize.brentq(f, inner_lo, self.r_min, xtol=1e-18),
                optimize.brentq(f, self.r_min, outer_hi, xtol=1e-18))

    def escape_radius(self, fraction=1e-6):
        """Radius beyond which the potential is shallower than ``fraction`` of the depth."""
        lr = self.attractive_decay_length
        d = -0.5 * lr * np.log(fraction * self.depth / self.attractive_amplitude)
        return self.surface_offset + max(d, self._d_min + lr)


def evaluate_potential(p, r):
    r = np.asarray(r, dtype=float)
    if np.any(r <= p.surface_offset):
        raise DomainError("radius must lie outside the fiber surface")
    rep, att = p._terms(r)
    out = rep - att
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CouplingProfile:
    peak_phase_per_atom: float
    probe_decay_length: float
    reference_position: float

    def __post_init__(self):
        if self.peak_phase_per_atom <= 0:
            raise DomainError("peak phase per atom must be positive")
        if self.probe_decay_length <= 0:
            raise DomainError("probe decay length must be positive")

    @classmethod
    def for_trap(cls, trap, peak_phase_per_atom, probe_decay_length):
        return cls(peak_phase_per_atom, probe_decay_length, trap.r_min)

    def __call__(self, r):
        return coupling_strength(self, r)

    def unchecked(self, r):
        return self.peak_phase_per_atom * np.exp(
            -2.0 * (np.asarray(r, dtype=float) - self.reference_position) / self.probe_decay_length)


def coupling_strength(c, r):
    """Phase shift (rad) imprinted by one atom at radius ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("radius must be positive")
    out = c.unchecked(r)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class AtomState:
    position: float
    velocity: float

    def __post_init__(self):
        if not self.position > 0:
            raise DomainError("atom must sit outside the fiber surface")


# --------------------------------------------------------------------------- thermal sampling

_PROPOSAL_BLOCK = 256
_MAX_PROPOSALS = 200_000
_MIN_ACCEPTANCE = 1e-3


def _proposal_window(p, temperature):
    """Radial interval holding all non-negligible bound Boltzmann weight."""
    kt = KB * temperature
    cap = min(40.0 * kt, p.depth)
    f_in = lambda r: float(evaluate_potential(p, r)) - (p.u_min + cap)
    lo = p.r_min - p.repulsive_decay_length
    while f_in(lo) < 0:
        lo = p.surface_offset + 0.5 * (lo - p.surface_offset)
    r_lo = optimize.brentq(f_in, lo, p.r_min) if cap > 0 else p.r_min
    # outward: bounded either by the Boltzmann cap or by a vanishing bound velocity range
    u_edge = max(p.u_min + cap, -1e-4 * min(kt, p.depth))
    f_out = lambda r: float(evaluate_potential(p, r)) - u_edge
    hi = p.r_min + p.attractive_decay_length
    while f_out(hi) < 0:
        hi += p.attractive_decay_length
    r_hi = optimize.brentq(f_out, p.r_min, hi)
    return r_lo, r_hi


def _rejection_draw(p, temperature, rng, window):
    kt = KB * temperature
    sigma_v = np.sqrt(kt / p.mass)
    r_lo, r_hi = window
    proposed = 0
    accepted_total = 0
    while proposed < _MAX_PROPOSALS:
        r = rng.uniform(r_lo, r_hi, _PROPOSAL_BLOCK)
        v = rng.normal(0.0, sigma_v, _PROPOSAL_BLOCK)
        u = rng.random(_PROPOSAL_BLOCK)
        pot = evaluate_potential(p, r)
        ok = (u < np.exp(-(pot - p.u_min) / kt)) & (pot + 0.5 * p.mass * v**2 < 0)
        proposed += _PROPOSAL_BLOCK
        hits = np.flatnonzero(ok)
        if hits.size:
            accepted_total += hits.size
            return AtomState(float(r[hits[0]]), float(v[hits[0]])), accepted_total / proposed
        if proposed >= 10_000 and accepted_total / proposed < _MIN_ACCEPTANCE:
            break
    raise SamplingError(
        f"bound-state acceptance below {_MIN_ACCEPTANCE:g} at T = {temperature:g} K; "
        "trap too shallow for this temperature")


def sample_thermal_state(p, temperature, rng):
    """Draw one bound atom from the 1-D Boltzmann distribution at ``temperature``.

    Proposals are uniform in radius and Maxwellian in velocity and are
    accepted with the potential Boltzmann factor, provided the total energy
    is negative.
    """
    if temperature <= 0:
        raise DomainError("temperature must be positive")
    state, _ = _rejection_draw(p, temperature, rng, _proposal_window(p, temperature))
    return state


def sample_thermal_ensemble(p, temperature, n_atoms, seed, first_index=0):
    """Sample ``n_atoms`` independent atoms; atom ``i`` uses its own substream."""
    if temperature <= 0:
        raise DomainError("temperature must be positive")
    window = _proposal_window(p, temperature)
    r = np.empty(n_atoms)
    v = np.empty(n_atoms)
    for i in range(n_atoms):
        gen = rngmod.substream(seed, rngmod.ATOMS, first_index + i)
        state, _ = _rejection_draw(p, temperature, gen, window)
        r[i], v[i] = state.position, state.velocity
    return r, v


def orbit_period(p, energy):
    """Period of the bound radial orbit with total ``energy`` (quadrature)."""
    r1, r2 = p.turning_points(energy)
    half = 0.5 * (r2 - r1)
    mid = 0.5 * (r1 + r2)

    def integrand(theta):
        r = mid + half * np.sin(theta)
        ke = energy - float(evaluate_potential(p, r))
        if ke <= 0:
            return 0.0
        return half * np.cos(theta) / np.sqrt(2.0 * ke / p.mass)

    val, _ = integrate.quad(integrand, -np.pi / 2, np.pi / 2, limit=400, epsabs=0, epsrel=1e-10)
    return 2.0 * val


# --------------------------------------------------------------------------- trajectories

@dataclass
class EnsembleTrajectories:
    """Leapfrog trajectories of many atoms on a common recording grid.

    ``positions`` and ``velocities`` have shape (n_samples, n_atoms); entries
    after an atom's escape are NaN.
    """

    time_step: float
    positions: np.ndarray
    velocities: np.ndarray
    escaped: np.ndarray
    escape_index: np.ndarray
    energy_drift: np.ndarray

    @property
    def times(self):
        return self.time_step * np.arange(self.positions.shape[0])

    @property
    def duration(self):
        return self.time_step * (self.positions.shape[0] - 1)

    def couplings(self, c):
        """Instantaneous coupling of every atom; zero once escaped."""
        phi = c.unchecked(np.nan_to_num(self.positions, nan=np.inf))
        return np.where(np.isfinite(self.positions), phi, 0.0)


@dataclass
class Trajectory:
    time_step: float
    positions: np.ndarray
    velocities: np.ndarray
    escaped: bool = False
    escape_time: float | None = None
    energy_drift: float = 0.0

    @property
    def samples(self):
        return [AtomState(float(r), float(v))
                for r, v in zip(self.positions, self.velocities) if np.isfinite(r)]

    @property
    def times(self):
        return self.time_step * np.arange(len(self.positions))

    @property
    def duration(self):
        return self.time_step * (len(self.positions) - 1)


def simulate_ensemble(r0, v0, p, dt, duration, record_every=1, escape_radius=None):
    """Integrate independent atoms with kick-drift-kick leapfrog.

    Atoms whose energy is non-negative or that leave ``[surface, escape_radius]``
    are frozen and marked escaped; the energy drift is measured against the
    larger of |E(0)| and the trap depth.
    """
    r = np.array(r0, dtype=float, ndmin=1)
    v = np.array(v0, dtype=float, ndmin=1)
    n_steps = int(round(duration / dt))
    if n_steps < 0 or not np.isclose(n_steps * dt, duration, rtol=1e-9, atol=0):
        raise DomainError("duration must be a whole number of time steps")
    if n_steps % record_every:
        raise DomainError("record_every must divide the number of steps")
    if escape_radius is None:
        escape_radius = p.escape_radius()
    m = p.mass
    n_rec = n_steps // record_every + 1
    R = np.empty((n_rec, r.size))
    V = np.empty((n_rec, r.size))
    e0 = p.energy(r, v)
    escaped = (e0 >= 0) | (r <= p.surface_offset) | (r > escape_radius)
    escape_index = np.where(escaped, 0, -1)
    safe = p.r_min
    r = np.where(escaped, safe, r)
    v = np.where(escaped, 0.0, v)
    R[0], V[0] = r, v
    drift = np.zeros(r.size)
    scale = np.maximum(np.abs(e0), p.depth)
    acc = p.force(r) / m
    half = 0.5 * dt
    for k in range(1, n_steps + 1):
        v += half * acc
        r += dt * v
        out = (r <= p.surface_offset) | (r > escape_radius)
        if out.any():
            new = out & ~escaped
            escaped |= out
            escape_index = np.where(new, (k + record_every - 1) // record_every, escape_index)
            r = np.where(out, safe, r)
            v = np.where(out, 0.0, v)
        acc = p.force(r) / m
        v += half * acc
        if k % record_every == 0:
            j = k // record_every
            R[j], V[j] = r, v
            live = ~escaped
            if live.any():
                drift[live] = np.maximum(drift[live],
                                         np.abs(p.energy(r[live], v[live]) - e0[live]) / scale[live])
    idx = np.arange(n_rec)[:, None]
    dead = escaped & (idx >= np.where(escape_index < 0, n_rec, escape_index))
    R[dead] = np.nan
    V[dead] = np.nan
    return EnsembleTrajectories(dt * record_every, R, V, escaped, escape_index, drift)


def simulate_trajectory(a, p, dt, total_time, record_every=1, escape_radius=None):
    """Leapfrog trajectory of one atom; escape is recorded, not raised."""
    if dt > p.harmonic_period / 50:
        raise DomainError("time step exceeds 1/50 of the small-oscillation period")
    ens = simulate_ensemble([a.position], [a.velocity], p, dt, total_time,
                            record_every=record_every, escape_radius=escape_radius)
    escaped = bool(ens.escaped[0])
    escape_time = float(ens.escape_index[0] * ens.time_step) if escaped else None
    return Trajectory(ens.time_step, ens.positions[:, 0], ens.velocities[:, 0],
                      escaped, escape_time, float(ens.energy_drift[0]))


def _window_average(values, time_step, window):
    """Trapezoidal mean of uniformly sampled ``values`` (axis 0) over [0, window]."""
    if window <= 0:
        return values[0]
    x = window / time_step
    n_full = int(np.floor(x + 1e-9))
    body = values[: n_full + 1]
    integral = np.trapezoid(body, dx=time_step, axis=0)
    frac = x - n_full
    if frac > 1e-9:
        tail = values[n_full] + frac * (values[n_full + 1] - values[n_full])
        integral = integral + 0.5 * frac * time_step * (values[n_full] + tail)
    return integral / window


def time_averaged_coupling(tr, c, window):
    """Mean coupling over the leading ``window`` of a trajectory."""
    if window > tr.duration * (1 + 1e-12):
        raise DomainError("averaging window exceeds the trajectory")
    r = np.asarray(tr.positions, dtype=float)
    phi = np.where(np.isfinite(r), c.unchecked(np.nan_to_num(r, nan=np.inf)), 0.0)
    return float(_window_average(phi, tr.time_step, window)) if phi.ndim == 1 else \
        _window_average(phi, tr.time_step, window)


def ensemble_time_averaged_coupling(ens, c, window):
    if window > ens.duration * (1 + 1e-12):
        raise DomainError("averaging window exceeds the trajectories")
    return _window_average(ens.couplings(c), ens.time_step, window)


def inhomogeneity_factor(couplings):
    """1 + var/mean^2 of per-atom couplings (population variance)."""
    x = np.asarray(couplings, dtype=float)
    if x.size == 0:
        raise DomainError("need at least one coupling")
    mean = x.mean()
    if not mean > 0:
        raise DomainError("mean coupling must be positive")
    return float(1.0 + x.var() / mean**2)


def lamb_dicke(omega_rec, omega_trap):
    """Squared Lamb-Dicke parameter omega_rec / omega_trap."""
    if omega_rec <= 0 or omega_trap <= 0:
        raise DomainError("frequencies must be positive")
    return omega_rec / omega_trap


def recoil_frequency(wavelength, mass):
    """Angular recoil frequency hbar k^2 / 2m."""
    k = 2 * np.pi / wavelength
    return HBAR * k**2 / (2 * mass)


# --------------------------------------------------------------------------- defaults

DEFAULT_DEPTH_UK = 90.0
DEFAULT_R_MIN_NM = 230.0
DEFAULT_ATTRACTIVE_DECAY_NM = 450.0
DEFAULT_REPULSIVE_DECAY_NM = 54.0
DEFAULT_PROBE_DECAY_NM = 170.0
DEFAULT_PHASE_PER_ATOM_MRAD = 2.0


def default_trap():
    return TrapPotential.from_shape(
        depth=DEFAULT_DEPTH_UK * MICRO * KB,
        r_min=DEFAULT_R_MIN_NM * NANO,
        attractive_decay_length=DEFAULT_ATTRACTIVE_DECAY_NM * NANO,
        repulsive_decay_length=DEFAULT_REPULSIVE_DECAY_NM * NANO,
    )


def default_coupling(trap=None):
    trap = trap or default_trap()
    return CouplingProfile.for_trap(trap, DEFAULT_PHASE_PER_ATOM_MRAD * MILLI,
                                    DEFAULT_PROBE_DECAY_NM * NANO)
