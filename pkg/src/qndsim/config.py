"""Pipeline configuration: JSON sections with units in the key names."""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields

from . import __version__
from .constants import KB, MICRO, MILLI, NANO
from .errors import ConfigError, DomainError
from .probe import EnsembleConfig, ProbeSchedule, PumpingModel, RamseyContrast
from .trap import CouplingProfile, TrapPotential
from . import trap as trapmod

__all__ = ["PipelineConfig", "load_config", "config_hash", "ENV_PREFIX", "SCHEMA_VERSION"]

SCHEMA_VERSION = __version__
ENV_PREFIX = "QNDSIM_"


@dataclass
class TrapSection:
    depth_uK: float = trapmod.DEFAULT_DEPTH_UK
    r_min_nm: float = trapmod.DEFAULT_R_MIN_NM
    attractive_decay_nm: float = trapmod.DEFAULT_ATTRACTIVE_DECAY_NM
    repulsive_decay_nm: float = trapmod.DEFAULT_REPULSIVE_DECAY_NM


@dataclass
class CouplingSection:
    peak_phase_per_atom_mrad: float = trapmod.DEFAULT_PHASE_PER_ATOM_MRAD
    probe_decay_nm: float = trapmod.DEFAULT_PROBE_DECAY_NM


@dataclass
class PumpingSection:
    beta: float = 1.6
    tau_at_us: float = 10.0
    tau_loss_us: float = 400.0
    # versioned model written by the calibrate stage; used by fit when present
    model_file: str | None = None


@dataclass
class ScheduleSection:
    segment1_us: float = 8.0
    gap_us: float = 32.0
    segment2_us: float = 120.0
    sample_period_us: float = 0.5


@dataclass
class RamseySection:
    eta0: float = 0.55
    eta_inf: float = 0.65
    tau_rec_us: float = 60.0


@dataclass
class EnsembleSection:
    mean_atom_number: float = 750.0
    loading: str = "poisson"
    loading_scale: float = 1.0
    temperature_uK: float = 90.0
    phase_shot_noise_mrad: float = 1.4
    coupling_model: str = "thermal"
    motion: bool = True
    coupling_multiplier: float = 1.0
    pulse_amplitude_error: float = 0.0
    pool_size: int = 8192
    integrator_substeps: int = 64
    pool_time_span_us: float = 160.0


@dataclass
class NoiseScanSection:
    atom_number_min: int = 50
    atom_number_max: int = 1500
    bin_size: int = 200
    reference_shots: int = 2000
    coupling_model: str = "homogeneous"
    motion: bool = False


@dataclass
class CovarianceSection:
    segment1_us: float = 40.0
    phi_N_targets_rad: list = field(default_factory=lambda: [0.32, 0.64, 0.96])
    shots_per_group: int = 3000
    empty_shots: int = 5000
    reference_phi_N_rad: float = 0.64


@dataclass
class QNDSection:
    shots: int = 4000
    training_fraction: float = 0.5
    regularization: float | None = None


@dataclass
class CalibrationSection:
    atom_numbers: list = field(default_factory=lambda: [300, 700, 1100])
    shots_per_group: int = 300
    batches: int = 10


SECTIONS = {
    "trap": TrapSection,
    "coupling": CouplingSection,
    "pumping": PumpingSection,
    "schedule": ScheduleSection,
    "ramsey": RamseySection,
    "ensemble": EnsembleSection,
    "noise_scan": NoiseScanSection,
    "covariance": CovarianceSection,
    "qnd": QNDSection,
    "calibration": CalibrationSection,
}


@dataclass
class PipelineConfig:
    schema_version: str = SCHEMA_VERSION
    master_seed: int = 20240611
    shot_count: int = 10000
    output_dir: str = "runs/default"
    trap: TrapSection = field(default_factory=TrapSection)
    coupling: CouplingSection = field(default_factory=CouplingSection)
    pumping: PumpingSection = field(default_factory=PumpingSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    ramsey: RamseySection = field(default_factory=RamseySection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    noise_scan: NoiseScanSection = field(default_factory=NoiseScanSection)
    covariance: CovarianceSection = field(default_factory=CovarianceSection)
    qnd: QNDSection = field(default_factory=QNDSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)

    # -- serialisation -------------------------------------------------------

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, value in data.items():
            if name in SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"section {name!r} must be an object")
                sec = SECTIONS[name]
                bad = set(value) - {f.name for f in fields(sec)}
                if bad:
                    raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
                kw[name] = sec(**value)
            else:
                kw[name] = value
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema version {self.schema_version!r} does not match tool {SCHEMA_VERSION!r}")
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigError("master_seed must be a non-negative integer")
        if not isinstance(self.shot_count, int) or self.shot_count < 1:
            raise ConfigError("shot_count must be a positive integer")
        dt = self.schedule.sample_period_us
        for name in ("segment1_us", "gap_us", "segment2_us"):
            _on_grid(getattr(self.schedule, name), dt, f"schedule.{name}")
        _on_grid(self.covariance.segment1_us, dt, "covariance.segment1_us")
        try:
            self.build_trap()
            self.build_schedule()
            self.build_ramsey()
            self.build_ensemble()
        except (DomainError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    # -- domain objects ------------------------------------------------------

    def build_trap(self):
        t = self.trap
        return TrapPotential.from_shape(
            depth=t.depth_uK * MICRO * KB, r_min=t.r_min_nm * NANO,
            attractive_decay_length=t.attractive_decay_nm * NANO,
            repulsive_decay_length=t.repulsive_decay_nm * NANO)

    def build_coupling(self, trap=None):
        trap = trap or self.build_trap()
        c = self.coupling
        return CouplingProfile.for_trap(trap, c.peak_phase_per_atom_mrad * MILLI,
                                        c.probe_decay_nm * NANO)

    def build_pumping(self):
        p = self.pumping
        return PumpingModel(p.beta, p.tau_at_us * MICRO, p.tau_loss_us * MICRO)

    def build_schedule(self, segment1_us=None):
        s = self.schedule
        return ProbeSchedule(
            (s.segment1_us if segment1_us is None else segment1_us) * MICRO,
            s.gap_us * MICRO, s.segment2_us * MICRO, s.sample_period_us * MICRO)

    def build_ramsey(self):
        r = self.ramsey
        return RamseyContrast(r.eta0, r.eta_inf, r.tau_rec_us * MICRO)

    def build_ensemble(self, pumping=None, **overrides):
        e = self.ensemble
        trap = self.build_trap()
        kw = dict(
            mean_atom_number=e.mean_atom_number, loading=e.loading, loading_scale=e.loading_scale,
            loading_range=(self.noise_scan.atom_number_min, self.noise_scan.atom_number_max),
            temperature=e.temperature_uK * MICRO, phase_shot_noise=e.phase_shot_noise_mrad * MILLI,
            trap=trap, coupling=self.build_coupling(trap),
            pumping=pumping or self.build_pumping(), coupling_model=e.coupling_model,
            motion_enabled=bool(e.motion), coupling_multiplier=e.coupling_multiplier,
            pulse_amplitude_error=e.pulse_amplitude_error, pool_size=e.pool_size,
            integrator_substeps=e.integrator_substeps,
            pool_time_span=e.pool_time_span_us * MICRO)
        kw.update(overrides)
        return EnsembleConfig(**kw)


def _on_grid(value, dt, name):
    k = value / dt
    if value < 0 or abs(k - round(k)) > 1e-9 * max(1.0, k):
        raise ConfigError(f"{name} = {value} is not a multiple of the sample period")


def config_hash(cfg):
    """SHA-256 of the canonical JSON form; output_dir is excluded so moving a run keeps it."""
    d = cfg.to_dict()
    d.pop("output_dir", None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _coerce(text, current):
    if isinstance(current, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, str):
        return text
    # lists, None-valued optionals: parse as JSON
    return json.loads(text)


def apply_env_overrides(data, environ=None):
    """Override keys from ``QNDSIM_<SECTION>__<KEY>`` (or ``QNDSIM_<KEY>`` at top level).

    Names are case-insensitive; values are coerced to the type of the default.
    """
    environ = os.environ if environ is None else environ
    defaults = PipelineConfig().to_dict()
    data = json.loads(json.dumps(data))
    for var, text in sorted(environ.items()):
        if not var.startswith(ENV_PREFIX):
            continue
        path = var[len(ENV_PREFIX):].lower().split("__")
        node, ref = data, defaults
        for part in path[:-1]:
            if part not in ref or not isinstance(ref[part], dict):
                raise ConfigError(f"{var} does not name a config section")
            node = node.setdefault(part, {})
            ref = ref[part]
        key = _match_key(path[-1], ref, var)
        try:
            node[key] = _coerce(text, node.get(key, ref[key]))
        except (ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse {var}={text!r}") from exc
    return data


def _match_key(name, ref, var):
    for k in ref:
        if k.lower() == name:
            return k
    raise ConfigError(f"{var} does not name a config key")


def load_config(path=None, environ=None):
    """Read a JSON config (defaults if ``path`` is None) and apply env overrides."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    data = apply_env_overrides(data, environ)
    try:
        return PipelineConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
