"""Stage orchestration: simulate, calibrate, fit, noise-scan, covariance, matched-filter, qnd."""

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import estimation, io, noise, qnd
from . import rng as rngmod
from .calibrate import calibrate as calibrate_model
from .config import PipelineConfig, config_hash
from .errors import ArtifactError, ConfigError
from .probe import PI, PumpingModel, build_atom_pool, synthesize_batch

log = logging.getLogger(__name__)

__all__ = ["STAGES", "RunManifest", "Run", "run"]

STAGES = ("simulate", "calibrate", "fit", "noise-scan", "covariance", "matched-filter", "qnd")
# substream tags for each stage's master seed
STAGE_TAGS = {name: 100 + i for i, name in enumerate(STAGES)}
POOL_TAG = 99

MANIFEST = "manifest.json"
TIMINGS = "timings.json"


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    master_seed: int
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_json(self):
        # timings are kept out of the manifest file so it stays reproducible
        doc = {"schema": io.schema_tag("manifest"), "config_hash": self.config_hash,
               "tool_version": self.tool_version, "master_seed": self.master_seed,
               "outputs": {k: sorted(v) for k, v in sorted(self.outputs.items())}}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def files(self):
        return sorted({f for v in self.outputs.values() for f in v})

    def verify(self, out_dir):
        """Every listed file exists and carries the manifest's config hash."""
        for name in self.files():
            path = os.path.join(out_dir, name)
            if not os.path.exists(path):
                raise ArtifactError(f"manifest lists missing file {name}")
            _, h = io.file_header(path)
            if not self.config_hash.startswith(h or "-"):
                raise ArtifactError(f"{name} carries a different config hash")


class Run:
    """One output directory bound to one config."""

    def __init__(self, cfg: PipelineConfig):
        cfg.validate()
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.out = cfg.output_dir
        os.makedirs(self.out, exist_ok=True)
        self.manifest = self._load_manifest()
        self._pools = {}

    def _load_manifest(self):
        path = os.path.join(self.out, MANIFEST)
        man = RunManifest(self.hash, __version__, self.cfg.master_seed)
        if os.path.exists(path):
            with open(path) as fh:
                doc = json.load(fh)
            if doc.get("config_hash") == self.hash:
                man.outputs = {k: list(v) for k, v in doc.get("outputs", {}).items()}
        return man

    def path(self, name):
        return os.path.join(self.out, name)

    def seed(self, stage):
        return rngmod.child_seed(self.cfg.master_seed, STAGE_TAGS[stage])

    def pool_for(self, ens, schedule):
        """Thermal atom pool shared by all stages with the same trap and schedule."""
        if ens.coupling_model != "thermal":
            return None
        key = (ens.trap, ens.effective_coupling, ens.temperature, ens.pool_size,
               ens.integrator_substeps, ens.pool_time_span, schedule)
        if key not in self._pools:
            seed = rngmod.child_seed(self.cfg.master_seed, POOL_TAG)
            self._pools[key] = build_atom_pool(ens, schedule, seed)
        return self._pools[key]

    def record(self, stage, files, seconds):
        self.manifest.outputs[stage] = list(files)
        self.manifest.timings[stage] = round(seconds, 3)
        with open(self.path(MANIFEST), "w", newline="\n") as fh:
            fh.write(self.manifest.to_json())
        tpath = self.path(TIMINGS)
        times = {}
        if os.path.exists(tpath):
            with open(tpath) as fh:
                times = json.load(fh)
        times.update(self.manifest.timings)
        with open(tpath, "w") as fh:
            json.dump(times, fh, sort_keys=True, indent=2)

    # -- stages ------------------------------------------------------------

    def stage_simulate(self):
        cfg = self.cfg
        schedule = cfg.build_schedule()
        ens = cfg.build_ensemble()
        seed = self.seed("simulate")
        batch = synthesize_batch(ens, schedule, cfg.shot_count, seed,
                                 pool=self.pool_for(ens, schedule))
        cols = [f"t{i}" for i in range(schedule.n_samples)]
        io.write_csv(self.path("traces.csv"), "traces", self.hash, cols, batch.traces,
                     meta={"times_us": [round(t * 1e6, 9) for t in schedule.times()]})
        recs = [{"shot": i, "n_total": int(batch.n_total[i]), "n4": int(batch.n4[i]),
                 "n3": int(batch.n3[i]), "phi4_true": float(batch.phi4_true[i]),
                 "phi3_true": float(batch.phi3_true[i]),
                 "seed": [seed, rngmod.SHOTS, i]} for i in range(len(batch))]
        io.write_jsonl(self.path("shots.jsonl"), "shots", self.hash, recs)
        return ["traces.csv", "shots.jsonl"]

    def stage_calibrate(self):
        cfg = self.cfg
        cal = cfg.calibration
        schedule = cfg.build_schedule()
        seed = self.seed("calibrate")
        ens = cfg.build_ensemble(preparation_pulse=PI)
        pool = self.pool_for(ens, schedule)
        groups = []
        for k, n in enumerate(cal.atom_numbers):
            b = synthesize_batch(ens.with_(mean_atom_number=float(n)), schedule,
                                 cal.shots_per_group, rngmod.child_seed(seed, k), pool=pool)
            groups.append(b.traces)
        res = calibrate_model(groups, schedule.times(), guess=cfg.build_pumping(),
                              n_batches=cal.batches)
        m = res.model
        payload = {
            "model": {"beta": m.beta, "tau_at_us": m.tau_at * 1e6, "tau_loss_us": m.tau_loss * 1e6},
            "errors": {"beta": res.errors["beta"], "tau_at_us": res.errors["tau_at"] * 1e6,
                       "tau_loss_us": res.errors["tau_loss"] * 1e6},
            "max_group_deviation_sigma": res.max_deviation_sigma,
            "groups": [{"atom_number": int(n), "shots": g.n_shots, "phi0": g.phi0,
                        "beta": g.beta, "tau_at_us": g.tau_at * 1e6,
                        "tau_loss_us": g.tau_loss * 1e6} for n, g in zip(cal.atom_numbers, res.groups)],
        }
        io.write_json(self.path("pumping_model.json"), "pumping-model", self.hash, payload)
        return ["pumping_model.json"]

    def pumping_model(self):
        """Model consumed by fit: configured model file, else this run's calibration, else nominal."""
        src = self.cfg.pumping.model_file
        if src:
            doc = io.read_json(src, kind="pumping-model")
        elif os.path.exists(self.path("pumping_model.json")):
            doc = io.read_json(self.path("pumping_model.json"), "pumping-model", self.hash)
        else:
            return self.cfg.build_pumping(), "config"
        p = doc["model"]
        return PumpingModel(p["beta"], p["tau_at_us"] * 1e-6, p["tau_loss_us"] * 1e-6), \
            src or "pumping_model.json"

    def stage_fit(self):
        schedule = self.cfg.build_schedule()
        cols, traces, _ = io.read_csv(self.path("traces.csv"), "traces", self.hash)
        if traces.shape[1] != schedule.n_samples:
            raise ArtifactError("traces do not match the configured schedule")
        m, source = self.pumping_model()
        est = estimation.fit_batch(traces, schedule, m)
        rows = np.column_stack([np.arange(len(traces)), est.phi4, est.phi3, est.phi_N,
                                est.phi_Delta, est.residual_rms])
        io.write_csv(self.path("estimates.csv"), "estimates", self.hash,
                     ["shot", "phi4", "phi3", "phi_N", "phi_Delta", "residual_rms"], rows,
                     meta={"pumping_source": source})
        return ["estimates.csv"]

    def stage_noise_scan(self):
        cfg = self.cfg
        ns = cfg.noise_scan
        schedule = cfg.build_schedule()
        m = cfg.build_pumping()
        seed = self.seed("noise-scan")
        ens = cfg.build_ensemble(loading="uniform", coupling_model=ns.coupling_model,
                                 motion_enabled=bool(ns.motion))
        pool = self.pool_for(ens, schedule)
        batch = synthesize_batch(ens, schedule, cfg.shot_count, seed, pool=pool)
        est = estimation.fit_batch(batch.traces, schedule, m)
        bins = noise.bin_shots(est, ns.bin_size)
        ref_bin = None
        if ns.reference_shots:
            ref = synthesize_batch(ens.with_(loading="fixed", mean_atom_number=0.0), schedule,
                                   ns.reference_shots, seed, pool=pool,
                                   stream=rngmod.NOISE_REFERENCE)
            ref_est = estimation.fit_batch(ref.traces, schedule, m)
            ref_bin = noise.bin_shots(ref_est, ns.reference_shots)[0]
        all_bins = ([ref_bin] if ref_bin else []) + bins
        fit = noise.scaling_fit(all_bins, "delta")
        fit4 = noise.scaling_fit(all_bins, "4")
        shot_noise = fit.intercept if fit.intercept > 0 else float("nan")
        rows = []
        for b in all_bins:
            db = noise.noise_level_db(b.var_delta, shot_noise) if shot_noise > 0 else float("nan")
            rows.append([b.n_shots, b.mean_phi_N, b.var_delta, b.var_delta_err,
                         b.var4, b.var4_err, b.var3, b.var3_err, db])
        io.write_csv(self.path("noise_scan_bins.csv"), "noise-scan-bins", self.hash,
                     ["n_shots", "mean_phi_N", "var_delta", "var_delta_err", "var4", "var4_err",
                      "var3", "var3_err", "noise_db"], rows)
        top = bins[-1]
        summary = {
            "phi_eff1": fit.slope, "phi_eff1_err": fit.slope_err,
            "intercept": fit.intercept, "intercept_err": fit.intercept_err,
            "quad_coeff": fit.quad_coeff, "quad_coeff_err": fit.quad_coeff_err,
            "quadratic_significance": fit.quadratic_significance(),
            "linear_slope": fit.linear_slope, "chi2_dof": fit.chi2_dof,
            "slope_phi4": fit4.slope,
            "expected_shot_noise": estimation.delta_noise_variance(
                schedule, m, ens.phase_shot_noise),
            "top_bin_phi_N": top.mean_phi_N,
            "top_bin_N_eff": noise.effective_atom_number(top.mean_phi_N, fit.slope),
            "top_bin_db": rows[-1][-1],
            "reference_shots": ns.reference_shots,
        }
        io.write_json(self.path("noise_scan_fit.json"), "noise-scan-fit", self.hash, summary)
        return ["noise_scan_bins.csv", "noise_scan_fit.json"]

    def covariance_groups(self):
        """Simulated segment-1 fluctuation covariances; returns (schedule, rows, decomposition)."""
        cfg = self.cfg
        cv = cfg.covariance
        schedule = cfg.build_schedule(segment1_us=cv.segment1_us)
        m = cfg.build_pumping()
        seed = self.seed("covariance")
        ens = cfg.build_ensemble()
        pool = self.pool_for(ens, schedule)
        per_atom = float(pool.static.mean()) if pool is not None else \
            ens.effective_coupling.peak_phase_per_atom
        plan = [(0.0, cv.empty_shots)] if cv.empty_shots else []
        plan += [(t / per_atom, cv.shots_per_group) for t in cv.phi_N_targets_rad]
        groups, weights, rows = [], [], []
        for k, (n_atoms, shots) in enumerate(plan):
            b = synthesize_batch(ens.with_(mean_atom_number=n_atoms), schedule, shots,
                                 rngmod.child_seed(seed, k), pool=pool)
            est = estimation.fit_batch(b.traces, schedule, m)
            dphi = estimation.segment_fluctuations(b.traces, schedule, m, est.phi_N)
            C = noise.estimate_covariance(dphi)
            phi = float(est.phi_N.mean())
            groups.append((phi, C))
            # inverse-variance weight of a sample covariance element
            weights.append((shots - 1) / np.mean(np.diag(C)) ** 2)
            rows.append((n_atoms, shots, phi, float(np.var(est.phi_Delta, ddof=1))))
        dec = noise.decompose_covariance(groups, weights=weights)
        return schedule, rows, dec, per_atom

    def stage_covariance(self):
        cfg = self.cfg
        cv = cfg.covariance
        schedule, rows, dec, per_atom = self.covariance_groups()
        m = cfg.build_pumping()
        io.write_matrix(self.path("covariance_C0.bin"), self.hash, dec.C0)
        io.write_matrix(self.path("covariance_C1.bin"), self.hash, dec.C1)
        cols = [f"t{i}" for i in range(dec.C0.shape[0])]
        for name, M in (("C0", dec.C0), ("C1", dec.C1)):
            io.write_csv(self.path(f"covariance_{name}.csv"), "covariance-matrix", self.hash,
                         cols, M, meta={"matrix": name})
        dt = schedule.sample_period
        curve = noise.correlation_curve(dec.C1, sample_period=dt)
        fitted = curve.fit(curve.lags) if curve.fit else np.full(curve.lags.size, np.nan)
        io.write_csv(self.path("correlation_curve.csv"), "correlation-curve", self.hash,
                     ["lag_us", "rho", "count", "fit"],
                     np.column_stack([curve.lags * 1e6, curve.rho, curve.counts, fitted]))
        # per-atom scale of phi_Delta projection noise from the group variances
        phis = np.array([r[2] for r in rows if r[0] > 0])
        vd = np.array([r[3] for r in rows if r[0] > 0])
        slope = float(np.polyfit(phis, vd, 1)[0]) if phis.size >= 2 else float("nan")
        phi_ref = cv.reference_phi_N_rad
        mhat = schedule.basis(m)[0][schedule.segment1_mask()]
        model_diag = (phi_ref * mhat / 2) ** 2 / (phi_ref / slope)
        ratio = np.diag(phi_ref * dec.C1) / model_diag
        sn = dec.shot_noise_level
        off = dec.C0 / sn
        iu = np.triu_indices_from(off, 1)
        summary = {
            "groups": [{"atom_number": r[0], "shots": r[1], "phi_N": r[2], "var_phi_Delta": r[3]}
                       for r in rows],
            "phi_per_atom": per_atom,
            "shot_noise_level": sn,
            "expected_shot_noise": cfg.ensemble.phase_shot_noise_mrad ** 2 * 1e-6,
            "C0_offdiag_mean_abs_rho": float(np.mean(np.abs(off[iu]))),
            "residual_quadratic_norm": dec.residual_quadratic_norm,
            "min_eigenvalue": dec.min_eigenvalue,
            "phi_eff1": slope,
            "reference_phi_N": phi_ref,
            "diag_ratio_mean": float(ratio.mean()),
            "diag_ratio_min": float(ratio.min()),
            "diag_ratio_max": float(ratio.max()),
            "fit": None if curve.fit is None else {
                "period_us": curve.fit.period * 1e6, "damping_us": curve.fit.damping_time * 1e6,
                "amplitude": curve.fit.amplitude, "offset": curve.fit.offset,
                "phase": curve.fit.phase, "floor": curve.floor},
        }
        io.write_json(self.path("covariance_summary.json"), "covariance-summary", self.hash, summary)
        return ["covariance_C0.bin", "covariance_C1.bin", "covariance_C0.csv", "covariance_C1.csv",
                "correlation_curve.csv",
                "covariance_summary.json"]

    def stage_matched_filter(self):
        cfg = self.cfg
        schedule = cfg.build_schedule(segment1_us=cfg.covariance.segment1_us)
        C0 = io.read_matrix(self.path("covariance_C0.bin"), self.hash)
        C1 = io.read_matrix(self.path("covariance_C1.bin"), self.hash)
        m = cfg.build_pumping()
        phi = cfg.covariance.reference_phi_N_rad
        C = C0 + phi * C1
        C = 0.5 * (C + C.T)
        # clip sampling noise that leaves tiny negative eigenvalues
        w, V = np.linalg.eigh(C)
        C = (V * np.clip(w, 0, None)) @ V.T
        t = schedule.times()[schedule.segment1_mask()]
        sig = qnd.build_signal(phi, m, cfg.build_ramsey(), t)
        res = qnd.optimal_mode(C, sig, regularization=cfg.qnd.regularization)
        n = t.size
        flat = np.ones(n) / np.sqrt(n)
        shaped = sig.s / np.linalg.norm(sig.s)
        snr_flat = qnd.snr(flat, sig, C)
        snr_shaped = qnd.snr(shaped, sig, C)
        io.write_csv(self.path("matched_filter.csv"), "matched-filter", self.hash,
                     ["t_us", "q_opt", "signal"], np.column_stack([t * 1e6, res.q_opt, sig.s]))
        io.write_json(self.path("matched_filter.json"), "matched-filter-summary", self.hash, {
            "phi_N": phi, "snr_opt": res.snr, "snr_uniform": snr_flat, "snr_signal_shaped": snr_shaped,
            "gain_over_uniform": res.snr / snr_flat, "condition": res.condition_used,
            "regularization": res.regularization})
        return ["matched_filter.csv", "matched_filter.json"]

    def stage_qnd(self):
        cfg = self.cfg
        schedule = cfg.build_schedule()
        ens = cfg.build_ensemble()
        seed = self.seed("qnd")
        pool = self.pool_for(ens, schedule)
        pairs = qnd.qnd_protocol(ens, schedule, cfg.qnd.shots, seed, pool=pool,
                                 eta=cfg.build_ramsey(),
                                 training_fraction=cfg.qnd.training_fraction)
        v = pairs.verdict()
        io.write_csv(self.path("qnd_pairs.csv"), "qnd-pairs", self.hash,
                     ["pre", "final", "phi_N"], np.column_stack([pairs.pre, pairs.final, pairs.phi_N]))
        io.write_json(self.path("qnd_verdict.json"), "qnd-verdict", self.hash, {
            "xi2": v.xi_squared, "var_cond": v.conditional_variance, "var_css": float(pairs.final.var(ddof=1)),
            "eta": v.contrast, "improves": v.improves, "correlation": pairs.correlation,
            "snr_mode": pairs.mode.snr, "motion": bool(ens.motion_enabled),
            "coupling_multiplier": ens.coupling_multiplier})
        return ["qnd_pairs.csv", "qnd_verdict.json"]


def run(command, cfg):
    """Execute one stage (or ``all``) and return the updated manifest."""
    names = STAGES if command == "all" else (command,)
    if command != "all" and command not in STAGES:
        raise ConfigError(f"unknown command {command!r}")
    r = Run(cfg)
    for name in names:
        t0 = time.perf_counter()
        log.info("stage %s", name)
        files = getattr(r, "stage_" + name.replace("-", "_"))()
        r.record(name, files, time.perf_counter() - t0)
        log.info("stage %s done in %.1f s", name, r.manifest.timings[name])
    r.manifest.verify(r.out)
    return r.manifest
