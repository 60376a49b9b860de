"""Inhomogeneity factor of time-averaged couplings against temperature.

    python scripts/upsilon_vs_temperature.py --atoms 1000 --window-us 150
"""

import argparse

import numpy as np

from qndsim import io
from qndsim.constants import CESIUM_D2_WAVELENGTH, KB, MICRO
from qndsim.trap import (default_coupling, default_trap, ensemble_time_averaged_coupling,
                         inhomogeneity_factor, lamb_dicke, recoil_frequency,
                         sample_thermal_ensemble, simulate_ensemble)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--atoms", type=int, default=1000)
    ap.add_argument("--window-us", type=float, default=150.0)
    ap.add_argument("--temperatures-uK", type=float, nargs="+",
                    default=[30, 60, 90, 120, 150, 180])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--dump", metavar="CSV", help="write (t, r, v, phi) of the first atom at the lowest T")
    args = ap.parse_args()

    trap = default_trap()
    c = default_coupling(trap)
    w_rec = recoil_frequency(CESIUM_D2_WAVELENGTH, trap.mass)
    print(f"trap depth {trap.depth / KB / MICRO:.1f} uK, r_min {trap.r_min * 1e9:.0f} nm, "
          f"f_trap {trap.harmonic_frequency / 2 / np.pi / 1e3:.1f} kHz, "
          f"eta^2 (Lamb-Dicke) {lamb_dicke(w_rec, trap.harmonic_frequency):.4f}")
    dt = 0.5 * MICRO / 64
    window = args.window_us * MICRO
    print(f"{'T (uK)':>8} {'Upsilon':>8} {'static':>8} {'escaped':>8}")
    for T in args.temperatures_uK:
        r, v = sample_thermal_ensemble(trap, T * MICRO, args.atoms, seed=args.seed)
        ens = simulate_ensemble(r, v, trap, dt, window, record_every=8)
        avg = ensemble_time_averaged_coupling(ens, c, window)
        inst = c.unchecked(r)
        print(f"{T:8.0f} {inhomogeneity_factor(avg):8.3f} {inhomogeneity_factor(inst):8.3f} "
              f"{int(ens.escaped.sum()):8d}")
        if args.dump and T == min(args.temperatures_uK):
            rows = np.column_stack([ens.times, ens.positions[:, 0], ens.velocities[:, 0],
                                    ens.couplings(c)[:, 0]])
            io.write_csv(args.dump, "trajectory", "0" * 64, ["t_s", "r_m", "v_m_per_s", "phi_rad"],
                         rows, meta={"temperature_uK": T, "seed": args.seed})


if __name__ == "__main__":
    main()
