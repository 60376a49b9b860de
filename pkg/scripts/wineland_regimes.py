"""Conditional-variance squeezing parameter for several coupling and motion regimes.

    python scripts/wineland_regimes.py --shots 4000
"""

import argparse
import tempfile

from qndsim import io
from qndsim.config import load_config
from qndsim.pipeline import Run

REGIMES = [
    ("default coupling (motion on)", dict(motion=True, coupling_multiplier=1.0)),
    ("motion off", dict(motion=False, coupling_multiplier=1.0)),
    ("coupling x3, motion on", dict(motion=True, coupling_multiplier=3.0)),
    ("coupling x3, motion off", dict(motion=False, coupling_multiplier=3.0)),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--shots", type=int, default=4000)
    args = ap.parse_args()

    print(f"{'regime':28} {'rho':>6} {'var_cond':>10} {'var_css':>10} {'eta':>6} {'xi^2':>7}")
    for label, kw in REGIMES:
        cfg = load_config(args.config)
        cfg.qnd.shots = args.shots
        for k, v in kw.items():
            setattr(cfg.ensemble, k, v)
        cfg.output_dir = tempfile.mkdtemp(prefix="wineland_")
        run = Run(cfg.validate())
        run.stage_qnd()
        v = io.read_json(run.path("qnd_verdict.json"))
        print(f"{label:28} {v['correlation']:6.3f} {v['var_cond']:10.3e} {v['var_css']:10.3e} "
              f"{v['eta']:6.3f} {v['xi2']:7.3f}")


if __name__ == "__main__":
    main()
