"""Counter-based random streams.

Every stochastic quantity is drawn from a generator keyed by
``(master_seed, stream, index)``, so results never depend on the order in
which atoms or shots are evaluated.
"""

import numpy as np

# stream tags, one per independent consumer
ATOMS = 1
SHOTS = 2
QND = 3
CALIBRATION = 4
NOISE_REFERENCE = 5


def substream(seed, *keys):
    """Return an independent ``Generator`` for ``seed`` and integer ``keys``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed, *keys):
    """Derive a new integer seed, e.g. to hand a whole batch its own master seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
