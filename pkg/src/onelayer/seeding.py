"""Deterministic RNG streams.

Every stochastic operation in the package draws from a Philox
counter-based generator keyed by ``SeedSequence(entropy=seed,
spawn_key=tags)``.  The tags identify the purpose of the stream
(teacher weights, sample draws, projection vectors, ...), so distinct
stages of a pipeline sharing one user-facing seed still consume
independent, replayable streams, and parallel trials derived from a
master seed never collide.
"""

import numpy as np

# stream tags; values are stable identifiers, never reorder
TEACHER_W = 0
TEACHER_V = 1
SAMPLES = 2
ALPHA = 3
POWER_INIT = 4
PENCIL = 5
RANDOM_W = 6
RANDOM_V = 7
NORM_EST = 8
PROBE = 9


def stream(seed, *tags):
    """Philox generator for (seed, tags)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(t) for t in tags))
    return np.random.Generator(np.random.Philox(ss))


def trial_seed(master_seed, *key):
    """64-bit seed for one grid trial, a pure function of (master, key).

    Used by the experiment harness so that per-trial seeds do not depend
    on scheduling or worker count.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)
