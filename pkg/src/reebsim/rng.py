"""Random substream derivation.

All randomness is derived from ``(master seed, module tag, index)`` so results
do not depend on scheduling or thread count.
"""

import numpy as np

TAGS = {
    "coeffs": 1,
    "sde": 2,
    "graphdiff": 3,
    "limit": 4,
    "oracle": 5,
    "start": 6,
    "observable": 7,
}


def seed_sequence(seed, tag, index=0):
    return np.random.SeedSequence([int(seed), TAGS[tag], int(index)])


def generator(seed, tag, index=0):
    """A numpy Generator for one substream."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, tag, index)))


def xoshiro_states(seed, tag, n, offset=0):
    """Initial xoshiro256** states for trajectories ``offset .. offset+n-1``.

    Returns a ``(n, 4)`` uint64 array; one independent substream per row.
    """
    out = np.empty((n, 4), dtype=np.uint64)
    for k in range(n):
        s = seed_sequence(seed, tag, offset + k).generate_state(4, np.uint64)
        if not s.any():
            s[0] = 1
        out[k] = s
    return out
