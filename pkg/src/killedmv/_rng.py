"""Counter-based random streams.

Every random draw in the package is addressed by (seed, purpose, step):
a Philox generator is keyed by that triple and emits one row per particle.
Regenerating the draw for any (seed, purpose, step) is therefore exact and
independent of thread scheduling or the order in which steps are revisited,
which is what common-random-number Picard iterations and change-of-measure
replays rely on.
"""

import numpy as np

# purpose tags; kept small so (tag << 56) | step fits one uint64
INIT = 0
STEP = 1
BRIDGE = 2
MISC = 3

_TAG_SHIFT = 56


def _generator(seed, purpose, step):
    if not 0 <= step < (1 << _TAG_SHIFT):
        raise ValueError("step index out of addressable range")
    key = np.array([np.uint64(seed), np.uint64((purpose << _TAG_SHIFT) | step)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normals(seed, purpose, step, shape):
    """Standard normal block for (seed, purpose, step); row i belongs to particle i."""
    return _generator(seed, purpose, step).standard_normal(shape)


def uniforms(seed, purpose, step, shape):
    """Uniform(0,1) block for (seed, purpose, step); row i belongs to particle i."""
    return _generator(seed, purpose, step).random(shape)
