"""Deterministic random substreams.

Every normal draw in the package comes from a stream keyed by
``(master seed, replicate, level, component)``. Streams are independent
of how many replicates are requested, so a replicate drawn alone is
bitwise identical to the same replicate drawn inside a batch.
"""

import zlib

import numpy as np

#: Number of standard normals drawn per time step: one Brownian increment
#: and two auxiliary variables used by the Volterra sampler.
DRAWS_PER_STEP = 3


def substream(seed, replicate, level, component):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replicate), int(level), int(component)))
    return np.random.Generator(np.random.PCG64(ss))


def step_normals(seed, replicates, level, component, n_steps):
    """Standard normals of shape ``(len(replicates), n_steps, DRAWS_PER_STEP)``."""
    replicates = np.atleast_1d(np.asarray(replicates, dtype=np.int64))
    out = np.empty((replicates.size, n_steps, DRAWS_PER_STEP))
    for row, rep in enumerate(replicates):
        out[row] = substream(seed, rep, level, component).standard_normal((n_steps, DRAWS_PER_STEP))
    return out


def auxiliary_generator(seed, tag):
    """Generator for draws that are not tied to a path replicate (e.g. random test matrices).

    ``tag`` is an integer or a string; strings map to integers by CRC-32.
    """
    key = zlib.crc32(tag.encode()) if isinstance(tag, str) else int(tag)
    return substream(seed, 2**31 - 1, 2**16 + key, 0)
