"""Per-path random streams.

Every simulated path gets its own generator keyed by ``(seed, path, stream)``
so results do not depend on chunking or on the number of worker threads.
"""

import numpy as np

CHAIN_STREAM = 0
NOISE_STREAM = 1
THINNING_STREAM = 2

STREAM_SCHEME = "numpy.random.SeedSequence(entropy=seed, spawn_key=(path, stream))"


def path_rng(seed, path, stream=CHAIN_STREAM):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path), int(stream)))
    return np.random.default_rng(ss)


class UniformBuffer:
    """Uniform(0,1] draws from a path stream, fetched in blocks."""

    def __init__(self, rng, block=64):
        self._rng = rng
        self._block = block
        self._buf = np.empty(0)
        self._pos = 0

    def next(self):
        if self._pos >= self._buf.size:
            # 1 - U lies in (0, 1], safe for -log
            self._buf = 1.0 - self._rng.random(self._block)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u
