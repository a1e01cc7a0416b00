"""
Counter-based random streams.

Every consumer of randomness asks for a stream by name, for example
``stream(seed, 'dataset')`` or ``stream(seed, 'train', step)``. The path is
hashed (CRC-32 per element) into the ``spawn_key`` of a ``SeedSequence`` and
drives a Philox generator, so a stream depends only on the root seed and its
name. Adding a consumer, reordering consumers, or running them in parallel
never changes what another stream draws.
"""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode('utf-8'))


def stream(seed, *path):
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(part) for part in path))
    return np.random.Generator(np.random.Philox(sequence))


def split(gen, n):
    """n independent children of ``gen`` (consumes one draw from ``gen``)."""
    root = int(gen.integers(0, 2 ** 63))
    return [stream(root, i) for i in range(n)]
