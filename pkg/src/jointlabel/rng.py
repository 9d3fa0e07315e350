"""Seeded random streams.

Every consumer of randomness gets its own PCG64 stream derived from the run
seed and a fixed consumer name, so adding draws in one place never shifts the
numbers seen elsewhere. PCG64 with SeedSequence is portable across platforms
and numpy versions that keep the documented stream.
"""

import zlib

import numpy as np

STREAMS = ("data", "noise", "shuffle", "init", "final_init", "final_shuffle", "kmeans", "gradcheck")


def _stream_key(name):
    # crc32 is stable across interpreters, unlike hash()
    return zlib.crc32(name.encode("ascii"))


def stream(seed, name, *extra):
    """Return a Generator for ``name`` under ``seed``.

    ``extra`` integers (e.g. an epoch number) derive independent sub-streams,
    which lets a resumed run reproduce the exact shuffle of any epoch without
    storing generator state.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    key = (_stream_key(name),) + tuple(int(e) for e in extra)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))
