"""Seed splitting.

Every random stream in a run is derived from the master seed and a
``(client, round, tag)`` key through :class:`numpy.random.SeedSequence`::

    entropy   = master_seed
    spawn_key = (client + 1, round + 1, crc32(tag))

``client=-1`` / ``round=-1`` mean "not client/round specific" and map to 0.
Streams never depend on the order in which they are requested, so serial
and concurrent evaluation of clients draw identical numbers.
"""

import zlib

import numpy as np


def subseed(master, *, client=-1, round=-1, tag=""):
    return np.random.SeedSequence(
        entropy=int(master),
        spawn_key=(int(client) + 1, int(round) + 1, zlib.crc32(tag.encode())),
    )


def stream(master, *, client=-1, round=-1, tag=""):
    """Return an independent ``Generator`` for the given key."""
    return np.random.Generator(np.random.PCG64(subseed(master, client=client, round=round, tag=tag)))
