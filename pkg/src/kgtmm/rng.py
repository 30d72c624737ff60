"""Addressable random streams.

Every random draw in a run comes from a Philox generator whose seed sequence
is keyed by ``(master_seed, purpose, client, round)``. Streams never share
state, so the result of a run does not depend on the order in which clients
are processed.
"""

import zlib

import numpy as np

PURPOSES = ("init", "local", "tau", "central", "problem", "graph")


def _tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(master_seed: int, purpose: str, client: int = 0, round_index: int = 0) -> np.random.Generator:
    """Return the generator addressed by ``(master_seed, purpose, client, round_index)``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(_tag(purpose), int(client), int(round_index)))
    return np.random.Generator(np.random.Philox(ss))
