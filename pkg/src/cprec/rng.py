"""Named random sub-streams derived from one global seed."""
import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for component ``name``.

    Streams are keyed by a CRC of the name, so adding a new consumer never
    shifts the draws seen by an existing one.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
