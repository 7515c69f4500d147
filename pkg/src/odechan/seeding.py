"""Named random substreams derived from one run seed."""
import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name`` (e.g. "scene", "sampling", "init", "batching")."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])
