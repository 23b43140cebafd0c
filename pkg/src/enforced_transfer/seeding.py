"""Named random substreams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream_seed(root: int, name: str) -> int:
    """Stable 32-bit seed for component ``name`` under ``root``."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


def substream(root: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream_seed(root, name))
