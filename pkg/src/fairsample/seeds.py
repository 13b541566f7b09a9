"""Per-stage seeds derived from one global seed.

Each stage gets its own stream keyed by name, so adding a stage never shifts
the seeds of existing ones.
"""

import zlib

import numpy as np


def derive_seed(global_seed: int, stage: str) -> int:
    key = zlib.crc32(stage.encode("utf-8"))
    return int(np.random.SeedSequence([int(global_seed), key]).generate_state(1, np.uint32)[0])
