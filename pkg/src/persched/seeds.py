"""Deterministic seed derivation shared by the CLI and the HTTP service.

Both front ends must hand identical seeds to the predictive sampler for the
same (master seed, patient, t, s) so their numbers agree exactly.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(master: int, *parts) -> int:
    key = []
    for p in parts:
        if isinstance(p, bool):
            key.append(int(p))
        elif isinstance(p, str):
            key.append(zlib.crc32(p.encode("utf-8")) & 0xFFFFFFFF)
        elif isinstance(p, float):
            key.append(int(round(p * 8192.0)) & 0xFFFFFFFF)
        else:
            key.append(int(p) & 0xFFFFFFFF)
    seq = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(key))
    return int(seq.generate_state(1)[0])
