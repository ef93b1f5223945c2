"""Seed derivation and platform-stable rounding.

Every stochastic operation takes an explicit integer seed and builds a fresh
``numpy.random.Generator`` (PCG64) from it. Sub-seeds are derived from a master
seed and a stage name with :func:`derive_seed`, so a whole pipeline run is
reproducible from one number.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

#: Bump when the derivation below changes; recorded in every datasheet.
SEED_DERIVATION_VERSION = 1


def derive_seed(master: int, *stage: object) -> int:
    """Derive a 63-bit sub-seed from ``master`` and a stage path.

    ``sha256("v1:<master>:<stage0>/<stage1>/...")``, first 8 bytes, big-endian,
    top bit cleared.
    """
    path = "/".join(str(s) for s in stage)
    digest = hashlib.sha256(
        f"v{SEED_DERIVATION_VERSION}:{int(master)}:{path}".encode("utf-8")
    ).digest()
    return int.from_bytes(digest[:8], "big") & ((1 << 63) - 1)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def round_half_away(x: float) -> int:
    """Round to the nearest integer, ties away from zero (2.5 -> 3, -2.5 -> -3)."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def largest_remainder(total: int, shares) -> list[int]:
    """Split ``total`` into integer counts proportional to ``shares``.

    Floors first, then hands the leftover units to the largest fractional
    remainders (ties to the earlier entry). Counts always sum to ``total``.
    """
    shares = [float(s) for s in shares]
    s = sum(shares)
    if s <= 0:
        if total:
            raise ValueError("cannot allocate a positive total over all-zero shares")
        return [0] * len(shares)
    raw = [total * x / s for x in shares]
    counts = [math.floor(r) for r in raw]
    leftover = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts
