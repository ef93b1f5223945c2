"""Pinned synthetic federations and clients shared by the tests."""

from __future__ import annotations

import numpy as np

from fedfair.ingest import SyntheticSpec, generate_synthetic
from fedfair.seeding import make_rng
from fedfair.tabular import Dataset, SplitSet, categorical, numeric

MITIGATION_SPEC = SyntheticSpec(
    n_clients=4,
    rows_per_client=(2000, 2000),
    attributes={"SEX": [1, 2], "RAC1P": [1, 2]},
    positive_rates={"SEX": {1: 0.65, 2: 0.35}},
    seed=11,
)

# Two large clients carry a strong SEX disparity, six small ones carry none.
PROPAGATION_SPEC = SyntheticSpec(
    n_clients=8,
    rows_per_client=[(6000, 6000)] * 2 + [(1500, 1500)] * 6,
    attributes={"SEX": [1, 2], "RAC1P": [1, 2]},
    positive_rates=[{"SEX": {1: 0.85, 2: 0.15}}] * 2 + [{"SEX": {1: 0.5, 2: 0.5}}] * 6,
    seed=3,
)


def mitigation_federation():
    return generate_synthetic(MITIGATION_SPEC)


def propagation_federation():
    return generate_synthetic(PROPAGATION_SPEC)


def _cell_rows(rng, n_pos, n_neg, sex):
    y = np.r_[np.ones(n_pos, dtype=np.int64), np.zeros(n_neg, dtype=np.int64)]
    # RAC1P split exactly in half inside every (SEX, label) cell, so its disparity is zero.
    race = np.r_[np.tile([1, 2], n_pos // 2 + 1)[:n_pos], np.tile([1, 2], n_neg // 2 + 1)[:n_neg]]
    x0 = 3.0 * (2 * y - 1) + rng.normal(0, 0.3, len(y))
    x1 = rng.normal(size=len(y))
    return {"X0": x0, "X1": x1, "SEX": np.full(len(y), sex), "RAC1P": race}, y


def crossing_client(seed: int = 0, scale: int = 1) -> SplitSet:
    """Client whose SEX disparity crosses 0.09 between drop fractions 0.2 and 0.3.

    Every split holds exactly 50% positives for SEX=1 and 48% for SEX=2, and
    the label is readable from X0 with a wide margin, so any reasonable model
    reproduces the true-label rates. Dropping a fraction f of SEX=1 negatives
    gives a gap of 0.5 / (1 - 0.5 f) - 0.48: 0.076 at f=0.2, 0.108 at f=0.3.
    """
    rng = make_rng(seed)
    schema = (numeric("X0"), numeric("X1"), categorical("SEX", [1, 2]), categorical("RAC1P", [1, 2]))
    parts, offset = [], 0
    for n in (2000 * scale, 1000 * scale, 1000 * scale):
        half = n // 2
        a, ya = _cell_rows(rng, half // 2, half - half // 2, 1)
        b, yb = _cell_rows(rng, round(0.48 * half), half - round(0.48 * half), 2)
        cols = {k: np.r_[a[k], b[k]] for k in a}
        y = np.r_[ya, yb]
        perm = rng.permutation(len(y))
        ds = Dataset(schema, {k: v[perm] for k, v in cols.items()}, y[perm], ("SEX", "RAC1P"),
                     np.arange(offset, offset + len(y)))
        offset += len(y)
        parts.append(ds)
    return SplitSet(*parts)
