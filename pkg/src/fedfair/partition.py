"""Client partitioning: natural key splits, sub-partitioners and split/role assignment.

All functions are pure and seeded; rows are never duplicated or lost, and
rounding residues always go to a fixed place (last partition, train split).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import PartitionError, SchemaError
from .seeding import make_rng, round_half_away
from .tabular import Dataset, FederatedDataset, GenerationRecord, SplitSet

MAX_DIRICHLET_RETRIES = 100


@dataclass(frozen=True)
class PartitionConfig:
    strategy: str = "iid"
    n: int = 1
    alpha: float = 0.5
    min_partition_size: int = 1
    key_column: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("natural_key", "iid", "dirichlet", "linear"):
            raise PartitionError(f"unknown partition strategy {self.strategy!r}")
        if self.strategy == "natural_key" and not self.key_column:
            raise PartitionError("natural_key strategy needs key_column")
        if self.n < 1:
            raise PartitionError("n must be >= 1")
        if self.alpha <= 0:
            raise PartitionError("alpha must be > 0")
        if self.min_partition_size < 1:
            raise PartitionError("min_partition_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SplitFractions:
    train: float = 0.8
    validation: float = 0.1
    test: float = 0.1

    def __post_init__(self):
        parts = (self.train, self.validation, self.test)
        if any(p < 0 for p in parts) or abs(sum(parts) - 1.0) > 1e-9:
            raise PartitionError(f"split fractions must be >= 0 and sum to 1, got {parts}")

    def to_dict(self) -> dict:
        return asdict(self)


def split_by_key(pooled: Dataset, key_column: str, names: dict[int, str] | None = None) -> FederatedDataset:
    """One client per observed value of ``key_column``, in ascending code order.

    Every client gets all of its rows in ``train``; use :func:`split_federation`
    to cut validation/test parts afterwards. ``names`` maps codes to client ids
    (e.g. FIPS codes to state abbreviations); unnamed codes use ``str(code)``.
    """
    if key_column not in pooled.columns:
        raise SchemaError(f"key column {key_column!r} not in dataset")
    if not pooled.column_schema(key_column).is_categorical:
        raise SchemaError(f"key column {key_column!r} must be categorical")
    keys = pooled.columns[key_column]
    clients = {}
    for code in np.unique(keys):
        idx = np.flatnonzero(keys == code)
        part = pooled.take(idx)
        empty = Dataset.empty_like(part)
        cid = (names or {}).get(int(code), str(int(code)))
        clients[cid] = SplitSet(part, empty, empty)
    record = GenerationRecord(
        clients=list(clients),
        states=list(clients),
        sensitive_attrs=list(pooled.sensitive_attrs),
        schema=[c.to_dict() for c in pooled.schema],
        label_name=pooled.label_name,
        partitioner={"strategy": "natural_key", "key_column": key_column},
    )
    return FederatedDataset(clients, record)


def partition_iid(dataset: Dataset, n: int, seed: int) -> list[Dataset]:
    """Shuffle, then cut into ``n`` chunks whose sizes differ by at most one.

    Larger chunks come first (N=10, n=3 gives 4, 3, 3).
    """
    N = len(dataset)
    if n < 1 or n > N:
        raise PartitionError(f"cannot make {n} IID partitions of {N} rows")
    perm = make_rng(seed).permutation(N)
    return [dataset.take(chunk) for chunk in np.array_split(perm, n)]


def partition_dirichlet(
    dataset: Dataset,
    n: int,
    alpha: float,
    min_size: int = 1,
    seed: int = 0,
    max_retries: int = MAX_DIRICHLET_RETRIES,
) -> list[Dataset]:
    """Label-skewed partitions: each label class is spread over partitions by Dir(alpha).

    Proportions are redrawn until every partition holds at least ``min_size``
    rows; after ``max_retries`` failed draws a :class:`PartitionError` is raised.
    """
    if n < 2:
        raise PartitionError("dirichlet partitioning needs n >= 2")
    if alpha <= 0:
        raise PartitionError("alpha must be > 0")
    N = len(dataset)
    if min_size * n > N:
        raise PartitionError(
            f"min_partition_size={min_size} infeasible: {n} partitions of {N} rows"
        )
    rng = make_rng(seed)
    classes = np.unique(dataset.label)
    for _ in range(max_retries):
        buckets: list[list[np.ndarray]] = [[] for _ in range(n)]
        for cls in classes:
            idx = np.flatnonzero(dataset.label == cls)
            idx = idx[rng.permutation(len(idx))]
            props = rng.dirichlet(np.full(n, alpha))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
            for i, chunk in enumerate(np.split(idx, cuts)):
                buckets[i].append(chunk)
        parts = [np.concatenate(b) if b else np.zeros(0, np.int64) for b in buckets]
        if min(len(p) for p in parts) >= min_size:
            return [dataset.take(np.sort(p)) for p in parts]
    raise PartitionError(
        f"min_partition_size={min_size} not met after {max_retries} Dirichlet draws"
    )


def partition_linear(dataset: Dataset, n: int, seed: int) -> list[Dataset]:
    """Partition i (1-based) gets share i / (n(n+1)/2) of the shuffled rows.

    Sizes are floored; the rounding residue goes to the last partition.
    """
    N = len(dataset)
    total = n * (n + 1) // 2
    if n < 1 or total > N:
        raise PartitionError(f"linear partitioning needs n(n+1)/2 <= N (n={n}, N={N})")
    sizes = [N * i // total for i in range(1, n + 1)]
    sizes[-1] += N - sum(sizes)
    perm = make_rng(seed).permutation(N)
    return [dataset.take(chunk) for chunk in np.split(perm, np.cumsum(sizes)[:-1])]


def partition(dataset: Dataset, config: PartitionConfig) -> list[Dataset]:
    if config.strategy == "iid":
        return partition_iid(dataset, config.n, config.seed)
    if config.strategy == "dirichlet":
        return partition_dirichlet(
            dataset, config.n, config.alpha, config.min_partition_size, config.seed
        )
    if config.strategy == "linear":
        return partition_linear(dataset, config.n, config.seed)
    raise PartitionError(f"strategy {config.strategy!r} does not sub-partition a dataset")


def split_train_val_test(dataset: Dataset, fractions: SplitFractions, seed: int) -> SplitSet:
    """Shuffle and cut contiguously into train / validation / test.

    Validation and test sizes are ``round(fraction * N)`` (half away from
    zero); train takes the remainder.
    """
    N = len(dataset)
    n_val = round_half_away(fractions.validation * N)
    n_test = round_half_away(fractions.test * N)
    if n_val + n_test > N:
        n_test = N - n_val
    n_train = N - n_val - n_test
    perm = make_rng(seed).permutation(N)
    return SplitSet(
        dataset.take(perm[:n_train]),
        dataset.take(perm[n_train : n_train + n_val]),
        dataset.take(perm[n_train + n_val :]),
    )


def assign_device_roles(
    fed: FederatedDataset | Sequence[str], test_client_fraction: float, seed: int
) -> tuple[list[str], list[str]]:
    """Split client ids into disjoint training and held-out test groups.

    Both lists keep the federation's client order.
    """
    ids = fed.client_ids if isinstance(fed, FederatedDataset) else list(fed)
    K = len(ids)
    if K < 2:
        raise PartitionError("need at least two clients to assign device roles")
    if not 0 < test_client_fraction < 1:
        raise PartitionError("test_client_fraction must lie in (0, 1)")
    n_test = min(max(round_half_away(test_client_fraction * K), 1), K - 1)
    chosen = set(make_rng(seed).choice(K, size=n_test, replace=False).tolist())
    train = [c for i, c in enumerate(ids) if i not in chosen]
    test = [c for i, c in enumerate(ids) if i in chosen]
    return train, test


def split_federation(
    fed: FederatedDataset, fractions: SplitFractions, seed: int
) -> FederatedDataset:
    """Re-split every client's full data with per-client derived seeds."""
    from .seeding import derive_seed

    clients = {
        cid: split_train_val_test(s.combined(), fractions, derive_seed(seed, "split", cid))
        for cid, s in fed.clients.items()
    }
    record = _copy_record(fed.metadata)
    record.split_fractions = fractions.to_dict()
    record.seeds = {**record.seeds, "split": seed}
    return FederatedDataset(clients, record)


def subpartition_federation(fed: FederatedDataset, config: PartitionConfig) -> FederatedDataset:
    """Partition every client's full data; new ids are ``<client>_<i>`` (0-based)."""
    from .seeding import derive_seed

    clients = {}
    for cid, s in fed.clients.items():
        cfg = PartitionConfig(**{**config.to_dict(), "seed": derive_seed(config.seed, "partition", cid)})
        for i, part in enumerate(partition(s.combined(), cfg)):
            empty = Dataset.empty_like(part)
            clients[f"{cid}_{i}"] = SplitSet(part, empty, empty)
    record = _copy_record(fed.metadata)
    record.clients = list(clients)
    record.partitioner = {**(record.partitioner or {}), "sub": config.to_dict()}
    return FederatedDataset(clients, record)


def _copy_record(record: GenerationRecord) -> GenerationRecord:
    import copy

    return copy.deepcopy(record)


def label_share(ds: Dataset) -> float:
    return float(ds.label.mean()) if len(ds) else math.nan
