from collections import Counter

import numpy as np
import pytest
from conftest import random_tables, table
from hypothesis import given
from hypothesis import strategies as st

from fedfair.errors import PartitionError, SchemaError
from fedfair.ingest import SyntheticSpec, generate_synthetic_pool
from fedfair.partition import (
    PartitionConfig,
    SplitFractions,
    assign_device_roles,
    label_share,
    partition,
    partition_dirichlet,
    partition_iid,
    partition_linear,
    split_by_key,
    split_federation,
    split_train_val_test,
    subpartition_federation,
)
from fedfair.tabular import Dataset, categorical, numeric


def _rows(parts):
    return Counter(int(r) for p in parts for r in p.row_ids)


def _labelled(n, share=0.5, seed=0):
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < share).astype(int)
    return Dataset([numeric("X"), categorical("SEX", [1, 2])],
                   {"X": rng.normal(size=n), "SEX": rng.integers(1, 3, n)}, y, ["SEX"])


def test_split_by_key():
    ds = table({"ST": np.array([6, 56, 6, 1]), "SEX": np.array([1, 2, 1, 2])}, [0, 1, 1, 0], sensitive=("SEX",))
    fed = split_by_key(ds, "ST", {6: "CA", 56: "WY"})
    assert fed.client_ids == ["1", "CA", "WY"]
    assert sum(len(fed[c].train) for c in fed.client_ids) == 4
    assert fed["CA"].train.row_ids.tolist() == [0, 2]
    one = split_by_key(table({"ST": np.array([6, 6]), "SEX": np.array([1, 2])}, [0, 1]), "ST")
    assert one["6"].train.equals(table({"ST": np.array([6, 6]), "SEX": np.array([1, 2])}, [0, 1]))
    with pytest.raises(SchemaError):
        split_by_key(ds, "NOPE")


def test_split_by_key_51_states():
    codes = np.repeat(np.arange(1, 52), 3)
    ds = table({"ST": codes, "SEX": np.tile([1, 2, 1], 51)}, np.zeros(len(codes), int))
    fed = split_by_key(ds, "ST")
    assert len(fed) == 51
    assert sum(len(fed[c].train) for c in fed.client_ids) == len(codes)


def test_iid_sizes_and_permutation():
    ds = _labelled(10)
    assert sorted(len(p) for p in partition_iid(ds, 3, 0)) == [3, 3, 4]
    (only,) = partition_iid(ds, 1, 0)
    assert sorted(only.row_ids.tolist()) == list(range(10))
    assert only.row_ids.tolist() != list(range(10))
    with pytest.raises(PartitionError):
        partition_iid(ds, 11, 0)


def test_iid_label_balance():
    ds = _labelled(10000, 0.4, 1)
    pooled = label_share(ds)
    for p in partition_iid(ds, 4, 3):
        assert abs(label_share(p) - pooled) <= 0.05


def test_dirichlet_skew_and_infeasibility():
    ds = _labelled(20000, 0.5, 2)
    parts = partition_dirichlet(ds, 4, 0.1, 1, seed=0)
    assert max(abs(label_share(p) - 0.5) for p in parts) >= 0.20
    with pytest.raises(PartitionError, match="min_partition_size"):
        partition_dirichlet(_labelled(10), 2, 1.0, 7, seed=0, max_retries=5)


def test_dirichlet_large_alpha_matches_iid():
    ds = _labelled(20000, 0.3, 4)
    pooled = label_share(ds)
    dirichlet = partition_dirichlet(ds, 4, 1e6, 1, seed=1)
    iid = partition_iid(ds, 4, 1)
    for d, i in zip(dirichlet, iid):
        assert abs(label_share(d) - pooled) <= 0.02
        assert abs(label_share(d) - label_share(i)) <= 0.02


def test_linear_sizes():
    assert [len(p) for p in partition_linear(_labelled(3), 2, 0)] == [1, 2]
    assert [len(p) for p in partition_linear(_labelled(1000), 4, 0)] == [100, 200, 300, 400]
    assert [len(p) for p in partition_linear(_labelled(11), 3, 0)] == [1, 3, 7]
    with pytest.raises(PartitionError):
        partition_linear(_labelled(5), 3, 0)


@given(random_tables(max_rows=64, min_rows=4), st.integers(1, 4), st.integers(0, 1000))
def test_all_strategies_conserve_rows(args, n, seed):
    ds, _ = args
    want = Counter(ds.row_ids.tolist())
    assert _rows(partition_iid(ds, n, seed)) == want
    if n * (n + 1) // 2 <= len(ds):
        assert _rows(partition_linear(ds, n, seed)) == want
    if n >= 2:
        try:
            parts = partition_dirichlet(ds, n, 0.5, 1, seed)
        except PartitionError:
            parts = None
        if parts is not None:
            assert _rows(parts) == want
            assert min(len(p) for p in parts) >= 1
    s = split_train_val_test(ds, SplitFractions(0.6, 0.2, 0.2), seed)
    assert _rows([s.train, s.validation, s.test]) == want


def test_partitioners_are_deterministic():
    ds = _labelled(500)
    for cfg in (PartitionConfig("iid", 3, seed=4), PartitionConfig("dirichlet", 3, 0.5, seed=4), PartitionConfig("linear", 3, seed=4)):
        a, b = partition(ds, cfg), partition(ds, cfg)
        assert all(x.equals(y) for x, y in zip(a, b))


def test_partition_config_validation():
    for bad in (dict(strategy="bogus"), dict(n=0), dict(alpha=0), dict(min_partition_size=0), dict(strategy="natural_key")):
        with pytest.raises(PartitionError):
            PartitionConfig(**bad)


def test_split_sizes():
    ds = _labelled(100)
    s = split_train_val_test(ds, SplitFractions(0.8, 0.1, 0.1), 0)
    assert s.sizes() == {"train": 80, "validation": 10, "test": 10}
    s = split_train_val_test(ds, SplitFractions(1, 0, 0), 0)
    assert s.sizes() == {"train": 100, "validation": 0, "test": 0}
    s = split_train_val_test(_labelled(25), SplitFractions(0.7, 0.15, 0.15), 0)
    # 0.15 * 25 = 3.75 -> 4 each, train keeps the remaining 17
    assert s.sizes() == {"train": 17, "validation": 4, "test": 4}
    with pytest.raises(PartitionError):
        SplitFractions(0.5, 0.5, 0.5)


def test_device_roles():
    ids = [f"c{i}" for i in range(10)]
    train, test = assign_device_roles(ids, 0.3, 5)
    assert len(test) == 3 and sorted(train + test) == sorted(ids)
    assert (train, test) == assign_device_roles(ids, 0.3, 5)
    assert len(assign_device_roles(["a", "b"], 0.01, 0)[1]) == 1
    with pytest.raises(PartitionError):
        assign_device_roles(["a"], 0.3, 0)
    with pytest.raises(PartitionError):
        assign_device_roles(ids, 1.0, 0)


def test_split_and_subpartition_federation():
    pool = generate_synthetic_pool(SyntheticSpec(n_clients=2, rows_per_client=(100, 100)))
    from fedfair.tabular import FederatedDataset, SplitSet

    fed = FederatedDataset({f"k{i}": SplitSet(d, Dataset.empty_like(d), Dataset.empty_like(d)) for i, d in enumerate(pool)})
    split = split_federation(fed, SplitFractions(), 3)
    assert all(split[c].sizes() == {"train": 80, "validation": 10, "test": 10} for c in split.client_ids)
    sub = subpartition_federation(split, PartitionConfig("iid", 2, seed=1))
    assert sub.client_ids == ["k0_0", "k0_1", "k1_0", "k1_1"]
    assert sum(len(sub[c].train) for c in sub.client_ids) == 200
