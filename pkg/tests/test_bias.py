from collections import Counter

import numpy as np
import pytest
from conftest import random_tables, table
from hypothesis import given
from hypothesis import strategies as st
from planted import crossing_client

from fedfair.bias import (
    Modification,
    apply_modifications,
    drop_negative_rows,
    eligible_rows,
    evaluate_bias,
    exacerbate_to_threshold,
    flip_negative_labels,
    modify_split,
)
from fedfair.errors import SchemaError
from fedfair.ingest import (
    SyntheticSpec,
    generate_synthetic,
    read_federation,
    write_federation,
)
from fedfair.models import TrainConfig, trainer
from fedfair.seeding import round_half_away

fractions = st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1)


def _mod(kind, ds, fraction, seed, secondary=False):
    attrs = ds.sensitive_attrs
    sec = (attrs[1], 1) if secondary and len(attrs) > 1 else None
    return Modification(kind, attrs[0], 1, fraction, secondary=sec, seed=seed)


def _eligible_ids(ds, mod):
    return set(ds.row_ids[eligible_rows(ds, mod)].tolist())


@given(random_tables(), fractions, st.integers(0, 2**32), st.booleans())
def test_flip_contract(args, fraction, seed, secondary):
    ds, _ = args
    mod = _mod("flip", ds, fraction, seed, secondary)
    out = flip_negative_labels(ds, mod)
    elig = _eligible_ids(ds, mod)
    changed = set(ds.row_ids[ds.label != out.label].tolist())
    assert len(out) == len(ds) and (out.row_ids == ds.row_ids).all()
    assert len(changed) == round_half_away(fraction * len(elig))
    assert changed <= elig
    assert (out.label[ds.label != out.label] == 1).all()


@given(random_tables(), fractions, st.integers(0, 2**32), st.booleans())
def test_drop_contract(args, fraction, seed, secondary):
    ds, _ = args
    mod = _mod("drop", ds, fraction, seed, secondary)
    out = drop_negative_rows(ds, mod)
    elig = _eligible_ids(ds, mod)
    removed = set(ds.row_ids.tolist()) - set(out.row_ids.tolist())
    assert len(removed) == len(ds) - len(out) == round_half_away(fraction * len(elig))
    assert removed <= elig
    kept = np.isin(ds.row_ids, out.row_ids)
    assert (ds.label[kept] == out.label).all()


def _rate(ds, attr, value):
    m = ds.columns[attr] == value
    return ds.label[m].mean() if m.any() else float("nan")


@given(random_tables(min_rows=1), st.integers(0, 2**32), st.sampled_from(["flip", "drop"]))
def test_monotone_rate_and_superset(args, seed, kind):
    ds, _ = args
    attr = ds.sensitive_attrs[0]
    prev_rate, prev_hit = None, set()
    for f in np.linspace(0, 1, 11):
        mod = Modification(kind, attr, 1, float(f), seed=seed)
        out = flip_negative_labels(ds, mod) if kind == "flip" else drop_negative_rows(ds, mod)
        hit = set(ds.row_ids[ds.label != out.label].tolist()) if kind == "flip" else set(ds.row_ids.tolist()) - set(out.row_ids.tolist())
        rate = _rate(out, attr, 1)
        assert hit >= prev_hit
        if prev_rate is not None and rate == rate:
            assert rate >= prev_rate - 1e-12
            if hit > prev_hit and kind == "flip":
                assert rate > prev_rate
        prev_rate, prev_hit = rate, hit


def test_drop_half_strictly_raises_group_rate():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(4, 40))
        sex = rng.integers(1, 3, n)
        y = rng.integers(0, 2, n)
        ds = table({"SEX": sex}, y, allowed={"SEX": [1, 2]})
        g = sex == 2
        if not (y[g] == 0).any() or not (y[g] == 1).any():
            continue
        out = drop_negative_rows(ds, Modification("drop", "SEX", 2, 0.5, seed=int(rng.integers(1000))))
        if round_half_away(0.5 * int((y[g] == 0).sum())) > 0:
            assert _rate(out, "SEX", 2) > _rate(ds, "SEX", 2)


def test_wy_like_drop_count():
    # 275 negatives with SEX=2 -> round(27.5) = 28 removed
    sex = np.r_[np.full(400, 2), np.full(400, 1)]
    y = np.r_[np.zeros(275, int), np.ones(125, int), np.zeros(200, int), np.ones(200, int)]
    ds = table({"SEX": sex}, y)
    out = drop_negative_rows(ds, Modification("drop", "SEX", 2, 0.1, seed=5))
    assert len(ds) - len(out) == 28
    assert Counter(out.columns["SEX"].tolist())[1] == 400


def test_flip_examples():
    sex = np.r_[np.full(60, 1), np.full(60, 2)]
    y = np.r_[np.zeros(40, int), np.ones(20, int), np.zeros(60, int)]
    ds = table({"SEX": sex}, y)
    half = flip_negative_labels(ds, Modification("flip", "SEX", 1, 0.5, seed=1))
    diff = ds.label != half.label
    assert diff.sum() == 20 and (ds.label[diff] == 0).all() and (sex[diff] == 1).all()
    full = flip_negative_labels(ds, Modification("flip", "SEX", 1, 1.0, seed=1))
    assert _rate(full, "SEX", 1) == 1.0 and _rate(full, "SEX", 2) == 0.0
    assert flip_negative_labels(ds, Modification("flip", "SEX", 1, 0.0)).equals(ds)
    assert drop_negative_rows(ds, Modification("drop", "SEX", 1, 0.0)).equals(ds)


@given(random_tables(min_rows=1))
def test_drop_all_twice_equals_once(args):
    ds, _ = args
    mod = _mod("drop", ds, 1.0, 3)
    once = drop_negative_rows(ds, mod)
    assert drop_negative_rows(once, mod).equals(once)


def test_no_eligible_rows_is_a_noop(caplog):
    ds = table({"SEX": np.array([1, 1, 2])}, [1, 1, 0])
    out = drop_negative_rows(ds, Modification("drop", "SEX", 1, 0.5))
    assert out.equals(ds)
    assert "no eligible" in caplog.text


def test_modification_validation():
    with pytest.raises(SchemaError):
        Modification("swap", "SEX", 1, 0.1)
    with pytest.raises(SchemaError):
        Modification("drop", "SEX", 1, 1.5)
    with pytest.raises(SchemaError):
        Modification("drop", "SEX", 1, 0.5, secondary=("SEX", 2))
    with pytest.raises(SchemaError):
        Modification("drop", "SEX", 1, 0.5, splits=("holdout",))
    with pytest.raises(SchemaError):
        flip_negative_labels(table({"SEX": np.array([1])}, [0]), Modification("drop", "SEX", 1, 0.5))
    with pytest.raises(SchemaError):
        eligible_rows(table({"SEX": np.array([1])}, [0]), Modification("drop", "RAC1P", 1, 0.5))
    m = Modification("flip", "RAC1P", 2, 0.3, secondary=("SEX", 2), splits=("train",), seed=9, client="CA")
    assert Modification.from_dict(m.to_dict()) == m


def _fed():
    return generate_synthetic(SyntheticSpec(n_clients=2, rows_per_client=(300, 300), seed=4))


def test_apply_modifications_compose_and_record(tmp_path):
    fed = _fed()
    assert apply_modifications(fed, []).clients == fed.clients
    mods = [Modification("flip", "RAC1P", 2, 0.5, secondary=("SEX", 2), seed=1),
            Modification("drop", "SEX", 1, 0.4, splits=("train",), seed=2, client="client_01")]
    out = apply_modifications(fed, mods)
    c0, c1 = fed.client_ids
    assert out[c0].train.equals(flip_negative_labels(fed[c0].train, mods[0], _split_seed(mods[0], c0, "train")))
    flipped = modify_split(fed[c1], mods[0], c1)[0]
    assert out[c1].train.equals(drop_negative_rows(flipped.train, mods[1], _split_seed(mods[1], c1, "train")))
    assert out[c1].test.equals(flipped.test)
    assert [m["kind"] for m in out.metadata.modifications] == ["flip", "drop"]
    effects = out.metadata.modifications[1]["effects"]
    assert [e["split"] for e in effects] == ["train"]
    write_federation(out, tmp_path)
    back = read_federation(tmp_path)
    assert back.metadata.modifications == out.metadata.modifications
    assert Modification.from_dict(back.metadata.modifications[0]) == mods[0]
    with pytest.raises(SchemaError):
        apply_modifications(fed, [Modification("drop", "SEX", 1, 0.1, client="nope")])


def _split_seed(mod, client, split):
    from fedfair.seeding import derive_seed

    return derive_seed(mod.seed, client, split)


TRAINERS = [trainer("logistic", TrainConfig()), trainer("gbdt", TrainConfig(n_rounds=20))]


def test_exacerbate_already_biased_returns_zero():
    split = crossing_client()
    strong = modify_split(split, Modification("drop", "SEX", 1, 0.6, seed=1))[0]
    label, _ = evaluate_bias(strong, TRAINERS, ["SEX", "RAC1P"])
    assert label == "SEX"
    res = exacerbate_to_threshold(strong, "SEX", 1, "SEX", TRAINERS, ["SEX", "RAC1P"], max_fraction=0.5, seed=3)
    assert res.success and res.fraction == 0.0
    assert res.split.train.equals(strong.train)


def test_exacerbate_failure_carries_best_trial():
    split = crossing_client()
    res = exacerbate_to_threshold(split, "SEX", 1, "SEX", TRAINERS, ["SEX", "RAC1P"], step=0.1, max_fraction=0.1)
    assert not res.success
    assert [t["fraction"] for t in res.trials] == [0.0, 0.1]
    assert res.fraction == max(res.trials, key=lambda t: t["strength"])["fraction"]
    assert len(res.reports) == 2
    with pytest.raises(SchemaError):
        exacerbate_to_threshold(split, "SEX", 1, "SEX", TRAINERS, ["SEX"], step=0.5, max_fraction=0.2)
