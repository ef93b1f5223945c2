"""One test per acceptance criterion; each prints a PASS/FAIL line."""

import time
from collections import Counter

import numpy as np
from conftest import ACCEPTANCE
from oracles import dd_oracle, eod_oracle
from planted import crossing_client, mitigation_federation, propagation_federation

from fedfair.bias import (
    Modification,
    drop_negative_rows,
    eligible_rows,
    exacerbate_to_threshold,
    flip_negative_labels,
)
from fedfair.cli import cmd_generate, load_config
from fedfair.errors import MetricUndefined
from fedfair.fairness import (
    AttributeFairness,
    FairnessReport,
    bias_label,
    demographic_disparity,
    equalized_odds_difference,
    fairness_table,
)
from fedfair.fl import (
    FairRegConfig,
    FLConfig,
    aggregate_weighted,
    evaluate_global,
    run_fair_fedavg,
    run_fedavg,
)
from fedfair.ingest import SyntheticSpec, generate_synthetic
from fedfair.models import (
    LinearModel,
    TrainConfig,
    encode,
    fit_encoding,
    init_params,
    local_seed,
    local_update,
    logistic_gradient,
    predict,
    train_logistic,
    trainer,
)
from fedfair.partition import (
    SplitFractions,
    label_share,
    partition_dirichlet,
    partition_iid,
    partition_linear,
    split_train_val_test,
)
from fedfair.seeding import derive_seed, round_half_away
from fedfair.tabular import Dataset, categorical, numeric


def record(n: int, name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {name} ({detail})"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line


def random_instance(rng, max_rows=64, max_attrs=3, max_values=4, min_rows=0):
    n = int(rng.integers(min_rows, max_rows + 1))
    schema, cols, attrs = [], {}, []
    for a in range(int(rng.integers(1, max_attrs + 1))):
        k = int(rng.integers(1, max_values + 1))
        cols[f"A{a}"] = rng.integers(1, k + 1, n)
        schema.append(categorical(f"A{a}", range(1, k + 1)))
        attrs.append(f"A{a}")
    cols["F"] = rng.normal(size=n)
    schema.append(numeric("F"))
    ds = Dataset(schema, cols, rng.integers(0, 2, n), attrs, np.arange(n) * 3 + 1)
    return ds, rng.integers(0, 2, n)


def test_criterion_01_fairness_oracle_equivalence():
    rng = np.random.default_rng(20240101)
    start, checked, mismatches = time.perf_counter(), 0, 0
    for _ in range(1000):
        ds, preds = random_instance(rng)
        for attr in ds.sensitive_attrs:
            allowed = ds.column_schema(attr).allowed_values
            values = ds.columns[attr].tolist()
            want_dd = dd_oracle(preds, values, allowed)
            want_eod = eod_oracle(preds, ds.label, values, allowed)
            try:
                got = demographic_disparity(preds, ds, attr)
                ok = want_dd is not None and abs(got.dd - float(want_dd[0])) <= 1e-12 and got.pair == want_dd[1]
            except MetricUndefined:
                ok = want_dd is None
            try:
                got_e = equalized_odds_difference(preds, ds.label, ds, attr)
                ok &= want_eod is not None and abs(got_e.eod - float(want_eod[0])) <= 1e-12 and got_e.argmax == want_eod[1]
            except MetricUndefined:
                ok &= want_eod is None
            checked += 1
            mismatches += not ok
    elapsed = time.perf_counter() - start
    record(1, "DD/EOD equal the brute-force oracle", mismatches == 0 and elapsed < 10,
           f"{checked} attribute checks over 1000 instances, {mismatches} mismatches, {elapsed:.1f}s")


def test_criterion_02_gradient_check():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(1, 50)), int(rng.integers(1, 6))
        ds = Dataset([numeric(f"X{j}") for j in range(d)] + [categorical("SEX", [1, 2])],
                     {**{f"X{j}": rng.normal(size=n) for j in range(d)}, "SEX": rng.integers(1, 3, n)},
                     rng.integers(0, 2, n), ["SEX"])
        enc = fit_encoding(ds)
        theta = rng.normal(size=enc.dim + 1)
        g = logistic_gradient(LinearModel(theta[:-1], float(theta[-1]), enc), ds)
        X, y, h = encode(enc, ds), ds.label.astype(float), 1e-6

        def loss(t):
            z = X @ t[:-1] + t[-1]
            return np.mean(np.log1p(np.exp(z)) - y * z)

        fd = np.array([(loss(theta + h * e) - loss(theta - h * e)) / (2 * h) for e in np.eye(len(theta))])
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12))
    record(2, "logistic gradient vs central differences", worst < 1e-5, f"max relative error {worst:.2e} over 100 draws")


def test_criterion_03_fedavg_identity():
    fed = generate_synthetic(SyntheticSpec(n_clients=1, rows_per_client=(300, 300), seed=3))
    cfg = FLConfig(rounds=8, local_epochs=2, batch_size=32, seed=5)
    _, hist = run_fedavg(fed, cfg, keep_params=True)
    train = fed["client_00"].train
    enc = fit_encoding([train])
    X, y = encode(enc, train), train.label.astype(float)
    theta = init_params(enc.dim, derive_seed(5, "init"))
    worst = 0.0
    for r, rec in enumerate(hist.rounds):
        theta = local_update(theta, X, y, cfg.train_config(), local_seed(5, r, 0))
        worst = max(worst, float(np.max(np.abs(rec.params - theta))))
    agg = float(aggregate_weighted([np.array([0.0]), np.array([4.0])], [1, 3])[0])
    record(3, "FedAvg with K=1 equals local training; aggregate example", worst <= 1e-12 and agg == 3.0,
           f"max per-round difference {worst:.1e}, aggregate={agg!r}")


def test_criterion_04_lambda_zero_equivalence():
    fed = generate_synthetic(SyntheticSpec(n_clients=4, rows_per_client=(300, 500), seed=9))
    cfg = FLConfig(rounds=10, seed=13)
    a, ha = run_fedavg(fed, cfg, keep_params=True)
    b, hb = run_fair_fedavg(fed, cfg, FairRegConfig(lam=0.0), keep_params=True)
    same = a.params.tobytes() == b.params.tobytes() and all(
        x.params.tobytes() == y.params.tobytes() for x, y in zip(ha.rounds, hb.rounds))
    record(4, "fair run with lambda=0 reproduces FedAvg bit for bit", same, "10 rounds, 4 clients, parameters compared bytewise")


def test_criterion_05_mitigation_direction():
    fed = mitigation_federation()
    pool = Dataset.concat([fed[c].combined() for c in fed.client_ids])
    planted = demographic_disparity(pool.label, pool, "SEX").dd
    test = Dataset.concat([fed[c].test for c in fed.client_ids])
    cfg = FLConfig(rounds=20, seed=1)
    dd = {}
    for lam in (0.0, 0.9):
        model, _ = run_fair_fedavg(fed, cfg, FairRegConfig(lam=lam, target_attr="SEX"))
        dd[lam] = demographic_disparity(predict(model, test)[1], test, "SEX").dd
    ok = abs(planted - 0.30) <= 0.02 and dd[0.9] <= 0.5 * dd[0.0]
    record(5, "lambda=0.9 at least halves global DD(SEX)", ok,
           f"planted DD {planted:.4f}, DD lambda=0 {dd[0.0]:.4f}, lambda=0.9 {dd[0.9]:.4f}")


def test_criterion_06_bias_propagation():
    fed = propagation_federation()
    model, _ = run_fedavg(fed, FLConfig(rounds=20, seed=1))
    glob = evaluate_global(model, fed, ["SEX"])
    higher = 0
    for cid in fed.client_ids:
        local = train_logistic(fed[cid], TrainConfig())
        local_dd = fairness_table(fed[cid].test, ["SEX"], preds=predict(local, fed[cid].test)[1]).attributes["SEX"].value
        higher += glob[cid].report.attributes["SEX"].value >= local_dd
    share = higher / len(fed)
    record(6, "global DD >= local DD for most clients", share >= 0.6, f"{higher}/{len(fed)} clients")


def test_criterion_07_exacerbation_contracts():
    rng = np.random.default_rng(77)
    bad = 0
    for _ in range(500):
        ds, _ = random_instance(rng, min_rows=1)
        attr = ds.sensitive_attrs[0]
        kind = "flip" if rng.random() < 0.5 else "drop"
        seed = int(rng.integers(2**32))
        f = float(rng.random())
        sec = (ds.sensitive_attrs[1], 1) if len(ds.sensitive_attrs) > 1 and rng.random() < 0.5 else None
        mod = Modification(kind, attr, 1, f, secondary=sec, seed=seed)
        elig = set(ds.row_ids[eligible_rows(ds, mod)].tolist())
        fn = flip_negative_labels if kind == "flip" else drop_negative_rows
        out = fn(ds, mod)
        hit = (set(ds.row_ids[ds.label != out.label].tolist()) if kind == "flip"
               else set(ds.row_ids.tolist()) - set(out.row_ids.tolist()))
        bad += len(hit) != round_half_away(f * len(elig)) or not hit <= elig
        rates = []
        for g in np.linspace(0, 1, 6):
            o = fn(ds, Modification(kind, attr, 1, float(g), secondary=sec, seed=seed))
            m = o.columns[attr] == 1
            rates.append(o.label[m].mean() if m.any() else np.nan)
        rates = [r for r in rates if r == r]
        bad += any(b < a - 1e-12 for a, b in zip(rates, rates[1:]))
    trainers = [trainer("logistic", TrainConfig()), trainer("gbdt", TrainConfig(n_rounds=20))]
    res = exacerbate_to_threshold(crossing_client(), "SEX", 1, "SEX", trainers, ["SEX", "RAC1P"],
                                  threshold=0.09, step=0.1, max_fraction=0.9, seed=0)
    ok = bad == 0 and res.success and res.fraction == 0.3
    record(7, "flip/drop contracts and planted crossing at 0.3", ok,
           f"{bad} violations in 500 random pairs, search returned fraction {res.fraction}")


def test_criterion_08_partitioner_conservation():
    rng = np.random.default_rng(8)
    bad = 0
    for _ in range(200):
        ds, _ = random_instance(rng, min_rows=6)
        want = Counter(ds.row_ids.tolist())
        n = int(rng.integers(2, 4))
        seed = int(rng.integers(1000))
        s = split_train_val_test(ds, SplitFractions(0.6, 0.2, 0.2), seed)
        for parts in (partition_iid(ds, n, seed), partition_linear(ds, n, seed),
                      partition_dirichlet(ds, n, 1.0, 1, seed), [s.train, s.validation, s.test]):
            bad += Counter(r for p in parts for r in p.row_ids.tolist()) != want
    big_rng = np.random.default_rng(0)
    n = 20000
    big = Dataset([numeric("X"), categorical("SEX", [1, 2])],
                  {"X": big_rng.normal(size=n), "SEX": big_rng.integers(1, 3, n)},
                  (big_rng.random(n) < 0.3).astype(int), ["SEX"])
    gap = max(abs(label_share(d) - label_share(i)) for d, i in
              zip(partition_dirichlet(big, 4, 1e6, 1, seed=1), partition_iid(big, 4, seed=1)))
    record(8, "partitioners conserve rows; Dirichlet(1e6) matches IID", bad == 0 and gap <= 0.02,
           f"{bad} conservation failures over 200 datasets, max label-share gap {100 * gap:.2f}pp")


def test_criterion_09_end_to_end_determinism(tmp_path):
    trees = []
    for run in ("a", "b"):
        out = cmd_generate(load_config("recipe:synthetic_demo", out=str(tmp_path / run)))
        trees.append({str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    kinds = Counter(k.rsplit(".", 1)[-1] for k in trees[0])
    ok = trees[0] == trees[1] and kinds["svg"] >= 1 and "datasheet.md" in trees[0]
    record(9, "generate twice gives byte-identical trees", ok, f"{len(trees[0])} files compared, {kinds['svg']} SVG")


def _report(maxes, ovr=None):
    return FairnessReport("DD", "value", "model", None, {
        a: AttributeFairness(v, (1, 2), {}, (ovr or {}).get(a, {1: v, 2: -v})) for a, v in maxes.items()})


def test_criterion_10_bias_rule_fidelity():
    cases = [
        ([_report({"SEX": 0.12, "RAC1P": 0.04}), _report({"SEX": 0.10, "RAC1P": 0.07})], "attribute", "SEX"),
        ([_report({"SEX": 0.12, "RAC1P": 0.04}), _report({"SEX": 0.05, "RAC1P": 0.11})], "attribute", None),
        ([_report({"SEX": 0.12, "RAC1P": 0.04}), _report({"SEX": 0.08, "RAC1P": 0.01})], "attribute", None),
        ([_report({"SEX": 0.09, "RAC1P": 0.01}), _report({"SEX": 0.30, "RAC1P": 0.01})], "attribute", None),
        ([_report({"R": 0.3}, {"R": {4: 0.2, 8: -0.12}}), _report({"R": 0.4}, {"R": {4: 0.25, 8: -0.1}})], "value", ("R", 4)),
        ([_report({"R": 0.3}, {"R": {4: 0.2, 8: -0.12}}), _report({"R": 0.4}, {"R": {4: 0.1, 8: -0.3}})], "value", None),
        ([_report({"R": 0.3}, {"R": {4: 0.2, 8: -0.12}}), _report({"R": 0.4}, {"R": {4: 0.05, 8: 0.0}})], "value", None),
    ]
    got = [bias_label(reports, 0.09, level) for reports, level, _ in cases]
    want = [w for _, _, w in cases]
    record(10, "bias rule decisions incl. both rejection branches", got == want, f"{sum(g == w for g, w in zip(got, want))}/{len(cases)} cases")
