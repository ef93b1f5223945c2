"""Federated training simulation: FedAvg, fairness-regularized FedAvg and a pooled baseline.

Clients are processed in federation order and aggregated by an ordered
reduction, so results never depend on execution order. Every random choice
is derived from ``FLConfig.seed``: initial weights from ``(seed, "init")``,
client sampling from ``(seed, "sample", round)`` and local shuffling from
``local_seed(seed, round, client_index)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import MetricUndefined, SchemaError, TrainingError
from .fairness import FairnessReport, demographic_disparity, fairness_table
from .models import (
    LinearModel,
    TrainConfig,
    accuracy,
    encode,
    fit_encoding,
    init_params,
    local_seed,
    local_update,
    loss_and_grad,
    predict,
    sigmoid,
    train_logistic,
)
from .seeding import derive_seed, make_rng, round_half_away
from .tabular import Dataset, FederatedDataset


@dataclass(frozen=True)
class FLConfig:
    rounds: int = 50
    local_epochs: int = 1
    client_fraction: float = 1.0
    batch_size: int = 64
    learning_rate: float = 0.1
    optimizer: str = "sgd"
    l2_penalty: float = 0.0
    seed: int = 0
    include_sensitive: bool = True
    exclude_columns: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "exclude_columns", tuple(self.exclude_columns))
        if self.rounds < 1 or self.local_epochs < 1:
            raise TrainingError("rounds and local_epochs must be >= 1")
        if not 0 < self.client_fraction <= 1:
            raise TrainingError("client_fraction must lie in (0, 1]")

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.local_epochs,
            l2_penalty=self.l2_penalty,
            optimizer=self.optimizer,
            seed=self.seed,
            include_sensitive=self.include_sensitive,
            exclude_columns=self.exclude_columns,
        )

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class FairRegConfig:
    """Weight ``lam`` in [0, 1] on the disparity penalty; ``target_dd`` is the goal used in tuning."""

    lam: float = 0.5
    target_dd: float = 0.05
    target_attr: str = "SEX"

    def __post_init__(self):
        if not 0 <= self.lam <= 1:
            raise TrainingError("lam must lie in [0, 1]")
        if self.target_dd < 0:
            raise TrainingError("target_dd must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RoundRecord:
    round: int
    participants: list[str]
    sizes: list[int]
    train_accuracy: float
    validation_accuracy: float
    dd: dict[str, float]
    params: np.ndarray | None = field(default=None, repr=False)


@dataclass
class RoundHistory:
    rounds: list[RoundRecord] = field(default_factory=list)
    attrs: list[str] = field(default_factory=list)
    fair: dict | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "participants", "sizes", "train_accuracy", "validation_accuracy"]
                   + [f"dd_{a}" for a in self.attrs])
        for r in self.rounds:
            w.writerow(
                [r.round, ";".join(r.participants), ";".join(map(str, r.sizes)),
                 _f(r.train_accuracy), _f(r.validation_accuracy)]
                + [_f(r.dd.get(a, math.nan)) for a in self.attrs]
            )
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "attrs": list(self.attrs),
            "fair": self.fair,
            "rounds": [
                {
                    "round": r.round,
                    "participants": r.participants,
                    "sizes": r.sizes,
                    "train_accuracy": _none(r.train_accuracy),
                    "validation_accuracy": _none(r.validation_accuracy),
                    "dd": {a: _none(v) for a, v in r.dd.items()},
                }
                for r in self.rounds
            ],
        }


def _f(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def _none(v: float):
    return None if math.isnan(v) else v


def aggregate_weighted(params: Sequence[np.ndarray], sizes: Sequence[int]) -> np.ndarray:
    """Size-weighted mean ``sum_k (n_k / n) theta_k``, reduced in list order."""
    if not params:
        raise SchemaError("nothing to aggregate")
    shape = np.shape(params[0])
    if any(np.shape(p) != shape for p in params):
        raise SchemaError("parameter vectors differ in shape")
    if len(sizes) != len(params) or any(s <= 0 for s in sizes):
        raise SchemaError("need one positive size per parameter vector")
    n = float(sum(sizes))
    out = np.zeros(shape)
    for theta, nk in zip(params, sizes):
        out = out + (nk / n) * np.asarray(theta, dtype=float)
    return out


def fair_batch_gradient(theta, X, y, groups, lam: float, l2: float) -> np.ndarray:
    """Gradient of ``(1 - lam) CE + lam |mean p(Z=z*) - mean p(Z!=z*)| + (l2/2)||w||^2``.

    ``p`` is the model's soft score; z* is the group value in the batch with
    the largest absolute soft-rate gap to the rest (ties: lowest code).
    Batches holding fewer than two groups get the plain CE gradient.
    """
    ce = loss_and_grad(theta, X, y, 0.0)[1]
    w = theta[:-1]
    present = np.unique(groups)
    if len(present) < 2:
        ce[:-1] += l2 * w
        return ce
    p = sigmoid(X @ w + theta[-1])
    best, gap_best, z_best = -1.0, 0.0, None
    for z in present:
        m = groups == z
        gap = p[m].mean() - p[~m].mean()
        if abs(gap) > best:
            best, gap_best, z_best = abs(gap), gap, z
    m = groups == z_best
    s = p * (1.0 - p)
    Xt = np.hstack([X, np.ones((len(X), 1))])
    d_gap = (s[m] @ Xt[m]) / m.sum() - (s[~m] @ Xt[~m]) / (~m).sum()
    g = (1.0 - lam) * ce + lam * np.sign(gap_best) * d_gap
    g[:-1] += l2 * w
    return g


def soft_disparity(theta, X, groups) -> float:
    """Largest one-vs-rest gap in mean predicted probability (the regularized quantity)."""
    p = sigmoid(X @ theta[:-1] + theta[-1])
    gaps = [abs(p[groups == z].mean() - p[groups != z].mean()) for z in np.unique(groups)]
    return max(gaps) if len(gaps) > 1 else 0.0


def _pooled(parts: list[Dataset]) -> Dataset | None:
    parts = [p for p in parts if len(p)]
    return Dataset.concat(parts) if parts else None


def _round_metrics(model, train: Dataset, val: Dataset | None, attrs):
    train_acc = accuracy(predict(model, train)[1], train.label)
    evald = val if val is not None else train
    val_acc = accuracy(predict(model, val)[1], val.label) if val is not None else math.nan
    preds = predict(model, evald)[1]
    dd = {}
    for a in attrs:
        try:
            dd[a] = demographic_disparity(preds, evald, a).dd
        except MetricUndefined:
            dd[a] = math.nan
    return train_acc, val_acc, dd


def _run(fed: FederatedDataset, config: FLConfig, fair: FairRegConfig | None, clients, keep_params: bool):
    ids = list(clients) if clients is not None else fed.client_ids
    if not ids:
        raise TrainingError("federation has no clients")
    unknown = [c for c in ids if c not in fed.clients]
    if unknown:
        raise SchemaError(f"unknown clients {unknown}")
    ids = [c for c in ids if len(fed[c].train)]
    if not ids:
        raise TrainingError("no client holds training data")
    tc = config.train_config()
    trains = [fed[c].train for c in ids]
    enc = fit_encoding(trains, config.include_sensitive, config.exclude_columns)
    Xs = [encode(enc, d) for d in trains]
    ys = [d.label.astype(float) for d in trains]
    use_fair = fair is not None and fair.lam > 0
    if fair is not None and fair.target_attr not in trains[0].sensitive_attrs:
        raise SchemaError(f"{fair.target_attr!r} is not a sensitive attribute")
    groups = [d.columns[fair.target_attr] for d in trains] if use_fair else None
    pooled_train = _pooled(trains)
    pooled_val = _pooled([fed[c].validation for c in ids])
    attrs = list(trains[0].sensitive_attrs)

    theta = init_params(enc.dim, derive_seed(config.seed, "init"))
    K = len(ids)
    m = max(1, round_half_away(config.client_fraction * K))
    history = RoundHistory(attrs=attrs, fair=fair.to_dict() if fair is not None else None)
    for r in range(config.rounds):
        chosen = np.sort(make_rng(derive_seed(config.seed, "sample", r)).choice(K, size=m, replace=False))
        updates, sizes = [], []
        for k in chosen:
            batch_grad = None
            if use_fair:
                Xk, yk, gk = Xs[k], ys[k], groups[k]

                def batch_grad(th, idx, Xk=Xk, yk=yk, gk=gk):
                    return fair_batch_gradient(th, Xk[idx], yk[idx], gk[idx], fair.lam, config.l2_penalty)

            updates.append(local_update(theta, Xs[k], ys[k], tc, local_seed(config.seed, r, int(k)), batch_grad=batch_grad))
            sizes.append(len(ys[k]))
        theta = aggregate_weighted(updates, sizes)
        model = LinearModel(theta[:-1].copy(), float(theta[-1]), enc)
        train_acc, val_acc, dd = _round_metrics(model, pooled_train, pooled_val, attrs)
        history.rounds.append(RoundRecord(
            r, [ids[k] for k in chosen], sizes, train_acc, val_acc, dd,
            theta.copy() if keep_params else None,
        ))
    return LinearModel(theta[:-1].copy(), float(theta[-1]), enc), history


def run_fedavg(fed: FederatedDataset, config: FLConfig, clients: Sequence[str] | None = None, keep_params: bool = False):
    """FedAvg over ``clients`` (default: all). Returns ``(global_model, history)``."""
    return _run(fed, config, None, clients, keep_params)


def run_fair_fedavg(
    fed: FederatedDataset,
    config: FLConfig,
    fair: FairRegConfig,
    clients: Sequence[str] | None = None,
    keep_params: bool = False,
):
    """FedAvg whose local batch objective adds a weighted soft-disparity penalty.

    With ``fair.lam == 0`` the penalty is skipped entirely, reproducing
    :func:`run_fedavg` bit for bit.
    """
    return _run(fed, config, fair, clients, keep_params)


def train_pooled(fed: FederatedDataset, config: TrainConfig, clients: Sequence[str] | None = None) -> LinearModel:
    """Centralized baseline: logistic regression on the union of train splits."""
    ids = list(clients) if clients is not None else fed.client_ids
    pooled = _pooled([fed[c].train for c in ids])
    if pooled is None:
        raise TrainingError("union of train splits is empty")
    return train_logistic(pooled, config)


@dataclass
class ClientEvaluation:
    report: FairnessReport
    accuracy: float
    n_rows: int


def evaluation_data(fed: FederatedDataset, cid: str, mode: str) -> Dataset:
    if mode == "cross_silo":
        test = fed[cid].test
        if len(test) == 0:
            raise SchemaError(f"client {cid!r} has no test split")
        return test
    if mode == "cross_device":
        return fed[cid].combined()
    raise SchemaError(f"unknown evaluation mode {mode!r}")


def evaluate_models(
    models: dict,
    fed: FederatedDataset,
    attrs: Sequence,
    mode: str = "cross_silo",
    metric: str = "DD",
    level: str = "value",
    model_id: str | None = None,
) -> dict[str, ClientEvaluation]:
    """Evaluate ``models[cid]`` on each listed client's evaluation data."""
    out = {}
    for cid, model in models.items():
        data = evaluation_data(fed, cid, mode)
        preds = predict(model, data)[1]
        out[cid] = ClientEvaluation(
            fairness_table(data, attrs, metric, level, preds=preds, model_id=model_id),
            accuracy(preds, data.label),
            len(data),
        )
    return out


def evaluate_global(
    model,
    fed: FederatedDataset,
    attrs: Sequence,
    mode: str = "cross_silo",
    test_clients: Sequence[str] | None = None,
    metric: str = "DD",
    level: str = "value",
    model_id: str = "global",
) -> dict[str, ClientEvaluation]:
    """Per-client fairness and accuracy of one global model.

    ``cross_silo`` evaluates every client on its own test split;
    ``cross_device`` evaluates only ``test_clients`` on their full data.
    """
    if mode == "cross_device":
        if not test_clients:
            raise SchemaError("cross_device evaluation needs test_clients")
        ids = list(test_clients)
    else:
        ids = fed.client_ids
    return evaluate_models({c: model for c in ids}, fed, attrs, mode, metric, level, model_id)
