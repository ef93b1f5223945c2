"""Benchmark constructions: per-client bias labelling, threshold-driven exacerbation, device subsets.

The four canned JSON configs in ``fedfair/recipes/`` wire these steps
together for the CLI; the functions here work on any federation.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass
from importlib import resources
from typing import Callable, Sequence

from .bias import Modification, evaluate_bias, exacerbate_to_threshold, modify_split
from .errors import MetricUndefined, PartitionError, SchemaError, TrainingError
from .fairness import FairnessReport, group_rates
from .partition import (
    SplitFractions,
    assign_device_roles,
    partition_iid,
    split_train_val_test,
)
from .seeding import derive_seed
from .tabular import SPLITS, FederatedDataset, SplitSet

log = logging.getLogger(__name__)

RECIPES = ("attribute_silo", "value_silo", "attribute_device", "value_device")
DEMOS = ("synthetic_demo",)


def load_recipe(name: str) -> dict:
    if name not in RECIPES + DEMOS:
        raise SchemaError(f"unknown recipe {name!r}; choose from {RECIPES}")
    text = resources.files("fedfair").joinpath(f"recipes/{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass(frozen=True)
class ThresholdSearch:
    level: str = "attribute"
    threshold: float = 0.09
    step: float = 0.1
    max_fraction: float = 0.9
    splits: tuple[str, ...] = SPLITS

    def __post_init__(self):
        object.__setattr__(self, "splits", tuple(self.splits))
        if self.level not in ("attribute", "value"):
            raise SchemaError(f"threshold search level must be attribute or value, got {self.level!r}")
        if self.threshold <= 0 or not 0 < self.step <= self.max_fraction <= 1:
            raise SchemaError("need threshold > 0 and 0 < step <= max_fraction <= 1")
        if set(self.splits) - set(SPLITS):
            raise SchemaError(f"unknown splits {sorted(set(self.splits) - set(SPLITS))}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["splits"] = list(self.splits)
        return d


def _label_json(label):
    return list(label) if isinstance(label, tuple) else label


def choose_drop_target(split: SplitSet, attrs: Sequence[str], reports: Sequence[FairnessReport], level: str):
    """Pick what to drop so that an existing disparity grows.

    Attribute level: the attribute whose smallest per-model maximum DD is
    largest, dropping negatives of its group with the highest positive rate
    in train. Value level: the (attribute, value) whose one-vs-rest gap is
    positive for every model and largest in the worst case.
    Returns ``(drop_attr, drop_value, target)``.
    """
    if level == "attribute":
        attr = min(attrs, key=lambda a: (-min(r.attributes[a].value for r in reports), a))
        rates = group_rates(split.train.label, split.train, attr)
        live = [(-r, v) for v, r in zip(rates.values, rates.positive_rate) if r == r]
        if not live:
            raise MetricUndefined(f"no defined positive rate for {attr!r}")
        value = min(live)[1]
        return attr, int(value), attr
    best = None
    for a in attrs:
        for v in reports[0].attributes[a].one_vs_rest:
            gap = min(r.attributes[a].one_vs_rest.get(v, float("nan")) for r in reports)
            if gap == gap and (best is None or gap > best[0]):
                best = (gap, a, int(v))
    if best is None:
        raise MetricUndefined("no defined one-vs-rest gap to amplify")
    _, a, v = best
    return a, v, (a, v)


def bias_clients(
    fed: FederatedDataset,
    trainers: Sequence[Callable],
    attrs: Sequence[str],
    search: ThresholdSearch = ThresholdSearch(),
    seed: int = 0,
) -> FederatedDataset:
    """Label every client with the bias rule; amplify the ones that fail it.

    A client already labelled keeps its data. Otherwise negatives of the
    chosen group are dropped at growing fractions until the rule holds.
    Clients where no fraction up to ``max_fraction`` works are left
    unmodified and recorded with ``success: false``.
    """
    clients = dict(fed.clients)
    record = copy.deepcopy(fed.metadata)
    outcomes = {}
    for cid, split in fed.clients.items():
        label, reports = evaluate_bias(split, trainers, attrs, search.threshold, search.level)
        if label is not None:
            outcomes[cid] = {"label": _label_json(label), "fraction": 0.0, "success": True}
            continue
        drop_attr, drop_value, target = choose_drop_target(split, attrs, reports, search.level)
        mod_seed = derive_seed(seed, "exacerbate", cid)
        res = exacerbate_to_threshold(
            split, drop_attr, drop_value, target, trainers, attrs, search.threshold, search.step,
            search.max_fraction, search.level, search.splits, mod_seed, cid,
        )
        outcome = {"label": _label_json(res.label) if res.success else None, "fraction": res.fraction,
                   "success": res.success, "target": _label_json(target)}
        if res.success and res.fraction > 0:
            mod = Modification("drop", drop_attr, drop_value, res.fraction, splits=search.splits, seed=mod_seed, client=cid)
            clients[cid], effects = modify_split(split, mod, cid)
            record.modifications.append({**mod.to_dict(), "effects": effects})
        elif not res.success:
            log.info("client %s: bias rule not met up to fraction %s", cid, search.max_fraction)
        outcomes[cid] = outcome
    record.threshold_rule = {
        **search.to_dict(),
        "rule": "all models share the argmax and the smallest maximum DD exceeds the threshold",
        "models": [getattr(t, "__name__", "model") for t in trainers],
        "outcomes": outcomes,
    }
    return FederatedDataset(clients, record)


def device_from_silo(
    fed: FederatedDataset,
    n_subsets: int,
    trainers: Sequence[Callable],
    attrs: Sequence[str],
    search: ThresholdSearch = ThresholdSearch(),
    fractions: SplitFractions = SplitFractions(),
    test_client_fraction: float = 0.3,
    seed: int = 0,
) -> FederatedDataset:
    """Cut every client into ``n_subsets`` IID pieces and keep the ones the bias rule labels.

    Kept subsets become the device clients (``<client>_<i>``); modifications
    already applied to a parent client carry over. Kept and rejected ids,
    their labels and the train/test client roles go into ``record.device``.
    """
    clients, labels, rejected = {}, {}, []
    for cid, split in fed.clients.items():
        parts = partition_iid(split.combined(), n_subsets, derive_seed(seed, "device", cid))
        for i, part in enumerate(parts):
            sid = f"{cid}_{i}"
            sub = split_train_val_test(part, fractions, derive_seed(seed, "device_split", cid, i))
            try:
                label, _ = evaluate_bias(sub, trainers, attrs, search.threshold, search.level)
            except (TrainingError, MetricUndefined) as e:
                log.info("subset %s rejected: %s", sid, e)
                label = None
            if label is None:
                rejected.append(sid)
            else:
                clients[sid] = sub
                labels[sid] = _label_json(label)
    if len(clients) < 2:
        raise PartitionError(f"only {len(clients)} subsets met the bias rule; need at least two")
    train_ids, test_ids = assign_device_roles(list(clients), test_client_fraction, derive_seed(seed, "roles"))
    record = copy.deepcopy(fed.metadata)
    record.clients = list(clients)
    record.split_fractions = fractions.to_dict()
    record.device = {
        "subsets_per_client": n_subsets,
        "kept": list(clients),
        "rejected": rejected,
        "labels": labels,
        "test_client_fraction": test_client_fraction,
        "train_clients": train_ids,
        "test_clients": test_ids,
        "rule": {**search.to_dict(), "models": [getattr(t, "__name__", "model") for t in trainers]},
    }
    record.seeds = {**record.seeds, "device": seed}
    return FederatedDataset(clients, record)
