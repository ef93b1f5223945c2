"""Controlled bias exacerbation on negative-label rows.

Both operations act only on *eligible* rows: label 0 and the targeted group
(optionally intersected with a secondary attribute value). Exactly
``round(fraction * |eligible|)`` rows (half away from zero) are flipped to 1
or dropped; which ones is a seeded permutation prefix, so a larger fraction
with the same seed always affects a superset of rows.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import SchemaError
from .fairness import FairnessReport, bias_label, fairness_table
from .models import predict
from .seeding import derive_seed, make_rng, round_half_away
from .tabular import SPLITS, Dataset, FederatedDataset, SplitSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Modification:
    kind: str
    attr: str
    value: int
    fraction: float
    secondary: tuple[str, int] | None = None
    splits: tuple[str, ...] = SPLITS
    seed: int = 0
    client: str | None = None

    def __post_init__(self):
        if self.kind not in ("flip", "drop"):
            raise SchemaError(f"modification kind must be flip or drop, got {self.kind!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise SchemaError("modification fraction must lie in [0, 1]")
        if self.secondary is not None:
            object.__setattr__(self, "secondary", (str(self.secondary[0]), int(self.secondary[1])))
            if self.secondary[0] == self.attr:
                raise SchemaError("secondary attribute must differ from the primary one")
        object.__setattr__(self, "splits", tuple(self.splits))
        bad = set(self.splits) - set(SPLITS)
        if bad:
            raise SchemaError(f"unknown splits {sorted(bad)}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "client": self.client,
            "attr": self.attr,
            "value": int(self.value),
            "secondary": None if self.secondary is None else list(self.secondary),
            "fraction": float(self.fraction),
            "splits": list(self.splits),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d) -> "Modification":
        sec = d.get("secondary")
        return cls(
            d["kind"], d["attr"], int(d["value"]), float(d["fraction"]),
            None if sec is None else (sec[0], int(sec[1])),
            tuple(d.get("splits", SPLITS)), int(d.get("seed", 0)), d.get("client"),
        )


def eligible_rows(dataset: Dataset, mod: Modification) -> np.ndarray:
    """Positions of negative-label rows in the targeted (sub)group."""
    if mod.attr not in dataset.sensitive_attrs:
        raise SchemaError(f"{mod.attr!r} is not a sensitive attribute")
    mask = (dataset.label == 0) & (dataset.columns[mod.attr] == mod.value)
    if mod.secondary is not None:
        sattr, sval = mod.secondary
        if sattr not in dataset.columns or not dataset.column_schema(sattr).is_categorical:
            raise SchemaError(f"secondary attribute {sattr!r} is not a categorical column")
        mask &= dataset.columns[sattr] == sval
    return np.flatnonzero(mask)


def _selected(dataset: Dataset, mod: Modification, seed: int) -> np.ndarray:
    elig = eligible_rows(dataset, mod)
    k = round_half_away(mod.fraction * len(elig))
    if mod.fraction > 0 and len(elig) == 0:
        log.warning("%s %s=%s: no eligible negative rows, nothing changed", mod.kind, mod.attr, mod.value)
    return elig[make_rng(seed).permutation(len(elig))[:k]]


def flip_negative_labels(dataset: Dataset, mod: Modification, seed: int | None = None) -> Dataset:
    if mod.kind != "flip":
        raise SchemaError("flip_negative_labels needs a flip modification")
    chosen = _selected(dataset, mod, mod.seed if seed is None else seed)
    label = dataset.label.copy()
    label[chosen] = 1
    return dataset.with_label(label)


def drop_negative_rows(dataset: Dataset, mod: Modification, seed: int | None = None) -> Dataset:
    if mod.kind != "drop":
        raise SchemaError("drop_negative_rows needs a drop modification")
    chosen = _selected(dataset, mod, mod.seed if seed is None else seed)
    keep = np.ones(len(dataset), dtype=bool)
    keep[chosen] = False
    return dataset.take(np.flatnonzero(keep))


def apply_modification(dataset: Dataset, mod: Modification, seed: int | None = None) -> Dataset:
    fn = flip_negative_labels if mod.kind == "flip" else drop_negative_rows
    return fn(dataset, mod, seed)


def modify_split(split: SplitSet, mod: Modification, client: str = "") -> tuple[SplitSet, list[dict]]:
    effects = []
    for s in mod.splits:
        before = split.part(s)
        n_elig = len(eligible_rows(before, mod))
        after = apply_modification(before, mod, derive_seed(mod.seed, client, s))
        affected = round_half_away(mod.fraction * n_elig)
        effects.append({"client": client, "split": s, "eligible": n_elig, "affected": affected})
        split = split.replace_part(s, after)
    return split, effects


def apply_modifications(fed: FederatedDataset, mods: Sequence[Modification]) -> FederatedDataset:
    """Apply ``mods`` in order; a modification without ``client`` hits every client.

    Each applied modification (with per-split eligible/affected counts) is
    appended to the generation record.
    """
    clients = dict(fed.clients)
    record = copy.deepcopy(fed.metadata)
    for mod in mods:
        if mod.client is not None and mod.client not in clients:
            raise SchemaError(f"modification targets unknown client {mod.client!r}")
        targets = [mod.client] if mod.client is not None else list(clients)
        effects = []
        for cid in targets:
            clients[cid], eff = modify_split(clients[cid], mod, cid)
            effects += eff
        record.modifications.append({**mod.to_dict(), "effects": effects})
    return FederatedDataset(clients, record)


@dataclass
class ExacerbationResult:
    split: SplitSet
    fraction: float | None
    success: bool
    label: object
    reports: list[FairnessReport] = field(default_factory=list)
    trials: list[dict] = field(default_factory=list)

    @property
    def modification_fraction(self) -> float:
        return 0.0 if self.fraction is None else self.fraction


def evaluate_bias(
    split: SplitSet,
    trainers: Sequence[Callable],
    attrs: Sequence,
    threshold: float = 0.09,
    level: str = "attribute",
):
    """Train every model on ``split.train``, report DD on ``split.test``, apply the bias rule."""
    reports = []
    for train in trainers:
        model = train(split)
        preds = predict(model, split.test)[1]
        reports.append(fairness_table(
            split.test, attrs, "DD", "value", preds=preds,
            model_id=getattr(train, "__name__", None),
        ))
    return bias_label(reports, threshold, level), reports


def _strength(reports: list[FairnessReport], target, level: str) -> float:
    if level == "attribute":
        return min(r.attributes[target].value for r in reports)
    attr, value = target
    return min(abs(r.attributes[attr].one_vs_rest.get(value, 0.0)) for r in reports)


def exacerbate_to_threshold(
    split: SplitSet,
    drop_attr: str,
    drop_value: int,
    target,
    trainers: Sequence[Callable],
    attrs: Sequence,
    threshold: float = 0.09,
    step: float = 0.1,
    max_fraction: float = 0.9,
    level: str = "attribute",
    splits: Sequence[str] = SPLITS,
    seed: int = 0,
    client: str = "",
) -> ExacerbationResult:
    """Smallest drop fraction on the grid 0, step, 2*step, ... at which the bias rule names ``target``.

    Each trial starts from the unmodified ``split``, drops negatives of
    ``drop_attr == drop_value`` from ``splits``, retrains every trainer and
    evaluates on the test split. On failure the trial with the strongest
    target disparity is returned with ``success=False``.
    """
    if threshold <= 0 or not 0 < step <= max_fraction <= 1:
        raise SchemaError("need threshold > 0 and 0 < step <= max_fraction <= 1")
    if isinstance(target, list):
        target = tuple(target)
    trials, best = [], None
    n_steps = int(round(max_fraction / step + 1e-9))
    for i in range(n_steps + 1):
        fraction = round(i * step, 10)
        mod = Modification("drop", drop_attr, drop_value, fraction, splits=splits, seed=seed, client=client or None)
        candidate, _ = modify_split(split, mod, client)
        label, reports = evaluate_bias(candidate, trainers, attrs, threshold, level)
        strength = _strength(reports, target, level)
        trials.append({"fraction": fraction, "label": label, "strength": strength})
        if label == target:
            return ExacerbationResult(candidate, fraction, True, label, reports, trials)
        if best is None or strength > best[0]:
            best = (strength, candidate, fraction, label, reports)
    _, candidate, fraction, label, reports = best
    return ExacerbationResult(candidate, fraction, False, label, reports, trials)
