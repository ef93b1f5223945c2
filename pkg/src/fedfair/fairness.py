"""Group fairness metrics: demographic disparity (DD) and equalized odds difference (EOD).

Rates are exact empirical frequencies. Groups without rows (or without the
required label class, for EOD) are flagged and left out of every maximum
instead of being treated as rate 0.

DD is the largest pairwise gap between group positive rates. Per-value
one-vs-rest gaps ``rate(z) - rate(Z != z)`` are reported alongside because
value-level plots and the value-level bias rule work per group value.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import MetricUndefined, SchemaError
from .tabular import Dataset, attribute_codes

log = logging.getLogger(__name__)

METRICS = ("DD", "EOD")
LEVELS = ("attribute", "value", "attribute_value")


@dataclass(frozen=True)
class GroupRates:
    attr: str
    values: tuple[int, ...]
    counts: tuple[int, ...]
    positive_rate: tuple[float, ...]
    tpr: tuple[float, ...] | None = None
    fpr: tuple[float, ...] | None = None

    @property
    def undefined(self) -> tuple[int, ...]:
        return tuple(v for v, c in zip(self.values, self.counts) if c == 0)

    def rate(self, value: int) -> float:
        return self.positive_rate[self.values.index(value)]


def _ratio(num: int, den: int) -> float:
    return num / den if den else math.nan


def _as_binary(a, n: int, what: str) -> np.ndarray:
    a = np.asarray(a).astype(np.int64).ravel()
    if len(a) != n:
        raise SchemaError(f"{what} has length {len(a)}, dataset has {n} rows")
    return a


def group_rates(preds, dataset: Dataset, attr, labels=None) -> GroupRates:
    codes, values, name = attribute_codes(dataset, attr)
    preds = _as_binary(preds, len(dataset), "preds")
    counts, rates, tpr, fpr = [], [], [], []
    if labels is not None:
        labels = _as_binary(labels, len(dataset), "labels")
    for v in values:
        m = codes == v
        counts.append(int(m.sum()))
        rates.append(_ratio(int(preds[m].sum()), counts[-1]))
        if labels is not None:
            pos, neg = m & (labels == 1), m & (labels == 0)
            tpr.append(_ratio(int(preds[pos].sum()), int(pos.sum())))
            fpr.append(_ratio(int(preds[neg].sum()), int(neg.sum())))
    return GroupRates(
        name, tuple(values), tuple(counts), tuple(rates),
        tuple(tpr) if labels is not None else None,
        tuple(fpr) if labels is not None else None,
    )


def demographic_parity_rates(preds, dataset: Dataset, attr) -> GroupRates:
    """P(pred = 1 | Z = z) for every allowed value z; empty groups get NaN."""
    return group_rates(preds, dataset, attr)


@dataclass(frozen=True)
class DDResult:
    dd: float
    pair: tuple[int, int]
    one_vs_rest: dict[int, float]
    pairwise: dict[tuple[int, int], float]
    rates: GroupRates


def demographic_disparity(preds, dataset: Dataset, attr) -> DDResult:
    """Maximum pairwise gap in positive-prediction rate between non-empty groups.

    Ties keep the pair with the lowest codes. Raises :class:`MetricUndefined`
    when fewer than two groups have rows.
    """
    rates = group_rates(preds, dataset, attr)
    codes, _, _ = attribute_codes(dataset, attr)
    preds = np.asarray(preds).astype(np.int64).ravel()
    live = [(v, r) for v, r, c in zip(rates.values, rates.positive_rate, rates.counts) if c > 0]
    if len(live) < 2:
        raise MetricUndefined(f"DD undefined for {rates.attr!r}: fewer than two non-empty groups")
    if rates.undefined:
        log.warning("DD(%s): empty groups %s excluded", rates.attr, list(rates.undefined))
    # exact rationals pick the argmax so float rounding cannot break ties
    exact = {v: Fraction(int(preds[codes == v].sum()), c) for v, c in zip(rates.values, rates.counts) if c > 0}
    best, pair, pairwise = Fraction(-1), (live[0][0], live[1][0]), {}
    for i in range(len(live)):
        for j in range(i + 1, len(live)):
            a, b = live[i][0], live[j][0]
            pairwise[(a, b)] = abs(live[i][1] - live[j][1])
            gap = abs(exact[a] - exact[b])
            if gap > best:
                best, pair = gap, (a, b)
    best = pairwise[pair]
    total, n = int(preds.sum()), len(preds)
    ovr = {}
    for v, c in zip(rates.values, rates.counts):
        if c == 0 or c == n:
            ovr[v] = math.nan
            continue
        in_pos = int(preds[codes == v].sum())
        ovr[v] = in_pos / c - (total - in_pos) / (n - c)
    return DDResult(best, pair, ovr, pairwise, rates)


@dataclass(frozen=True)
class EODResult:
    eod: float
    argmax: tuple[int, int]  # (label y, group value z)
    cells: dict[tuple[int, int], float]
    undefined: tuple[tuple[int, int], ...]


def equalized_odds_difference(preds, labels, dataset: Dataset, attr) -> EODResult:
    """max over y in {0,1} and groups z of |P(pred=1|Y=y,Z=z) - P(pred=1|Y=y,Z!=z)|.

    Cells whose group or complement lacks label class y are undefined and
    skipped. Ties keep the lowest z, then the lowest y.
    """
    codes, values, name = attribute_codes(dataset, attr)
    preds = _as_binary(preds, len(dataset), "preds")
    labels = _as_binary(labels, len(dataset), "labels")
    nonempty = [v for v in values if np.any(codes == v)]
    if len(nonempty) < 2:
        raise MetricUndefined(f"EOD undefined for {name!r}: fewer than two non-empty groups")
    cells, undefined, exact = {}, [], {}
    for v in values:
        in_g = codes == v
        for y in (0, 1):
            a, b = in_g & (labels == y), ~in_g & (labels == y)
            na, nb = int(a.sum()), int(b.sum())
            if na == 0 or nb == 0:
                cells[(y, v)] = math.nan
                undefined.append((y, v))
            else:
                pa, pb = int(preds[a].sum()), int(preds[b].sum())
                cells[(y, v)] = pa / na - pb / nb
                exact[(y, v)] = abs(Fraction(pa, na) - Fraction(pb, nb))
    if not exact:
        raise MetricUndefined(f"EOD undefined for {name!r}: no group has both label classes")
    if undefined:
        log.warning("EOD(%s): undefined cells %s excluded", name, undefined)
    top = max(exact.values())
    z, y = min((v, y) for (y, v), g in exact.items() if g == top)
    return EODResult(abs(cells[(y, z)]), (y, z), cells, tuple(undefined))


@dataclass
class AttributeFairness:
    """Metric summary for one (possibly composite) attribute."""

    value: float
    argmax: tuple
    detail: dict = field(default_factory=dict)
    one_vs_rest: dict = field(default_factory=dict)


@dataclass
class FairnessReport:
    metric: str
    level: str
    source: str
    model_id: str | None
    attributes: dict[str, AttributeFairness]

    def max_attribute(self) -> tuple[str, float]:
        """Attribute with the largest metric value (ties: lowest name)."""
        name, a = min(self.attributes.items(), key=lambda kv: (-kv[1].value, kv[0]))
        return name, a.value

    def max_value(self) -> tuple[str, int, float]:
        """(attribute, group value, |gap|) with the largest one-vs-rest gap.

        For DD the per-value one-vs-rest gap is used; for EOD the argmax cell.
        Ties: lowest value code, then lowest attribute name.
        """
        cands = []
        for name, a in self.attributes.items():
            if self.metric == "DD":
                for v, g in a.one_vs_rest.items():
                    if not math.isnan(g):
                        cands.append((-abs(g), v, name))
            else:
                cands.append((-a.value, a.argmax[1], name))
        if not cands:
            raise MetricUndefined("no defined one-vs-rest gap in report")
        g, v, name = min(cands)
        return name, v, -g

    def to_dict(self) -> dict:
        out = {
            "metric": self.metric,
            "level": self.level,
            "source": self.source,
            "model_id": self.model_id,
            "attributes": {},
        }
        for name, a in self.attributes.items():
            entry: dict = {"max": a.value}
            if self.level in ("value", "attribute_value"):
                entry["argmax"] = list(a.argmax)
            if self.level == "attribute_value":
                entry["detail"] = {k: _nan_to_none(v) for k, v in a.detail.items()}
                entry["one_vs_rest"] = {str(k): _nan_to_none(v) for k, v in a.one_vs_rest.items()}
            out["attributes"][name] = entry
        return out

    def to_rows(self) -> list[dict]:
        """Flat rows for CSV output, one per attribute (or per detail cell)."""
        rows = []
        for name, a in self.attributes.items():
            base = {"metric": self.metric, "source": self.source, "model_id": self.model_id or "", "attribute": name}
            if self.level == "attribute":
                rows.append({**base, "key": "max", "value": a.value})
            elif self.level == "value":
                rows.append({**base, "key": "max", "value": a.value, "argmax": _argmax_str(a.argmax)})
            else:
                rows.append({**base, "key": "max", "value": a.value, "argmax": _argmax_str(a.argmax)})
                for k, v in a.detail.items():
                    rows.append({**base, "key": k, "value": v, "argmax": ""})
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["metric", "source", "model_id", "attribute", "key", "value", "argmax"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", restval="")
        w.writeheader()
        for r in self.to_rows():
            w.writerow({**r, "value": _fmt_metric(r["value"])})
        return buf.getvalue()


def _argmax_str(t) -> str:
    return "-".join(str(x) for x in t)


def _fmt_metric(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _nan_to_none(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def fairness_table(
    dataset: Dataset,
    attrs: Sequence,
    metric: str = "DD",
    level: str = "attribute",
    preds=None,
    model_id: str | None = None,
) -> FairnessReport:
    """Per-attribute fairness summary on true labels (``preds=None``) or predictions.

    An entry of ``attrs`` may be a tuple/list of attribute names (or a
    ``"A&B"`` string) to evaluate their intersection as one composite attribute.
    """
    if metric not in METRICS:
        raise SchemaError(f"unknown metric {metric!r}")
    if level not in LEVELS:
        raise SchemaError(f"unknown fairness level {level!r}")
    if not attrs:
        raise SchemaError("attrs must be non-empty")
    source = "true_labels" if preds is None else "model"
    y_hat = dataset.label if preds is None else preds
    out = {}
    for attr in attrs:
        attr = tuple(attr) if isinstance(attr, (list, tuple)) else attr
        if metric == "DD":
            r = demographic_disparity(y_hat, dataset, attr)
            detail = {f"{a}-{b}": g for (a, b), g in r.pairwise.items()}
            detail.update({f"rate:{v}": p for v, p in zip(r.rates.values, r.rates.positive_rate)})
            entry = AttributeFairness(r.dd, r.pair, detail, dict(r.one_vs_rest))
            name = r.rates.attr
        else:
            r = equalized_odds_difference(y_hat, dataset.label, dataset, attr)
            detail = {f"y={y},z={z}": g for (y, z), g in r.cells.items()}
            entry = AttributeFairness(r.eod, r.argmax, detail, {})
            name = attr if isinstance(attr, str) else "&".join(attr)
        out[name] = entry
    return FairnessReport(metric, level, source, model_id, out)


def bias_label(reports: Sequence[FairnessReport], threshold: float = 0.09, level: str = "attribute"):
    """Benchmark bias rule over several models' reports for one client.

    Attribute level: every model's largest-metric attribute must be the same
    and the smallest of those maxima must exceed ``threshold``; returns the
    attribute name. Value level: same rule over (attribute, value) identities
    from :meth:`FairnessReport.max_value`; returns ``(attribute, value)``.
    Returns ``None`` when the rule is not met.
    """
    if len(reports) < 2:
        raise SchemaError("bias_label needs reports from at least two models")
    keys = {tuple(r.attributes) for r in reports}
    if len(keys) != 1:
        raise SchemaError("reports cover different attributes")
    if level == "attribute":
        picks = [r.max_attribute() for r in reports]
        ids = {p[0] for p in picks}
        mags = [p[1] for p in picks]
    elif level == "value":
        picks = [r.max_value() for r in reports]
        ids = {(p[0], p[1]) for p in picks}
        mags = [p[2] for p in picks]
    else:
        raise SchemaError(f"bias_label level must be attribute or value, got {level!r}")
    if len(ids) == 1 and min(mags) > threshold:
        return ids.pop()
    return None
