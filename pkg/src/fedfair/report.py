"""Evaluation artifacts: client statistics, local-vs-global comparisons, SVG plots, datasheets.

Rendering never computes metrics: every number drawn or printed comes from a
:class:`~fedfair.fairness.FairnessReport`, an accuracy value or the
generation record handed in.
"""

from __future__ import annotations

import csv
import io
import json
import math
import string
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape, quoteattr

from .errors import MetricUndefined, SchemaError
from .fairness import FairnessReport, fairness_table
from .models import accuracy, predict
from .seeding import SEED_DERIVATION_VERSION
from .tabular import SPLITS, FederatedDataset, GenerationRecord


def _fairness_or_nan(ds, attr, preds=None) -> float:
    try:
        return fairness_table(ds, [attr], "DD", "attribute", preds=preds).attributes[
            attr if isinstance(attr, str) else "&".join(attr)
        ].value
    except MetricUndefined:
        return math.nan


def client_stats_columns(attrs: Sequence[str]) -> list[str]:
    return (
        ["client"]
        + [f"n_{s}" for s in SPLITS]
        + [f"true_dd_{a}" for a in attrs]
        + ["local_accuracy"]
        + [f"local_dd_{a}" for a in attrs]
    )


def client_stats(fed: FederatedDataset, local_models: Mapping | None = None, attrs: Sequence[str] | None = None) -> list[dict]:
    """One row per client: split sizes, true-label DD, local-model accuracy and DD.

    True-label DD uses all of the client's rows; local-model numbers use its
    test split. Columns are :func:`client_stats_columns`.
    """
    if not fed.clients:
        return []
    attrs = list(attrs or next(iter(fed.clients.values())).train.sensitive_attrs)
    rows = []
    for cid, split in fed.clients.items():
        row = {"client": cid, **{f"n_{s}": n for s, n in split.sizes().items()}}
        everything = split.combined()
        for a in attrs:
            row[f"true_dd_{a}"] = _fairness_or_nan(everything, a)
        model = (local_models or {}).get(cid)
        if model is not None and len(split.test):
            preds = predict(model, split.test)[1]
            row["local_accuracy"] = accuracy(preds, split.test.label)
            for a in attrs:
                row[f"local_dd_{a}"] = _fairness_or_nan(split.test, a, preds)
        else:
            row["local_accuracy"] = math.nan
            for a in attrs:
                row[f"local_dd_{a}"] = math.nan
        rows.append(row)
    return rows


def _cell(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return "" if v is None else str(v)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


# ---------------------------------------------------------------- comparison


@dataclass
class ClientComparison:
    client: str
    local: dict[str, float]
    global_: dict[str, float]
    delta: dict[str, float]
    local_accuracy: float
    global_accuracy: float
    biased_toward: object = None
    argmax_before: dict[str, int | None] = field(default_factory=dict)
    argmax_after: dict[str, int | None] = field(default_factory=dict)


@dataclass
class ComparisonReport:
    attrs: list[str]
    clients: list[ClientComparison]

    def scatter_points(self) -> list[dict]:
        """x = global-model DD, y = local-model DD; below the diagonal means FL raised DD."""
        return [
            {"client": c.client, "attr": a, "x": c.global_[a], "y": c.local[a], "biased_toward": c.biased_toward}
            for c in self.clients
            for a in self.attrs
        ]

    def value_shifts(self) -> list[dict]:
        return [
            {"client": c.client, "attr": a, "before": c.argmax_before.get(a), "after": c.argmax_after.get(a)}
            for c in self.clients
            for a in self.attrs
        ]

    def to_dict(self) -> dict:
        return {
            "attrs": list(self.attrs),
            "clients": [
                {
                    "client": c.client,
                    "biased_toward": _label_str(c.biased_toward),
                    "local_accuracy": _none(c.local_accuracy),
                    "global_accuracy": _none(c.global_accuracy),
                    "local": {a: _none(v) for a, v in c.local.items()},
                    "global": {a: _none(v) for a, v in c.global_.items()},
                    "delta": {a: _none(v) for a, v in c.delta.items()},
                    "argmax_before": c.argmax_before,
                    "argmax_after": c.argmax_after,
                }
                for c in self.clients
            ],
        }

    def to_csv(self) -> str:
        cols = ["client", "attr", "local_dd", "global_dd", "delta", "local_accuracy",
                "global_accuracy", "biased_toward", "argmax_before", "argmax_after"]
        rows = [
            {
                "client": c.client, "attr": a, "local_dd": c.local[a], "global_dd": c.global_[a],
                "delta": c.delta[a], "local_accuracy": c.local_accuracy,
                "global_accuracy": c.global_accuracy, "biased_toward": _label_str(c.biased_toward),
                "argmax_before": c.argmax_before.get(a), "argmax_after": c.argmax_after.get(a),
            }
            for c in self.clients
            for a in self.attrs
        ]
        return rows_to_csv(rows, cols)


def _none(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def _label_str(label) -> str:
    if label is None:
        return "none"
    if isinstance(label, tuple):
        return f"{label[0]}={label[1]}"
    return str(label)


def _argmax_value(report: FairnessReport, attr: str):
    a = report.attributes[attr]
    if report.metric == "EOD":
        return a.argmax[1]
    live = [(-abs(g), v) for v, g in a.one_vs_rest.items() if not math.isnan(g)]
    return min(live)[1] if live else None


def compare(
    local_reports: Mapping[str, FairnessReport],
    global_reports: Mapping[str, FairnessReport],
    accuracies: Mapping[str, tuple[float, float]],
    biased_toward: Mapping | None = None,
) -> ComparisonReport:
    """Pair each client's local-model and global-model reports.

    ``accuracies[cid]`` is ``(local, global)``. ``delta = global - local``;
    the value shift per attribute is the one-vs-rest argmax value before
    (local) and after (global).
    """
    if set(local_reports) != set(global_reports):
        raise SchemaError("local and global reports cover different clients")
    attrs = list(next(iter(local_reports.values())).attributes) if local_reports else []
    out = []
    for cid in local_reports:
        lr, gr = local_reports[cid], global_reports[cid]
        if list(lr.attributes) != attrs or list(gr.attributes) != attrs:
            raise SchemaError(f"client {cid!r}: reports cover different attributes")
        local = {a: lr.attributes[a].value for a in attrs}
        glob = {a: gr.attributes[a].value for a in attrs}
        acc_l, acc_g = accuracies.get(cid, (math.nan, math.nan))
        out.append(ClientComparison(
            cid, local, glob, {a: glob[a] - local[a] for a in attrs}, acc_l, acc_g,
            (biased_toward or {}).get(cid),
            {a: _argmax_value(lr, a) for a in attrs},
            {a: _argmax_value(gr, a) for a in attrs},
        ))
    return ComparisonReport(attrs, out)


# ---------------------------------------------------------------- SVG

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
NEUTRAL = "#7f7f7f"
W, H, M = 480, 400, 60


def _n(x: float) -> str:
    return f"{x:.2f}"


def _svg(body: list[str], width=W, height=H, title="") -> str:
    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        head.append(f'<text x="{width / 2:.2f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>')
    return "\n".join(head + body + ["</svg>", ""])


def _axes(x_label, y_label, top, ticks_x=(), ticks_y=(), width=W, height=H) -> list[str]:
    x0, y0, x1, y1 = M, height - M, width - M // 2, M // 2 + 10
    out = [
        f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2:.2f}" y="{height - 15}" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="15" y="{(y0 + y1) / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {(y0 + y1) / 2:.2f})">{escape(y_label)}</text>',
    ]
    for pos, label in ticks_x:
        out.append(f'<text x="{_n(pos)}" y="{y0 + 15}" text-anchor="middle">{escape(label)}</text>')
    for pos, label in ticks_y:
        out.append(f'<text x="{x0 - 5}" y="{_n(pos + 4)}" text-anchor="end">{escape(label)}</text>')
    return out


def _colors(keys) -> dict:
    out, i = {}, 0
    for k in keys:
        if k is None or k == "none":
            out[k] = NEUTRAL
        elif k not in out:
            out[k] = PALETTE[i % len(PALETTE)]
            i += 1
    return out


def render_scatter(report: ComparisonReport, title: str = "") -> str:
    pts = [p for p in report.scatter_points() if not (math.isnan(p["x"]) or math.isnan(p["y"]))]
    top = max([max(p["x"], p["y"]) for p in pts], default=0.0) * 1.1 or 1.0
    x0, y0, x1, y1 = M, H - M, W - M // 2, M // 2 + 10
    sx = lambda v: x0 + (x1 - x0) * v / top  # noqa: E731
    sy = lambda v: y0 - (y0 - y1) * v / top  # noqa: E731
    ticks = [(i * top / 4) for i in range(5)]
    body = _axes(
        "DD global model", "DD local model", top,
        [(sx(t), f"{t:.2f}") for t in ticks], [(sy(t), f"{t:.2f}") for t in ticks],
    )
    body.append(f'<line class="diagonal" x1="{_n(sx(0))}" y1="{_n(sy(0))}" x2="{_n(sx(top))}" '
                f'y2="{_n(sy(top))}" stroke="{NEUTRAL}" stroke-dasharray="4 3"/>')
    colors = _colors(report.attrs)
    for p in pts:
        body.append(
            f'<circle class="point" data-client={quoteattr(p["client"])} data-attr={quoteattr(p["attr"])} '
            f'cx="{_n(sx(p["x"]))}" cy="{_n(sy(p["y"]))}" r="4" fill="{colors[p["attr"]]}" fill-opacity="0.8"/>'
        )
    body += _legend([(a, colors[a]) for a in report.attrs])
    return _svg(body, title=title)


def _legend(items, x=W - 130, y=40) -> list[str]:
    out = []
    for i, (label, color) in enumerate(items):
        out.append(f'<rect x="{x}" y="{y + 16 * i}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{x + 15}" y="{y + 16 * i + 9}">{escape(str(label))}</text>')
    return out


def render_bars(report: ComparisonReport, title: str = "") -> str:
    """Per-client grouped bars of ``delta = global - local`` for every attribute."""
    deltas = [c.delta[a] for c in report.clients for a in report.attrs if not math.isnan(c.delta[a])]
    top = max([abs(d) for d in deltas], default=0.0) * 1.1 or 1.0
    n_groups = max(len(report.clients), 1)
    width = max(W, M + 30 * n_groups * max(len(report.attrs), 1) + 40)
    x0, y0, x1, y1 = M, H - M, width - M // 2, M // 2 + 10
    mid = (y0 + y1) / 2
    sy = lambda v: mid - (mid - y1) * v / top  # noqa: E731
    group_w = (x1 - x0) / n_groups
    bar_w = group_w * 0.8 / max(len(report.attrs), 1)
    ticks = [(sy(t), f"{t:+.2f}") for t in (-top, 0.0, top)]
    body = _axes("client", "DD global - DD local", top, (), ticks, width=width)
    body.append(f'<line class="zero" x1="{x0}" y1="{_n(mid)}" x2="{x1}" y2="{_n(mid)}" stroke="{NEUTRAL}"/>')
    colors = _colors(report.attrs)
    for i, c in enumerate(report.clients):
        gx = x0 + i * group_w + group_w * 0.1
        for j, a in enumerate(report.attrs):
            d = c.delta[a]
            if math.isnan(d):
                continue
            top_y, bot_y = sorted((sy(d), mid))
            body.append(
                f'<rect class="bar" data-client={quoteattr(c.client)} data-attr={quoteattr(a)} '
                f'x="{_n(gx + j * bar_w)}" y="{_n(top_y)}" width="{_n(bar_w)}" '
                f'height="{_n(bot_y - top_y)}" fill="{colors[a]}"/>'
            )
        body.append(f'<text x="{_n(gx + group_w * 0.4)}" y="{y0 + 15}" text-anchor="middle">{escape(c.client)}</text>')
    body += _legend([(a, colors[a]) for a in report.attrs], x=width - 130)
    return _svg(body, width=width, title=title)


def render_value_shift(report: ComparisonReport, title: str = "") -> str:
    """Slope chart: argmax group value under the local model (left) and global model (right)."""
    shifts = [s for s in report.value_shifts() if s["before"] is not None and s["after"] is not None]
    values = sorted({s["before"] for s in shifts} | {s["after"] for s in shifts})
    x0, y0, x1, y1 = M, H - M, W - M // 2, M // 2 + 10
    step = (y0 - y1) / max(len(values), 1)
    ypos = {v: y0 - step * (i + 0.5) for i, v in enumerate(values)}
    left, right = x0 + 40, x1 - 40
    body = _axes("local model -> global model", "group value with max DD", 0,
                 [(left, "local"), (right, "global")], [(ypos[v], str(v)) for v in values])
    colors = _colors(report.attrs)
    for s in shifts:
        body.append(
            f'<line class="shift" data-client={quoteattr(s["client"])} data-attr={quoteattr(s["attr"])} '
            f'x1="{left}" y1="{_n(ypos[s["before"]])}" x2="{right}" y2="{_n(ypos[s["after"]])}" '
            f'stroke="{colors[s["attr"]]}" stroke-opacity="0.6"/>'
        )
    for v in values:
        n_before = sum(1 for s in shifts if s["before"] == v)
        n_after = sum(1 for s in shifts if s["after"] == v)
        for x, n in ((left, n_before), (right, n_after)):
            if n:
                body.append(f'<circle class="count" cx="{x}" cy="{_n(ypos[v])}" r="{_n(3 + 2 * math.sqrt(n))}" fill="{NEUTRAL}"/>')
    body += _legend([(a, colors[a]) for a in report.attrs])
    return _svg(body, title=title)


RENDERERS = {"scatter": render_scatter, "bars": render_bars, "value_shift": render_value_shift}


def emit_svg(report: ComparisonReport, kind: str, path, title: str = "") -> None:
    if kind not in RENDERERS:
        raise SchemaError(f"unknown plot kind {kind!r}")
    Path(path).write_text(RENDERERS[kind](report, title), encoding="utf-8")


def render_bias_map(
    reports: Mapping[str, FairnessReport],
    attrs: Sequence[str],
    labels: Mapping | None = None,
    title: str = "",
) -> str:
    """One dot per client: DD for ``attrs[0]`` (x) against ``attrs[1]`` (y), colored by bias label.

    With a single attribute, clients are laid out along x and y is that attribute's DD.
    """
    labels = labels or {}
    cids = list(reports)
    two = len(attrs) >= 2
    xs = [reports[c].attributes[attrs[0]].value for c in cids]
    ys = [reports[c].attributes[attrs[1]].value for c in cids] if two else xs
    top = max([v for v in xs + ys if not math.isnan(v)], default=0.0) * 1.1 or 1.0
    x0, y0, x1, y1 = M, H - M, W - M // 2, M // 2 + 10
    sy = lambda v: y0 - (y0 - y1) * v / top  # noqa: E731
    if two:
        sx = lambda i, v: x0 + (x1 - x0) * v / top  # noqa: E731
    else:
        sx = lambda i, v: x0 + (x1 - x0) * (i + 0.5) / max(len(cids), 1)  # noqa: E731
    ticks = [(i * top / 4) for i in range(5)]
    body = _axes(
        f"DD {attrs[0]}" if two else "client",
        f"DD {attrs[1]}" if two else f"DD {attrs[0]}",
        top,
        [(sx(0, t), f"{t:.2f}") for t in ticks] if two else [],
        [(sy(t), f"{t:.2f}") for t in ticks],
    )
    keys = [_label_str(labels.get(c)) for c in cids]
    colors = _colors(sorted(set(keys) - {"none"}) + ["none"])
    for i, c in enumerate(cids):
        if math.isnan(xs[i]) or math.isnan(ys[i]):
            continue
        body.append(
            f'<circle class="point" data-client={quoteattr(c)} cx="{_n(sx(i, xs[i]))}" '
            f'cy="{_n(sy(ys[i]))}" r="4" fill="{colors[keys[i]]}"/>'
        )
    body += _legend([(k, colors[k]) for k in sorted(set(keys))])
    return _svg(body, title=title)


# ---------------------------------------------------------------- datasheet

RENDER_ONLY_KEYS = ("fairness_summary", "seed_derivation")


def _template() -> str:
    return resources.files("fedfair").joinpath("templates/datasheet.md").read_text(encoding="utf-8")


def _render_value(key: str, value) -> str:
    if value is None or value == [] or value == {}:
        return "_not set_"
    if key == "modifications":
        head = "| client | kind | fraction | attribute | value | secondary | splits | seed |\n|---|---|---|---|---|---|---|---|"
        rows = [
            f"| {m.get('client') or 'all'} | {m['kind']} | {m['fraction']} | {m['attr']} | {m['value']} | "
            f"{'-' if not m.get('secondary') else '='.join(map(str, m['secondary']))} | "
            f"{', '.join(m.get('splits', []))} | {m.get('seed', 0)} |"
            for m in value
        ]
        return "\n".join([head] + rows)
    if key == "seeds":
        return "\n".join(["| stage | seed |", "|---|---|"] + [f"| {k} | {v} |" for k, v in value.items()])
    if isinstance(value, list) and all(isinstance(v, (str, int, float)) for v in value):
        return ", ".join(map(str, value))
    if isinstance(value, (dict, list)):
        return "```json\n" + json.dumps(value, indent=2, ensure_ascii=False) + "\n```"
    return str(value)


def _fairness_summary(reports: Mapping[str, FairnessReport] | None) -> str:
    if not reports:
        return "_no fairness reports supplied_"
    first = next(iter(reports.values()))
    attrs = list(first.attributes)
    lines = [
        f"Metric: {first.metric} on {first.source.replace('_', ' ')}.",
        "",
        "| client | " + " | ".join(f"{a} max | {a} argmax" for a in attrs) + " |",
        "|---|" + "---|---|" * len(attrs),
    ]
    for cid, r in reports.items():
        cells = []
        for a in attrs:
            e = r.attributes[a]
            cells.append(f"{e.value:.4f} | {'-'.join(map(str, e.argmax))}")
        lines.append(f"| {cid} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def generate_datasheet(record: GenerationRecord, reports: Mapping[str, FairnessReport] | None = None, template: str | None = None) -> str:
    """Fill the datasheet template with every generation-record field.

    Raises :class:`SchemaError` if the template names an unknown key or
    omits a record field, so template and record cannot drift apart.
    """
    template = _template() if template is None else template
    keys = {f.name for f in fields(GenerationRecord)}
    used = {name for _, name, _, _ in string.Formatter().parse(template) if name}
    unknown = used - keys - set(RENDER_ONLY_KEYS)
    if unknown:
        raise SchemaError(f"datasheet template uses unknown keys {sorted(unknown)}")
    missing = keys - used
    if missing:
        raise SchemaError(f"datasheet template omits record fields {sorted(missing)}")
    values = {k: _render_value(k, v) for k, v in record.to_dict().items()}
    values["fairness_summary"] = _fairness_summary(reports)
    values["seed_derivation"] = (
        f"v{SEED_DERIVATION_VERSION}: sub-seed = first 8 bytes of "
        f"sha256(\"v{SEED_DERIVATION_VERSION}:<master>:<stage path>\"), top bit cleared"
    )
    return template.format(**values)
