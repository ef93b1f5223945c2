"""Loading, remapping, writing and synthesizing tabular federations.

CSV layout: comma separated, UTF-8, ``\\n`` line endings, a header row, one
optional leading ``row_id`` column, the schema columns in schema order and the
label column last. Integral values are written without a decimal point, other
floats with ``repr`` so that write -> load -> write is byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .errors import IngestError, SchemaError
from .partition import SplitFractions, split_train_val_test
from .seeding import derive_seed, largest_remainder, make_rng
from .tabular import (
    SPLITS,
    ColumnSchema,
    Dataset,
    FederatedDataset,
    GenerationRecord,
    SplitSet,
    categorical,
    numeric,
)

ROW_ID = "row_id"
_MISSING = {"", "na", "nan", "null", "none"}

# FIPS code -> postal abbreviation for the 50 states, DC and Puerto Rico.
STATE_FIPS = {
    1: "AL", 2: "AK", 4: "AZ", 5: "AR", 6: "CA", 8: "CO", 9: "CT", 10: "DE",
    11: "DC", 12: "FL", 13: "GA", 15: "HI", 16: "ID", 17: "IL", 18: "IN",
    19: "IA", 20: "KS", 21: "KY", 22: "LA", 23: "ME", 24: "MD", 25: "MA",
    26: "MI", 27: "MN", 28: "MS", 29: "MO", 30: "MT", 31: "NE", 32: "NV",
    33: "NH", 34: "NJ", 35: "NM", 36: "NY", 37: "NC", 38: "ND", 39: "OH",
    40: "OK", 41: "OR", 42: "PA", 44: "RI", 45: "SC", 46: "SD", 47: "TN",
    48: "TX", 49: "UT", 50: "VT", 51: "VA", 53: "WA", 54: "WV", 55: "WI",
    56: "WY", 72: "PR",
}

SEX_LABELS = {1: "Male", 2: "Female"}
RACE_BINARY_LABELS = {1: "White", 2: "Others"}
RACE_FIVE_LABELS = {1: "White", 2: "Black", 3: "Asian", 4: "Alaska Native/American Indian", 5: "Others"}


@dataclass(frozen=True)
class TaskSpec:
    """Column layout and label rule of an ACS-derived prediction task.

    ``label_threshold`` set: label = ``label_column > threshold``;
    ``label_equals`` set: label = ``label_column == value``; neither: the
    column already holds 0/1.
    """

    name: str
    schema: tuple[ColumnSchema, ...]
    sensitive_attrs: tuple[str, ...]
    label_column: str
    label_threshold: float | None = None
    label_equals: int | None = None
    key_column: str = "ST"


def _cat(name, lo, hi, extra=()):
    return categorical(name, list(range(lo, hi + 1)) + list(extra))


_STATE = categorical("ST", STATE_FIPS)

# OCCP and POBP carry hundreds of codes and are kept as numeric codes.
ACS_INCOME = TaskSpec(
    "ACSIncome",
    (
        numeric("AGEP"), _cat("COW", 1, 9), _cat("SCHL", 1, 24), _cat("MAR", 1, 5),
        numeric("OCCP"), numeric("POBP"), _cat("RELP", 0, 17), numeric("WKHP"),
        _cat("SEX", 1, 2), _cat("RAC1P", 1, 9), _STATE,
    ),
    ("SEX", "RAC1P"),
    "PINCP",
    label_threshold=50000,
)

ACS_EMPLOYMENT = TaskSpec(
    "ACSEmployment",
    (
        numeric("AGEP"), _cat("SCHL", 0, 24), _cat("MAR", 1, 5), _cat("RELP", 0, 17),
        _cat("DIS", 1, 2), _cat("ESP", 0, 8), _cat("CIT", 1, 5), _cat("MIG", 0, 3),
        _cat("MIL", 0, 4), categorical("ANC", [1, 2, 3, 4, 8]), _cat("NATIVITY", 1, 2),
        _cat("DEAR", 1, 2), _cat("DEYE", 1, 2), _cat("DREM", 0, 2),
        _cat("SEX", 1, 2), _cat("RAC1P", 1, 9), _STATE,
    ),
    ("SEX", "RAC1P"),
    "ESR",
    label_equals=1,
)

TASKS = {t.name: t for t in (ACS_INCOME, ACS_EMPLOYMENT)}


def _parse_cell(cell: str, col: ColumnSchema, row: int):
    if cell.strip().lower() in _MISSING:
        raise IngestError(f"row {row}, column {col.name!r}: missing value")
    try:
        value = float(cell)
    except ValueError:
        raise IngestError(f"row {row}, column {col.name!r}: cannot parse {cell!r}") from None
    if col.is_categorical:
        if not value.is_integer():
            raise IngestError(f"row {row}, column {col.name!r}: non-integer code {cell!r}")
        return int(value)
    if not math.isfinite(value):
        raise IngestError(f"row {row}, column {col.name!r}: non-finite value {cell!r}")
    return value


def load_csv(
    path: str | os.PathLike,
    schema: Sequence[ColumnSchema],
    sensitive_attrs: Sequence[str],
    label_column: str = "label",
    label_threshold: float | None = None,
    label_equals: int | None = None,
) -> Dataset:
    """Read a CSV into a :class:`Dataset`, preserving row order.

    Extra columns are ignored. A ``row_id`` column, when present, restores
    row identities. Raises :class:`IngestError` naming the row and column for
    missing columns, missing values and unparseable cells.
    """
    schema = tuple(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file, no header") from None
        pos = {name: i for i, name in enumerate(header)}
        for name in [c.name for c in schema] + [label_column]:
            if name not in pos:
                raise IngestError(f"{path}: missing column {name!r} (header: {header})")
        values: dict[str, list] = {c.name: [] for c in schema}
        labels: list[int] = []
        row_ids: list[int] | None = [] if ROW_ID in pos else None
        label_col = ColumnSchema(label_column, "numeric")
        for r, cells in enumerate(reader):
            if len(cells) != len(header):
                raise IngestError(f"row {r}: expected {len(header)} cells, got {len(cells)}")
            for c in schema:
                values[c.name].append(_parse_cell(cells[pos[c.name]], c, r))
            raw = _parse_cell(cells[pos[label_column]], label_col, r)
            if label_threshold is not None:
                labels.append(int(raw > label_threshold))
            elif label_equals is not None:
                labels.append(int(raw == label_equals))
            else:
                if raw not in (0.0, 1.0):
                    raise IngestError(f"row {r}, column {label_column!r}: label {raw} not binary")
                labels.append(int(raw))
            if row_ids is not None:
                row_ids.append(int(_parse_cell(cells[pos[ROW_ID]], ColumnSchema(ROW_ID, "categorical"), r)))
    # Derived labels are stored under a neutral name so the raw column is not mistaken for them.
    label_name = label_column if label_threshold is None and label_equals is None else "label"
    return Dataset(schema, values, labels, sensitive_attrs, row_ids, label_name)


def load_task_csv(path, task: TaskSpec | str, states: Sequence[str] | None = None) -> Dataset:
    """Load an ACS extract for ``task``; optionally keep only ``states`` (postal codes)."""
    task = TASKS[task] if isinstance(task, str) else task
    ds = load_csv(
        path, task.schema, task.sensitive_attrs, task.label_column,
        task.label_threshold, task.label_equals,
    )
    if states:
        inverse = {v: k for k, v in STATE_FIPS.items()}
        unknown = [s for s in states if s not in inverse]
        if unknown:
            raise SchemaError(f"unknown states {unknown}")
        codes = [inverse[s] for s in states]
        ds = ds.take(np.flatnonzero(np.isin(ds.columns[task.key_column], codes)))
    return ds


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if f.is_integer() and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def write_csv(dataset: Dataset, path: str | os.PathLike) -> None:
    names = dataset.column_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([ROW_ID] + names + [dataset.label_name])
        cols = [dataset.columns[n] for n in names]
        for i in range(len(dataset)):
            w.writerow(
                [str(int(dataset.row_ids[i]))]
                + [_fmt(c[i]) for c in cols]
                + [str(int(dataset.label[i]))]
            )


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dump_json(obj, path: str | os.PathLike) -> None:
    """UTF-8 JSON with insertion key order, 2-space indent and a trailing newline."""
    Path(path).write_text(
        json.dumps(obj, indent=2, ensure_ascii=False, default=_json_default) + "\n",
        encoding="utf-8",
    )


def write_federation(fed: FederatedDataset, directory: str | os.PathLike) -> None:
    """``<dir>/<client>/{train,validation,test}.csv`` plus ``<dir>/metadata.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    record = fed.metadata
    first = next(iter(fed.clients.values()), None)
    if first is not None:
        record.schema = [c.to_dict() for c in first.schema]
        record.sensitive_attrs = list(first.train.sensitive_attrs)
        record.label_name = first.train.label_name
    record.clients = list(fed.clients)
    if not record.library_version:
        record.library_version = __version__
    for cid, split in fed.clients.items():
        cdir = directory / cid
        cdir.mkdir(exist_ok=True)
        for s in SPLITS:
            write_csv(split.part(s), cdir / f"{s}.csv")
    dump_json(record.to_dict(), directory / "metadata.json")


def read_metadata(directory: str | os.PathLike) -> GenerationRecord:
    path = Path(directory) / "metadata.json"
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IngestError(f"{path}: no metadata.json") from None
    return GenerationRecord.from_dict(data)


def read_federation(directory: str | os.PathLike) -> FederatedDataset:
    directory = Path(directory)
    record = read_metadata(directory)
    schema = [ColumnSchema.from_dict(c) for c in record.schema]
    clients = {}
    for cid in record.clients:
        parts = {
            s: load_csv(directory / cid / f"{s}.csv", schema, record.sensitive_attrs, record.label_name)
            for s in SPLITS
        }
        clients[cid] = SplitSet(**parts)
    return FederatedDataset(clients, record)


@dataclass
class RemapConfig:
    """Per-column code remapping; ``defaults`` catches codes missing from the map."""

    columns: dict[str, dict[int, int]] = field(default_factory=dict)
    defaults: dict[str, int] = field(default_factory=dict)
    label: dict[int, int] | None = None

    def to_dict(self) -> dict:
        return {
            "columns": {c: {str(k): v for k, v in m.items()} for c, m in self.columns.items()},
            "defaults": dict(self.defaults),
            "label": None if self.label is None else {str(k): v for k, v in self.label.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RemapConfig":
        cols = {c: {int(k): int(v) for k, v in m.items()} for c, m in d.get("columns", {}).items()}
        label = d.get("label")
        return cls(
            cols,
            {c: int(v) for c, v in d.get("defaults", {}).items()},
            None if label is None else {int(k): int(v) for k, v in label.items()},
        )


RACE_BINARY = RemapConfig({"RAC1P": {1: 1}}, {"RAC1P": 2})
RACE_FIVE = RemapConfig({"RAC1P": {1: 1, 2: 2, 6: 3, 3: 4, 4: 4, 5: 4}}, {"RAC1P": 5})


def apply_remap(dataset: Dataset, remap: RemapConfig) -> Dataset:
    """Remap categorical codes; untouched columns and the row count are preserved."""
    schema = list(dataset.schema)
    cols = dict(dataset.columns)
    for name in set(remap.columns) | set(remap.defaults):
        col = dataset.column_schema(name)
        if not col.is_categorical:
            raise SchemaError(f"cannot remap numeric column {name!r}")
        mapping = remap.columns.get(name, {})
        default = remap.defaults.get(name)
        values = dataset.columns[name]
        observed = np.unique(values)
        missing = [int(v) for v in observed if int(v) not in mapping and default is None]
        if missing:
            raise SchemaError(f"column {name!r}: codes {missing} have no mapping and no default")
        lut = {int(v): mapping.get(int(v), default) for v in observed}
        cols[name] = np.array([lut[int(v)] for v in values], dtype=np.int64)
        codomain = {mapping.get(v, default) for v in col.allowed_values if v in mapping or default is not None}
        schema[schema.index(col)] = ColumnSchema(name, col.kind, tuple(codomain))
    out = dataset.replace(schema=schema, columns=cols)
    if remap.label is not None:
        bad = set(np.unique(dataset.label).tolist()) - set(remap.label)
        if bad:
            raise SchemaError(f"label codes {sorted(bad)} have no mapping")
        if not set(remap.label.values()) <= {0, 1}:
            raise SchemaError("label remap must map into {0, 1}")
        out = out.with_label([remap.label[int(v)] for v in dataset.label])
    return out


@dataclass
class SyntheticSpec:
    """Recipe for a seeded synthetic federation.

    ``rows_per_client``, ``group_shares``, ``positive_rates`` and
    ``base_rate`` may be given once or as a list with one entry per client. A row's label probability is
    ``base_rate + sum_a (positive_rates[a][value_a] - base_rate)``, clipped
    to [0, 1]; with a single rated attribute this is exactly that group's rate.
    Group counts follow the shares exactly (largest-remainder allocation).
    """

    n_clients: int = 4
    rows_per_client: tuple[int, int] = (1000, 1000)
    attributes: dict[str, list[int]] = field(default_factory=lambda: {"SEX": [1, 2], "RAC1P": [1, 2]})
    group_shares: dict | list | None = None
    positive_rates: dict | list | None = None
    base_rate: float | list = 0.5
    n_features: int = 4
    signal: float = 2.0
    group_shift: float = 0.5
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.rows_per_client[0], (list, tuple)):
            self.rows_per_client = [tuple(r) for r in self.rows_per_client]
            if len(self.rows_per_client) != self.n_clients:
                raise SchemaError("rows_per_client list needs one (lo, hi) pair per client")
        else:
            self.rows_per_client = tuple(self.rows_per_client)
        self.split_fractions = tuple(self.split_fractions)
        if self.n_clients < 1:
            raise SchemaError("n_clients must be >= 1")
        for k in range(self.n_clients):
            lo, hi = self.client_value(self.rows_per_client, k)
            if lo < 0 or hi < lo:
                raise SchemaError(f"invalid rows_per_client for client {k}")
            shares = self.client_value(self.group_shares, k) or {}
            for attr, sh in shares.items():
                if attr not in self.attributes:
                    raise SchemaError(f"shares given for unknown attribute {attr!r}")
                if abs(sum(sh.values()) - 1.0) > 1e-9:
                    raise SchemaError(f"shares for {attr!r} must sum to 1")
            for attr, rates in (self.client_value(self.positive_rates, k) or {}).items():
                if any(not 0 <= r <= 1 for r in rates.values()):
                    raise SchemaError(f"rates for {attr!r} must lie in [0, 1]")

    def client_value(self, v, k: int):
        return v[k] if isinstance(v, list) else v

    def to_dict(self) -> dict:
        def norm(v):
            if isinstance(v, dict):
                return {str(k): norm(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [norm(x) for x in v]
            return v

        return norm(asdict(self))

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSpec":
        def codes(v):
            if isinstance(v, dict):
                return {int(k) if str(k).lstrip("-").isdigit() else k: codes(x) for k, x in v.items()}
            if isinstance(v, list):
                return [codes(x) for x in v]
            return v

        d = dict(d)
        for key in ("group_shares", "positive_rates"):
            if d.get(key) is not None:
                d[key] = codes(d[key])
        return cls(**d)


def synthetic_schema(spec: SyntheticSpec) -> tuple[ColumnSchema, ...]:
    feats = tuple(numeric(f"X{j}") for j in range(spec.n_features))
    return feats + tuple(categorical(a, v) for a, v in spec.attributes.items())


def _synthetic_client(spec: SyntheticSpec, k: int, row_offset: int) -> Dataset:
    rng = make_rng(derive_seed(spec.seed, "synthetic", k))
    lo, hi = spec.client_value(spec.rows_per_client, k)
    n = int(rng.integers(lo, hi + 1))
    shares = spec.client_value(spec.group_shares, k) or {}
    rates = spec.client_value(spec.positive_rates, k) or {}
    base = float(spec.client_value(spec.base_rate, k))
    cols = {}
    p = np.full(n, base)
    for attr, values in spec.attributes.items():
        sh = shares.get(attr, {v: 1.0 / len(values) for v in values})
        counts = largest_remainder(n, [sh.get(v, 0.0) for v in values])
        codes = np.repeat(np.asarray(values, dtype=np.int64), counts)
        codes = codes[rng.permutation(n)]
        cols[attr] = codes
        if attr in rates:
            lut = {v: rates[attr].get(v, base) - base for v in values}
            p += np.array([lut[int(c)] for c in codes]) if n else 0.0
    y = (rng.random(n) < np.clip(p, 0.0, 1.0)).astype(np.int64)
    # Fixed directions shared by all clients so one linear model fits everyone.
    drng = make_rng(derive_seed(spec.seed, "synthetic", "directions"))
    d = spec.n_features
    label_dir = drng.normal(size=d)
    label_dir /= np.linalg.norm(label_dir) or 1.0
    X = rng.normal(size=(n, d)) + spec.signal * (y[:, None] - 0.5) * label_dir
    for attr, values in spec.attributes.items():
        g_dir = drng.normal(size=d)
        g_dir /= np.linalg.norm(g_dir) or 1.0
        pos = np.searchsorted(np.asarray(values), cols[attr])
        centred = pos - (len(values) - 1) / 2.0
        X += spec.group_shift * centred[:, None] * g_dir
    for j in range(d):
        cols[f"X{j}"] = X[:, j]
    return Dataset(
        synthetic_schema(spec),
        cols,
        y,
        tuple(spec.attributes),
        np.arange(row_offset, row_offset + n, dtype=np.int64),
    )


def generate_synthetic_pool(spec: SyntheticSpec) -> list[Dataset]:
    """Unsplit client datasets (row ids are unique across clients)."""
    out, offset = [], 0
    for k in range(spec.n_clients):
        ds = _synthetic_client(spec, k, offset)
        offset += len(ds)
        out.append(ds)
    return out


def generate_synthetic(spec: SyntheticSpec) -> FederatedDataset:
    """Seeded synthetic federation with clients ``client_00`` ... split per ``spec``."""
    fractions = SplitFractions(*spec.split_fractions)
    split_seed = derive_seed(spec.seed, "split")
    width = max(2, len(str(spec.n_clients - 1)))
    clients = {}
    for k, ds in enumerate(generate_synthetic_pool(spec)):
        cid = f"client_{k:0{width}d}"
        clients[cid] = split_train_val_test(ds, fractions, derive_seed(split_seed, "split", cid))
    schema = synthetic_schema(spec)
    record = GenerationRecord(
        base_task="synthetic",
        states=[],
        clients=list(clients),
        source="synthetic",
        synthetic=spec.to_dict(),
        sensitive_attrs=list(spec.attributes),
        schema=[c.to_dict() for c in schema],
        split_fractions=fractions.to_dict(),
        seed=spec.seed,
        seeds={"synthetic": spec.seed, "split": split_seed},
        library_version=__version__,
    )
    return FederatedDataset(clients, record)
