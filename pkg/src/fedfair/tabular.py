"""Immutable tabular data model and group-selection primitives.

A :class:`Dataset` is a set of named columns (integer codes for categorical
columns, floats for numeric ones), a binary label vector and the list of
sensitive attributes. Every row carries an identity (``row_ids``) that
survives subsetting, so disjointness of splits and partitions is checkable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import SchemaError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    allowed_values: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.allowed_values is not None:
            object.__setattr__(
                self, "allowed_values", tuple(sorted(int(v) for v in self.allowed_values))
            )

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.allowed_values is not None:
            d["allowed_values"] = list(self.allowed_values)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ColumnSchema":
        vals = d.get("allowed_values")
        return cls(d["name"], d["kind"], tuple(vals) if vals is not None else None)


def numeric(name: str) -> ColumnSchema:
    return ColumnSchema(name, NUMERIC)


def categorical(name: str, values: Iterable[int]) -> ColumnSchema:
    return ColumnSchema(name, CATEGORICAL, tuple(values))


@dataclass(frozen=True)
class Violation:
    row: int | None
    column: str
    message: str


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class Dataset:
    """Columnar table with a binary label and designated sensitive attributes.

    Arrays are copied and marked read-only on construction. Structural
    problems (unknown names, length mismatches) raise :class:`SchemaError`;
    value-level problems are left for :func:`validate` to report.
    """

    __slots__ = ("schema", "columns", "label", "sensitive_attrs", "row_ids", "label_name")

    def __init__(
        self,
        schema: Sequence[ColumnSchema],
        columns: Mapping[str, Sequence],
        label: Sequence,
        sensitive_attrs: Sequence[str] = (),
        row_ids: Sequence[int] | None = None,
        label_name: str = "label",
    ):
        schema = tuple(schema)
        names = [c.name for c in schema]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in schema: {names}")
        if set(columns) != set(names):
            raise SchemaError(
                f"columns {sorted(columns)} do not match schema {sorted(names)}"
            )
        if label_name in names:
            raise SchemaError(f"label column {label_name!r} must not be a feature column")
        label = np.asarray(label)
        n = len(label)
        cols = {}
        for c in schema:
            values = np.asarray(columns[c.name])
            if values.ndim != 1 or len(values) != n:
                raise SchemaError(f"column {c.name!r} has {len(values)} rows, label has {n}")
            dtype = np.int64 if c.is_categorical else np.float64
            cols[c.name] = _frozen(values.astype(dtype))
        by_name = {c.name: c for c in schema}
        for attr in sensitive_attrs:
            if attr not in by_name:
                raise SchemaError(f"sensitive attribute {attr!r} is not a column")
        if row_ids is None:
            row_ids = np.arange(n, dtype=np.int64)
        row_ids = np.asarray(row_ids, dtype=np.int64)
        if len(row_ids) != n:
            raise SchemaError("row_ids length does not match label length")
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "label", _frozen(label.astype(np.int64)))
        object.__setattr__(self, "sensitive_attrs", tuple(sensitive_attrs))
        object.__setattr__(self, "row_ids", _frozen(row_ids))
        object.__setattr__(self, "label_name", label_name)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    def __len__(self) -> int:
        return len(self.label)

    def __repr__(self) -> str:
        return (
            f"Dataset(n={len(self)}, columns={[c.name for c in self.schema]}, "
            f"sensitive={list(self.sensitive_attrs)})"
        )

    @property
    def n_rows(self) -> int:
        return len(self.label)

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.schema]

    def column_schema(self, name: str) -> ColumnSchema:
        for c in self.schema:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {name!r}")

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"unknown column {name!r}") from None

    def take(self, indices) -> "Dataset":
        """Rows at ``indices`` (in that order); row identities are kept."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.schema,
            {k: v[idx] for k, v in self.columns.items()},
            self.label[idx],
            self.sensitive_attrs,
            self.row_ids[idx],
            self.label_name,
        )

    def with_label(self, label) -> "Dataset":
        return Dataset(
            self.schema, self.columns, label, self.sensitive_attrs, self.row_ids, self.label_name
        )

    def replace(self, schema=None, columns=None, sensitive_attrs=None) -> "Dataset":
        return Dataset(
            self.schema if schema is None else schema,
            self.columns if columns is None else columns,
            self.label,
            self.sensitive_attrs if sensitive_attrs is None else sensitive_attrs,
            self.row_ids,
            self.label_name,
        )

    def with_column(self, col: ColumnSchema, values, sensitive: bool = False) -> "Dataset":
        cols = dict(self.columns)
        cols[col.name] = values
        sens = self.sensitive_attrs + ((col.name,) if sensitive else ())
        return self.replace(schema=self.schema + (col,), columns=cols, sensitive_attrs=sens)

    def drop_columns(self, names: Iterable[str]) -> "Dataset":
        names = set(names)
        return self.replace(
            schema=tuple(c for c in self.schema if c.name not in names),
            columns={k: v for k, v in self.columns.items() if k not in names},
            sensitive_attrs=tuple(a for a in self.sensitive_attrs if a not in names),
        )

    def equals(self, other: "Dataset") -> bool:
        """Cell-for-cell equality, including schema, labels and row identities."""
        if not isinstance(other, Dataset):
            return False
        return (
            self.schema == other.schema
            and self.sensitive_attrs == other.sensitive_attrs
            and self.label_name == other.label_name
            and np.array_equal(self.label, other.label)
            and np.array_equal(self.row_ids, other.row_ids)
            and all(np.array_equal(self.columns[k], other.columns[k]) for k in self.columns)
        )

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        if not parts:
            raise SchemaError("cannot concatenate zero datasets")
        first = parts[0]
        for p in parts[1:]:
            if p.schema != first.schema or p.sensitive_attrs != first.sensitive_attrs:
                raise SchemaError("datasets to concatenate must share one schema")
        return cls(
            first.schema,
            {k: np.concatenate([p.columns[k] for p in parts]) for k in first.columns},
            np.concatenate([p.label for p in parts]),
            first.sensitive_attrs,
            np.concatenate([p.row_ids for p in parts]),
            first.label_name,
        )

    @classmethod
    def empty_like(cls, ds: "Dataset") -> "Dataset":
        return ds.take(np.zeros(0, dtype=np.int64))


@dataclass(frozen=True)
class SplitSet:
    train: Dataset
    validation: Dataset
    test: Dataset

    def part(self, name: str) -> Dataset:
        if name not in SPLITS:
            raise SchemaError(f"unknown split {name!r}")
        return getattr(self, name)

    def replace_part(self, name: str, ds: Dataset) -> "SplitSet":
        parts = {s: self.part(s) for s in SPLITS}
        parts[name] = ds
        return SplitSet(**parts)

    def combined(self) -> Dataset:
        return Dataset.concat([self.train, self.validation, self.test])

    def sizes(self) -> dict[str, int]:
        return {s: len(self.part(s)) for s in SPLITS}

    @property
    def schema(self):
        return self.train.schema


@dataclass
class GenerationRecord:
    """Every parameter and seed used to produce a federation.

    Field order is the key order of ``metadata.json`` and must stay fixed.
    """

    base_task: str = "ACSIncome"
    year: int = 2018
    horizon: str = "1-Year"
    states: list = field(default_factory=list)
    clients: list = field(default_factory=list)
    source: str = "synthetic"
    synthetic: dict | None = None
    label_name: str = "label"
    sensitive_attrs: list = field(default_factory=list)
    schema: list = field(default_factory=list)
    remap: dict | None = None
    partitioner: dict | None = None
    split_fractions: dict | None = None
    seed: int = 0
    seeds: dict = field(default_factory=dict)
    modifications: list = field(default_factory=list)
    threshold_rule: dict | None = None
    device: dict | None = None
    fl: dict | None = None
    config: dict | None = None
    library_version: str = ""

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "GenerationRecord":
        from dataclasses import fields

        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown metadata keys: {sorted(unknown)}")
        return cls(**dict(d))


@dataclass
class FederatedDataset:
    clients: dict[str, SplitSet]
    metadata: GenerationRecord = field(default_factory=GenerationRecord)

    def __post_init__(self):
        schemas = {s.schema for s in self.clients.values()}
        if len(schemas) > 1:
            raise SchemaError("all clients must share one schema")

    @property
    def client_ids(self) -> list[str]:
        return list(self.clients)

    def __len__(self) -> int:
        return len(self.clients)

    def __getitem__(self, cid: str) -> SplitSet:
        return self.clients[cid]


def validate(dataset: Dataset) -> list[Violation]:
    """All invariant violations of ``dataset``; empty means conformant."""
    out: list[Violation] = []
    by_name = {c.name: c for c in dataset.schema}
    for attr in dataset.sensitive_attrs:
        if not by_name[attr].is_categorical:
            out.append(Violation(None, attr, "sensitive attribute must be categorical"))
    for c in dataset.schema:
        if not c.name:
            out.append(Violation(None, c.name, "empty column name"))
        if c.kind not in (NUMERIC, CATEGORICAL):
            out.append(Violation(None, c.name, f"unknown kind {c.kind!r}"))
            continue
        values = dataset.columns[c.name]
        if c.is_categorical:
            if not c.allowed_values:
                out.append(Violation(None, c.name, "categorical column lists no allowed values"))
                continue
            bad = np.flatnonzero(~np.isin(values, np.asarray(c.allowed_values)))
            for r in bad:
                out.append(Violation(int(r), c.name, f"value {int(values[r])} not allowed"))
        else:
            for r in np.flatnonzero(~np.isfinite(values)):
                out.append(Violation(int(r), c.name, "non-finite numeric value"))
    for r in np.flatnonzero((dataset.label != 0) & (dataset.label != 1)):
        out.append(Violation(int(r), dataset.label_name, "label must be 0 or 1"))
    return out


def _check_sensitive(dataset: Dataset, attr: str) -> ColumnSchema:
    if attr not in dataset.sensitive_attrs:
        raise SchemaError(f"{attr!r} is not a sensitive attribute")
    return dataset.column_schema(attr)


def group_index(dataset: Dataset, attr: str, value: int) -> np.ndarray:
    """Sorted row positions where sensitive column ``attr`` equals ``value``."""
    col = _check_sensitive(dataset, attr)
    if int(value) not in col.allowed_values:
        raise SchemaError(f"value {value} is not allowed for {attr!r}")
    return np.flatnonzero(dataset.columns[attr] == int(value))


@dataclass(frozen=True)
class CompositeColumn:
    """Derived categorical column over a combination of sensitive attributes.

    ``combos[i]`` is the tuple of source values encoded by code ``i + 1``.
    """

    schema: ColumnSchema
    codes: np.ndarray
    attrs: tuple[str, ...]
    combos: tuple[tuple[int, ...], ...]

    def decode(self, code: int) -> tuple[int, ...]:
        return self.combos[int(code) - 1]


def composite_name(attrs: Sequence[str]) -> str:
    return "&".join(attrs)


def intersect_groups(dataset: Dataset, attrs: Sequence[str]) -> CompositeColumn:
    """Encode every combination of ``attrs`` values as one categorical code.

    Codes enumerate the Cartesian product of allowed values, lexicographically
    in attribute order then value order, starting at 1. Combinations absent
    from the data still get a code (with an empty group).
    """
    attrs = tuple(attrs)
    if len(attrs) < 2:
        raise SchemaError("intersect_groups needs at least two attributes")
    schemas = [_check_sensitive(dataset, a) for a in attrs]
    combos = tuple(itertools.product(*[s.allowed_values for s in schemas]))
    lookup = {combo: i + 1 for i, combo in enumerate(combos)}
    stacked = np.stack([dataset.columns[a] for a in attrs], axis=1) if len(dataset) else np.zeros((0, len(attrs)), np.int64)
    codes = np.fromiter(
        (lookup.get(tuple(int(v) for v in row), 0) for row in stacked),
        dtype=np.int64,
        count=len(stacked),
    )
    schema = ColumnSchema(composite_name(attrs), CATEGORICAL, tuple(range(1, len(combos) + 1)))
    codes.setflags(write=False)
    return CompositeColumn(schema, codes, attrs, combos)


def with_intersection(dataset: Dataset, attrs: Sequence[str]) -> Dataset:
    """Copy of ``dataset`` with the composite column added as a sensitive attribute."""
    comp = intersect_groups(dataset, attrs)
    if comp.schema.name in dataset.columns:
        return dataset
    return dataset.with_column(comp.schema, comp.codes, sensitive=True)


def attribute_codes(dataset: Dataset, attr: str | Sequence[str]) -> tuple[np.ndarray, tuple[int, ...], str]:
    """Codes, allowed values and display name for a plain or composite attribute."""
    if isinstance(attr, str):
        if "&" in attr and attr not in dataset.columns:
            attr = tuple(attr.split("&"))
        else:
            col = _check_sensitive(dataset, attr)
            return dataset.columns[attr], col.allowed_values, attr
    comp = intersect_groups(dataset, attr)
    return comp.codes, comp.schema.allowed_values, comp.schema.name
