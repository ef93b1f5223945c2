from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from fedfair.tabular import Dataset, categorical, numeric

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def table(rows: dict, label, sensitive=("SEX",), allowed=None, row_ids=None) -> Dataset:
    """Small hand-built dataset; every integer column is categorical, floats are numeric."""
    allowed = allowed or {}
    schema = []
    for name, values in rows.items():
        values = np.asarray(values)
        if values.dtype.kind in "iu":
            schema.append(categorical(name, allowed.get(name, sorted(set(values.tolist())) or [1])))
        else:
            schema.append(numeric(name))
    return Dataset(schema, rows, label, sensitive, row_ids)


@st.composite
def random_tables(draw, max_rows=64, max_attrs=3, max_values=4, min_rows=0):
    """Random categorical tables with labels and predictions."""
    n = draw(st.integers(min_rows, max_rows))
    n_attrs = draw(st.integers(1, max_attrs))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    cols, schema, attrs = {}, [], []
    for a in range(n_attrs):
        k = draw(st.integers(1, max_values))
        name = f"A{a}"
        cols[name] = rng.integers(1, k + 1, n)
        schema.append(categorical(name, range(1, k + 1)))
        attrs.append(name)
    cols["F"] = rng.normal(size=n)
    schema.append(numeric("F"))
    label = rng.integers(0, 2, n)
    preds = rng.integers(0, 2, n)
    return Dataset(schema, cols, label, attrs, np.arange(n) * 7 + 3), preds


@pytest.fixture
def sex_table():
    return table({"SEX": np.array([1, 1, 1, 1, 2, 2, 2, 2])}, [1, 0, 1, 0, 1, 0, 0, 0])


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
