"""Brute-force reference implementations, written without touching fedfair internals."""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations


def _groups(values):
    out = {}
    for i, v in enumerate(values):
        out.setdefault(int(v), []).append(i)
    return out


def dd_oracle(preds, values, allowed):
    """(dd, pair) with exact rationals; pair ties go to the lowest codes."""
    groups = _groups(values)
    rates = {v: Fraction(sum(int(preds[i]) for i in groups[v]), len(groups[v])) for v in sorted(allowed) if v in groups}
    if len(rates) < 2:
        return None
    best, pair = None, None
    for a, b in combinations(sorted(rates), 2):
        gap = abs(rates[a] - rates[b])
        if best is None or gap > best:
            best, pair = gap, (a, b)
    return best, pair


def ovr_oracle(preds, values, value):
    inside = [int(p) for p, v in zip(preds, values) if int(v) == value]
    outside = [int(p) for p, v in zip(preds, values) if int(v) != value]
    if not inside or not outside:
        return None
    return Fraction(sum(inside), len(inside)) - Fraction(sum(outside), len(outside))


def eod_oracle(preds, labels, values, allowed):
    """(eod, (y, z)); undefined cells skipped; ties lowest z then lowest y."""
    best = None
    if len({int(v) for v in values}) < 2:
        return None
    for z in sorted(allowed):
        for y in (0, 1):
            g = [int(p) for p, l, v in zip(preds, labels, values) if int(v) == z and int(l) == y]
            c = [int(p) for p, l, v in zip(preds, labels, values) if int(v) != z and int(l) == y]
            if not g or not c:
                continue
            gap = abs(Fraction(sum(g), len(g)) - Fraction(sum(c), len(c)))
            if best is None or gap > best[0]:
                best = (gap, (y, z))
    return best


def fedavg_oracle(params, sizes):
    n = sum(sizes)
    return [sum(Fraction(s, n) * Fraction(p[j]) for p, s in zip(params, sizes)) for j in range(len(params[0]))]
