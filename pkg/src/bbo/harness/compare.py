"""Declarative pass/fail assertions over metric CSVs.

Criteria file grammar, one assertion per line (``#`` starts a comment)::

    final <metric> <op> <value>          last value of every seed
    max <metric> <op> <value>            largest value of every seed
    min <metric> <op> <value>            smallest value of every seed
    diverges <metric> <factor>           some value > factor x the seed's first value, or non-finite
    close <metric> <value> <rel_tol>     |final - value| <= rel_tol * max(1, |value|) for every seed
    seeds <count> <final|max|min> <metric> <op> <value>
                                         at least ``count`` seeds satisfy the assertion

``op`` is one of ``<``, ``<=``, ``>``, ``>=``.
"""

from __future__ import annotations

import math
import operator
from collections import defaultdict
from typing import Dict, List, NamedTuple

from .runner import MetricRow, read_rows

OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


class CriterionError(ValueError):
    pass


class Verdict(NamedTuple):
    criterion: str
    passed: bool
    detail: str

    def to_dict(self):
        return {"criterion": self.criterion, "passed": self.passed, "detail": self.detail}


_SHAPES = {
    "final": ("metric", "op", "num"),
    "max": ("metric", "op", "num"),
    "min": ("metric", "op", "num"),
    "diverges": ("metric", "num"),
    "close": ("metric", "num", "num"),
    "seeds": ("int", "agg", "metric", "op", "num"),
}


def _token_ok(tok: str, shape: str) -> bool:
    if shape == "op":
        return tok in OPS
    if shape in ("num", "int"):
        try:
            (int if shape == "int" else float)(tok)
        except ValueError:
            return False
        return True
    if shape == "agg":
        return tok in ("final", "max", "min")
    return shape == "metric"


def parse_criteria(text: str) -> List[List[str]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        shape = _SHAPES.get(toks[0])
        if shape is None or len(toks) != len(shape) + 1 or not all(map(_token_ok, toks[1:], shape)):
            raise CriterionError(f"line {lineno}: cannot parse {raw.strip()!r}")
        out.append(toks)
    return out


def _series(rows) -> Dict[str, Dict[int, List[float]]]:
    by = defaultdict(lambda: defaultdict(list))
    for r in sorted(rows, key=lambda r: (r.seed, r.step)):
        by[r.metric][r.seed].append(r.value)
    return by


def evaluate(criteria: List[List[str]], rows: List[MetricRow]) -> List[Verdict]:
    """Evaluate each parsed criterion over all seeds in ``rows``."""
    series = _series(rows)
    verdicts = []
    for toks in criteria:
        text = " ".join(toks)
        kind = toks[0]
        metric = toks[3] if kind == "seeds" else toks[1]
        if metric not in series:
            verdicts.append(Verdict(text, False, f"missing metric {metric}"))
            continue
        per_seed = series[metric]
        if kind in ("final", "max", "min", "seeds"):
            op, thr = (toks[4], float(toks[5])) if kind == "seeds" else (toks[2], float(toks[3]))
            agg = toks[2] if kind == "seeds" else kind
            pick = {"max": max, "min": min}.get(agg, lambda v: v[-1])
            vals = {s: pick(v) for s, v in per_seed.items()}
            ok = {s: OPS[op](v, thr) for s, v in vals.items()}
            need = int(toks[1]) if kind == "seeds" else len(ok)
            passed = sum(ok.values()) >= need
            detail = ", ".join(f"seed {s}: {vals[s]:.6g}" for s in sorted(vals))
        elif kind == "diverges":
            factor = float(toks[2])
            ok = {s: any(not math.isfinite(x) or x > factor * v[0] for x in v) for s, v in per_seed.items()}
            passed = all(ok.values())
            detail = ", ".join(f"seed {s}: peak/initial {max(v) / v[0] if v[0] else math.inf:.3g}" for s, v in sorted(per_seed.items()))
        else:
            target, tol = float(toks[2]), float(toks[3])
            ok = {s: abs(v[-1] - target) <= tol * max(1.0, abs(target)) for s, v in per_seed.items()}
            passed = all(ok.values())
            detail = ", ".join(f"seed {s}: {v[-1]:.6g}" for s, v in sorted(per_seed.items()))
        verdicts.append(Verdict(text, bool(passed), detail))
    return verdicts


def compare(criteria_text: str, csv_paths) -> List[Verdict]:
    rows = [r for p in csv_paths for r in read_rows(p)]
    return evaluate(parse_criteria(criteria_text), rows)
