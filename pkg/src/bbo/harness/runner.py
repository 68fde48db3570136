"""Seed fan-out, per-seed metric CSVs and the cross-seed aggregate."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional

from .config import RunConfig
from .experiments import get_experiment

log = logging.getLogger(__name__)

HEADER = ("seed", "step", "metric", "value")


class MetricRow(NamedTuple):
    seed: int
    step: int
    metric: str
    value: float


@dataclass
class RunResult:
    per_seed: Dict[int, Path] = field(default_factory=dict)
    aggregate: Optional[Path] = None
    failures: Dict[int, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def run_seed(config: RunConfig, seed: int) -> List[MetricRow]:
    exp = get_experiment(config.experiment)
    rows = exp.run(config.algorithm, config.hyperparameters, seed, config.total_steps, config.eval_every)
    return [MetricRow(seed, int(s), m, float(v)) for s, m, v in rows]


def _safe_run(config: RunConfig, seed: int):
    try:
        return seed, run_seed(config, seed), None
    except Exception as err:  # recorded; the remaining seeds continue
        return seed, [], f"{type(err).__name__}: {err}"


def format_rows(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in rows:
        w.writerow((r.seed, r.step, r.metric, repr(float(r.value))))
    return buf.getvalue()


def read_rows(path) -> List[MetricRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [MetricRow(int(r["seed"]), int(r["step"]), r["metric"], float(r["value"])) for r in reader]


def aggregate(rows) -> List[tuple]:
    """``(step, metric, mean, std, n)`` across seeds; ``std`` is the population std."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r.metric, r.step)].append(r.value)
    out = []
    for (metric, step), vals in sorted(groups.items()):
        n = len(vals)
        mean = math.fsum(vals) / n
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / n) if all(map(math.isfinite, vals)) else float("nan")
        out.append((step, metric, mean, std, n))
    return out


def format_aggregate(agg) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("step", "metric", "mean", "std", "n"))
    for step, metric, mean, std, n in agg:
        w.writerow((step, metric, repr(mean), repr(std), n))
    return buf.getvalue()


def run(config: RunConfig, jobs: int = 1, out: Optional[str] = None) -> RunResult:
    """Run every seed, write ``<stem>_seed<k>.csv`` and ``<stem>_aggregate.csv``.

    Args:
        config: validated run configuration.
        jobs: worker processes (1 runs inline).
        out: output directory, overriding ``config.out``.
    """
    out_dir = Path(out or config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{config.experiment}_{config.algorithm}"
    if jobs > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_safe_run, [config] * len(config.seeds), config.seeds))
    else:
        results = [_safe_run(config, s) for s in config.seeds]
    res = RunResult()
    all_rows = []
    for seed, rows, err in results:
        if err is not None:
            log.error("seed %d of %s aborted: %s", seed, stem, err)
            res.failures[seed] = err
            continue
        path = out_dir / f"{stem}_seed{seed}.csv"
        path.write_text(format_rows(rows))
        res.per_seed[seed] = path
        all_rows.extend(rows)
    if all_rows:
        res.aggregate = out_dir / f"{stem}_aggregate.csv"
        res.aggregate.write_text(format_aggregate(aggregate(all_rows)))
    return res
