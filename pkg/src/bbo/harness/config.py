"""Run configuration files.

Grammar, one statement per line::

    line    := blank | comment | key "=" value
    comment := "#" anything
    key     := [A-Za-z_][A-Za-z0-9_.]*
    value   := int | float | bool | list | string

``true``/``false`` are booleans, comma-separated values are tuples, and
anything that does not parse as a number is a string. Reserved keys are
``experiment``, ``algorithm``, ``seeds`` (``0,1,2`` or a range ``0-4``),
``total_steps``, ``eval_every`` and ``out``; every other key is a
hyperparameter and must be known to the chosen experiment and algorithm.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple

RESERVED = ("experiment", "algorithm", "seeds", "total_steps", "eval_every", "out")
_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2 on the command line)."""


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    algorithm: str
    hyperparameters: Dict[str, object] = field(default_factory=dict)
    seeds: Tuple[int, ...] = (0,)
    total_steps: int = 1000
    eval_every: int = 100
    out: str = "runs"


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in text:
        return tuple(parse_value(p) for p in text.split(",") if p.strip())
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _seeds(value) -> Tuple[int, ...]:
    if isinstance(value, int):
        return (value,)
    if isinstance(value, tuple) and all(isinstance(v, int) for v in value):
        return value
    if isinstance(value, str):
        m = re.fullmatch(r"(\d+)-(\d+)", value)
        if m and int(m.group(1)) <= int(m.group(2)):
            return tuple(range(int(m.group(1)), int(m.group(2)) + 1))
    raise ConfigError(f"bad seeds value {value!r}; use 3, 0,1,2 or 0-4")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and validate config text against the experiment registry.

    Raises:
        ConfigError: on syntax errors, duplicate or unknown keys, or unknown
            experiment or algorithm ids.
    """
    from .experiments import get_experiment

    entries: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"{source}:{lineno}: missing value for {key!r}")
        entries[key] = parse_value(value)
    for key in ("experiment", "algorithm"):
        if key not in entries:
            raise ConfigError(f"{source}: missing required key {key!r}")
    exp_id, algo = str(entries.pop("experiment")), str(entries.pop("algorithm"))
    try:
        exp = get_experiment(exp_id)
    except KeyError as err:
        raise ConfigError(f"{source}: {err.args[0]}") from None
    if algo not in exp.algorithms:
        raise ConfigError(f"{source}: experiment {exp_id!r} has no algorithm {algo!r}; choose from {sorted(exp.algorithms)}")
    allowed = exp.allowed_keys(algo)
    reserved = {k: entries.pop(k) for k in RESERVED[2:] if k in entries}
    unknown = sorted(set(entries) - allowed)
    if unknown:
        raise ConfigError(f"{source}: unknown hyperparameter(s) {unknown} for {exp_id}/{algo}; known: {sorted(allowed)}")
    total = reserved.get("total_steps", exp.default_steps)
    every = reserved.get("eval_every", max(1, total // 10))
    if not (isinstance(total, int) and total >= 1 and isinstance(every, int) and every >= 1):
        raise ConfigError(f"{source}: total_steps and eval_every must be positive integers")
    return RunConfig(exp_id, algo, entries, _seeds(reserved.get("seeds", 0)), total, every, str(reserved.get("out", "runs")))


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {p}: {err.strerror}") from None
    return parse_config(text, str(p))
