"""Run configuration: flat `key = value` files with CLI-flag overrides."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .backtest import MEASURE_KINDS

METHODS = ("grace", "grace1", "grace2")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # paths
    prices: str = "data/prices.csv"
    factors: str = "data/factors.csv"
    relations: str = "data/relations.csv"
    relations_meta: str = "data/relations_meta.csv"
    outdir: str = "out"
    # split (day indices, exclusive ends)
    train_end: int = 600
    valid_end: int = 750
    test_end: int = 900
    # model / training
    method: str = "grace"
    lag: int = 16
    hidden: int = 64
    learning_rate: float = 1e-3
    order_penalty: float = 0.1
    max_epochs: int = 200
    patience: int = 5
    jobs: int = 1
    # quantile grid and validity filtering
    n_levels: int = 199
    alpha: float = 0.01
    tolerance: int = 30
    # backtest
    cost_bps: float = 30.0
    measures: str = "M,MV,MVSK,SR,SRSK"
    # misc
    seed: int = 0
    # synthetic-data stage
    synth_stocks: int = 20
    synth_days: int = 900
    synth_group_gap: float = 3e-4
    synth_momentum: float = 5e-4
    synth_nonlinear: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.n_levels < 4:
            raise ConfigError("need at least 4 quantile levels")
        for m in self.measure_list():
            if m not in MEASURE_KINDS:
                raise ConfigError(f"unknown measure {m!r}")

    def measure_list(self):
        return [m.strip() for m in self.measures.split(",") if m.strip()]

    def canonical_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(sorted(lines)) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:12]

    def provenance(self) -> str:
        return f"config={self.config_hash()} seed={self.seed}"


def _coerce(name, kind, raw):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {name!r} value {raw!r} as {kind.__name__}") from None


def parse_config_text(text) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        out[key] = value
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    """Config file values, then overrides, on top of the defaults."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw.update(parse_config_text(fh.read()))
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    valid = {f.name: f.type for f in fields(RunConfig)}
    kinds = {"int": int, "float": float, "str": str}
    values = {}
    for key, value in raw.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value if not isinstance(value, str) else \
            _coerce(key, kinds.get(valid[key], str), value)
    return RunConfig(**values)
