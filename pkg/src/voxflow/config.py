"""Run configuration: defaults, flat dotted-key JSON files and overrides.

Precedence is defaults < config file < command-line overrides.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .clustering import DbscanParams
from .errors import InvalidConfig, IoError, ParseError
from .losses import LossWeights
from .optimizer import OptimConfig

CONFIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class GridConfig:
    cell_size: float = 0.5
    margin: float = 3.0


@dataclass(frozen=True)
class DtConfig:
    cell: float = 0.2
    truncation: float = 5.0


@dataclass(frozen=True)
class FilterConfig:
    ego_radius: float = 3.0
    max_height: float = 4.0
    max_range: float = 50.0
    ground_z: Optional[float] = None


@dataclass(frozen=True)
class RunConfig:
    m: int = 2
    grid: GridConfig = field(default_factory=GridConfig)
    dt: DtConfig = field(default_factory=DtConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    dbscan: DbscanParams = field(default_factory=DbscanParams)
    filter: FilterConfig = field(default_factory=FilterConfig)
    dynamic_threshold: float = 0.05
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise InvalidConfig("m must be >= 1")
        if self.workers < 1:
            raise InvalidConfig("workers must be >= 1")
        if not self.grid.cell_size > 0 or self.grid.margin < 0:
            raise InvalidConfig("grid.cell_size must be positive and grid.margin non-negative")
        if not self.dt.cell > 0 or not self.dt.truncation > 0:
            raise InvalidConfig("dt.cell and dt.truncation must be positive")

    def flat(self) -> dict[str, Any]:
        return _flatten(dataclasses.asdict(self))

    def digest(self) -> str:
        blob = json.dumps(self.flat(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        flat = self.flat()
        for key, value in overrides.items():
            if key not in flat:
                raise InvalidConfig(f"unknown config key {key!r}")
            flat[key] = value
        return from_flat(flat)


def _flatten(d: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def from_flat(flat: dict[str, Any]) -> RunConfig:
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        head, _, tail = key.partition(".")
        if tail:
            nested.setdefault(head, {})[tail] = value
        else:
            nested[head] = value
    sub = {
        "grid": GridConfig, "dt": DtConfig, "weights": LossWeights,
        "optim": OptimConfig, "dbscan": DbscanParams, "filter": FilterConfig,
    }
    try:
        kwargs = {k: (sub[k](**v) if k in sub else v) for k, v in nested.items()}
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise InvalidConfig(f"bad config: {exc}") from exc


def load_config(path=None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ParseError(f"{path}: config must be a JSON object of dotted keys")
        cfg = cfg.with_overrides(doc)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
