"""Run configuration: one hashable document covering grid, instances, hypotheses and forest."""

from __future__ import annotations

import copy
import hashlib
import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import ConfigError
from .forest import ForestConfig
from .grid import GridSpec
from .hypotheses import HypothesisConfig, MainRule, RuleTerm, default_rules
from .scenario import ManeuverLabel
from .schema import load_validated, validate

CONFIG_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridModel(_Strict):
    x0: float = 0.0
    y0: float = 0.0
    cell_length: float = Field(0.5, gt=0)
    cell_width: float = Field(0.5, gt=0)
    I: int = Field(80, ge=1)
    J: int = Field(80, ge=1)


class TermModel(_Strict):
    variable: Literal["v", "ax", "abs_ax"]
    slope: float
    center: float


class RuleModel(_Strict):
    base: float = Field(ge=0)
    terms: list[TermModel] = []


class HypothesisModel(_Strict):
    n_lon: int = Field(9, ge=1)
    n_lat: int = Field(7, ge=1)
    a_decel_max: float = Field(9.0, ge=0)
    a_accel_max: float = Field(4.5, ge=0)
    a_lat_max: float = Field(7.0, ge=0)
    rules: Optional[dict[ManeuverLabel, RuleModel]] = None
    lookahead_min: float = Field(4.0, gt=0)
    lookahead_gain: float = Field(0.8, ge=0)
    a_lat_comfort: float = Field(4.0, gt=0)
    speed_gain: float = Field(2.0, ge=0)

    @field_validator("n_lon", "n_lat")
    @classmethod
    def _odd(cls, n):
        if n % 2 == 0:
            raise ValueError("sub-hypothesis counts must be odd")
        return n


class ForestModel(_Strict):
    n_trees: int = Field(100, ge=1)
    m_try: Optional[int] = Field(None, ge=1)
    min_leaf: int = Field(1, ge=1)
    seed: int = 0


class RunConfig(_Strict):
    schema_version: Literal[1] = CONFIG_VERSION
    grid: GridModel = GridModel()
    instances: list[float] = [0.5, 1.0, 2.0]
    hypotheses: HypothesisModel = HypothesisModel()
    forest: ForestModel = ForestModel()
    train_fraction: float = Field(2.0 / 3.0, gt=0, lt=1)
    seed: int = 0
    grid_format: Literal["binary", "text"] = "binary"

    @field_validator("instances")
    @classmethod
    def _increasing(cls, ts):
        if not ts:
            raise ValueError("at least one prediction instance is required")
        if ts[0] <= 0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("instances must be positive and strictly increasing")
        if any(abs(t * 100 - round(t * 100)) > 1e-9 for t in ts):
            raise ValueError("instances must be multiples of the 0.01 s integration step")
        return ts

    def grid_spec(self) -> GridSpec:
        return GridSpec(**self.grid.model_dump())

    def hypothesis_config(self) -> HypothesisConfig:
        h = self.hypotheses
        rules = default_rules()
        if h.rules is not None:
            rules = {label: MainRule(r.base, tuple(RuleTerm(**t.model_dump()) for t in r.terms))
                     for label, r in h.rules.items()}
        return HypothesisConfig(h.n_lon, h.n_lat, h.a_decel_max, h.a_accel_max, h.a_lat_max, rules,
                                lookahead_min=h.lookahead_min, lookahead_gain=h.lookahead_gain,
                                a_lat_comfort=h.a_lat_comfort, speed_gain=h.speed_gain)

    def forest_config(self) -> ForestConfig:
        return ForestConfig(**self.forest.model_dump())

    def canonical(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def dumps(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=1, sort_keys=True) + "\n"


def load_config(path) -> RunConfig:
    return load_validated(path, RunConfig)


def with_overrides(config: RunConfig, assignments) -> RunConfig:
    """Apply ``dotted.key=json`` overrides and revalidate."""
    data = copy.deepcopy(config.model_dump(mode="json"))
    for item in assignments or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
            node = node[p]
        node[parts[-1]] = value
    return validate(data, RunConfig, "<overrides>")


def desk_config(seed: int = 0) -> RunConfig:
    """Reduced intersection experiment: 20 x 20 cells of 2 m, coarser sub-hypothesis grid."""
    return RunConfig(grid=GridModel(x0=0.0, y0=0.0, cell_length=2.0, cell_width=2.0, I=20, J=20),
                     hypotheses=HypothesisModel(n_lon=5, n_lat=3),
                     forest=ForestModel(n_trees=50, seed=seed), seed=seed)


def poc_config(seed: int = 0) -> RunConfig:
    """Single car on a straight road, one instance, no sub-hypotheses."""
    return RunConfig(grid=GridModel(x0=0.0, y0=-5.0, I=60, J=20), instances=[1.0],
                     hypotheses=HypothesisModel(n_lon=1, n_lat=1),
                     forest=ForestModel(n_trees=50, seed=seed), seed=seed)
