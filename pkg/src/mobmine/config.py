"""Pipeline configuration: one dataclass per stage, stored as a sectioned key=value file."""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
from dataclasses import dataclass, field

from .anonymizer.kanon import KAnonConfig
from .attack import AttackConfig
from .errors import InvalidConfig
from .routeminer import RouteConfig
from .synthnet import NetworkConfig, PopulationConfig, SimConfig
from .timegeo import TimeGeoConfig


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    zones: str = ""          # optional zones.csv; empty means Location Areas
    order: str = "mine-first"


@dataclass
class ODConfig:
    bucket_s: int = 3600


@dataclass
class BaselineConfig:
    density_bucket_s: int = 3600
    rotate_period_s: float = 86400.0
    cloak_min_users: int = 5
    cloak_grid: int = 6
    synthetic_agents: int = 1000


SECTIONS = {
    "run": RunConfig,
    "network": NetworkConfig,
    "population": PopulationConfig,
    "sim": SimConfig,
    "timegeo": TimeGeoConfig,
    "routes": RouteConfig,
    "kanon": KAnonConfig,
    "od": ODConfig,
    "attack": AttackConfig,
    "baselines": BaselineConfig,
}


@dataclass
class PipelineConfig:
    run: RunConfig = field(default_factory=RunConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    timegeo: TimeGeoConfig = field(default_factory=TimeGeoConfig)
    routes: RouteConfig = field(default_factory=RouteConfig)
    kanon: KAnonConfig = field(default_factory=KAnonConfig)
    od: ODConfig = field(default_factory=ODConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)

    def update(self, section: str, **values) -> None:
        """Replace fields of one section (works for frozen section types too)."""
        current = getattr(self, section)
        setattr(self, section, dataclasses.replace(current, **values))

    def validate(self) -> "PipelineConfig":
        self.routes.validate()
        self.kanon.validate()
        if self.run.order not in ("mine-first", "anonymize-first"):
            raise InvalidConfig("order must be mine-first or anonymize-first")
        if self.run.threads < 1:
            raise InvalidConfig("threads must be >= 1")
        if self.od.bucket_s <= 0:
            raise InvalidConfig("od bucket_s must be positive")
        return self

    def as_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}


def _encode(value) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, sort_keys=True)


def _decode(text: str, default, where: str):
    if isinstance(default, str):
        return text
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        raise InvalidConfig(f"{where}: cannot parse {text!r}") from None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidConfig(f"{where}: expected true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfig(f"{where}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfig(f"{where}: expected a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise InvalidConfig(f"{where}: expected a list")
        return tuple(value)
    return value


def dumps(cfg: PipelineConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in SECTIONS:
        section = getattr(cfg, name)
        parser[name] = {f.name: _encode(getattr(section, f.name)) for f in dataclasses.fields(section)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def loads(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidConfig(f"config file: {exc}") from None
    cfg = PipelineConfig()
    for name in parser.sections():
        if name not in SECTIONS:
            raise InvalidConfig(f"unknown config section [{name}]")
        current = getattr(cfg, name)
        defaults = {f.name: getattr(current, f.name) for f in dataclasses.fields(current)}
        values = {}
        for key, raw in parser[name].items():
            if key not in defaults:
                raise InvalidConfig(f"unknown key {key!r} in [{name}]")
            values[key] = _decode(raw, defaults[key], f"[{name}] {key}")
        cfg.update(name, **values)
    return cfg


def load(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def dump(cfg: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))
