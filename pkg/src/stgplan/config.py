"""INI configuration for planner, network, potentials and generated-scenario regulations.

Every key is optional; missing keys keep the dataclass defaults::

    [plan]
    horizon = 50
    t_s = 0.1
    iters = 200
    lr = 0.01
    seed = 0
    warm_start = false

    [network]
    r = 8
    hidden = 64
    n_v = 5
    aggregator = attention

    [potential]
    b1 = 1.0
    ...

    [safety]
    s_safe = 10.0
    a_max_long = 2.0
    ...
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields, replace

from .behavior import SafetyParams
from .gatnet import NetworkConfig
from .planner import PlanConfig
from .potential import PotentialParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Settings:
    plan: PlanConfig = PlanConfig()
    safety: SafetyParams = SafetyParams()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, obj: dict) -> "Settings":
        p = dict(obj["plan"])
        net = NetworkConfig(**p.pop("network"))
        pot = PotentialParams(**p.pop("potential"))
        return cls(PlanConfig(network=net, potential=pot, **p), SafetyParams(**obj["safety"]))


def _coerce(cls, section: configparser.SectionProxy | None, base):
    if section is None:
        return base
    known = {f.name: f for f in fields(cls)}
    values = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown key [{section.name}] {key}")
        current = getattr(base, key)
        try:
            if isinstance(current, bool):
                values[key] = section.getboolean(key)
            elif isinstance(current, int):
                values[key] = int(raw)
            elif isinstance(current, float) or current is None:
                values[key] = None if raw.strip().lower() in ("", "none") else float(raw)
            else:
                values[key] = raw.strip()
        except ValueError as exc:
            raise ConfigError(f"bad value for [{section.name}] {key}: {raw!r}") from exc
    try:
        return replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, text: str | None = None) -> Settings:
    parser = configparser.ConfigParser()
    if path is not None:
        with open(path) as fh:
            parser.read_file(fh)
    elif text is not None:
        parser.read_string(text)
    for name in parser.sections():
        if name not in ("plan", "network", "potential", "safety"):
            raise ConfigError(f"unknown section [{name}]")
    get = lambda name: parser[name] if parser.has_section(name) else None
    base = PlanConfig()
    net = _coerce(NetworkConfig, get("network"), base.network)
    pot = _coerce(PotentialParams, get("potential"), base.potential)
    plan = _coerce(PlanConfig, get("plan"), replace(base, network=net, potential=pot))
    safety = _coerce(SafetyParams, get("safety"), SafetyParams())
    return Settings(plan, safety)
